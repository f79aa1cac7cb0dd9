use proptest::prelude::*;
use scatter_core::bounds::{full_nonlinear_bound, generic_bound, linear_bound, rip_constants, second_born_bound, BoundInputs};
use scatter_core::coherence::mutual_coherence;
use scatter_core::forward::{coupling_matrix, SparseDiagonal};
use scatter_core::geometry::{distance, sphere_directions, Coverage, VoxelGrid};
use scatter_core::iht::{hard_threshold, largest_indices};
use scatter_core::{ComplexMatrix, C64};

fn complex() -> impl Strategy<Value = C64> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(re, im)| C64::new(re, im))
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = ComplexMatrix> {
    prop::collection::vec(complex(), rows * cols)
        .prop_map(move |d| ComplexMatrix::from_row_major(rows, cols, d).unwrap())
}

fn normalized_columns(m: &ComplexMatrix) -> ComplexMatrix {
    let norms: Vec<f64> = (0..m.cols())
        .map(|j| m.column(j).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    ComplexMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] / norms[j])
}

fn inputs(mu: f64, delta: f64, s: usize) -> BoundInputs {
    BoundInputs {
        mu_a: mu,
        mu_bstar: mu,
        s,
        delta,
        gamma: 0.2,
        delta_n: vec![delta],
        gamma_n: vec![0.1],
        v_inf: 0.5,
        v0_err: 1.0,
        noise: vec![1e-3],
        iterations: 5,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn threshold_is_a_projection(v in prop::collection::vec(complex(), 1..40), s in 0usize..45) {
        let once = hard_threshold(&v, s);
        prop_assert_eq!(hard_threshold(&once, s), once.clone());
        prop_assert!(once.iter().filter(|z| **z != C64::new(0.0, 0.0)).count() <= s.min(v.len()));
        let kept = largest_indices(&v, s);
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn threshold_error_is_controlled_on_the_union(
        z in prop::collection::vec(complex(), 12),
        truth in prop::collection::vec(complex(), 3),
        picks in prop::sample::subsequence((0..12usize).collect::<Vec<_>>(), 3),
    ) {
        let s = 3;
        let mut v = vec![C64::new(0.0, 0.0); 12];
        for (i, t) in picks.iter().zip(&truth) {
            v[*i] = *t;
        }
        let vn = hard_threshold(&z, s);
        let l1: f64 = vn.iter().zip(&v).map(|(a, b)| (a - b).norm()).sum();
        let sup = (0..12)
            .filter(|&i| vn[i].norm() > 0.0 || v[i].norm() > 0.0)
            .map(|i| (z[i] - v[i]).norm())
            .fold(0.0, f64::max);
        prop_assert!(l1 <= (3 * s + 1) as f64 * sup + 1e-12);
    }

    #[test]
    fn coherence_lies_in_unit_interval(m in matrix(6, 5)) {
        let mu = mutual_coherence(&m).unwrap().mu_exact;
        prop_assert!((0.0..=1.0 + 1e-12).contains(&mu));
    }

    #[test]
    fn coherence_ignores_column_phase_and_scale(
        m in matrix(5, 4),
        phases in prop::collection::vec(0.0f64..std::f64::consts::TAU, 4),
        scales in prop::collection::vec(0.1f64..10.0, 4),
    ) {
        let scaled = ComplexMatrix::from_fn(5, 4, |i, j| m[(i, j)] * C64::from_polar(scales[j], phases[j]));
        let a = mutual_coherence(&m).unwrap().mu_exact;
        let b = mutual_coherence(&scaled).unwrap().mu_exact;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn sampled_supremum_never_exceeds_coherence(
        m in matrix(7, 5),
        xs in prop::collection::vec(prop::collection::vec(complex(), 5), 20),
    ) {
        let a = normalized_columns(&m);
        let mu = mutual_coherence(&a).unwrap().mu_exact;
        let gram = a.adjoint_matmul(&a).unwrap();
        let ratio = |x: &[C64]| {
            let gx = gram.mul_vec(x);
            let num = x.iter().zip(&gx).map(|(xi, gi)| (xi - gi).norm()).fold(0.0, f64::max);
            num / x.iter().map(|z| z.norm()).sum::<f64>()
        };
        for x in &xs {
            if x.iter().any(|z| z.norm() > 0.0) {
                prop_assert!(ratio(x) <= mu * (1.0 + 1e-12));
            }
        }
        // the supremum is attained at a basis vector
        let best = (0..5)
            .map(|j| {
                let mut e = vec![C64::new(0.0, 0.0); 5];
                e[j] = C64::new(1.0, 0.0);
                ratio(&e)
            })
            .fold(0.0, f64::max);
        prop_assert!((best - mu).abs() < 1e-12);
    }

    #[test]
    fn bounds_are_monotone(mu in 0.0f64..0.05, delta in 0.0f64..0.02, s in 1usize..5, dmu in 0.0f64..0.01, dd in 0.0f64..0.01) {
        let rho = |inp: &BoundInputs| {
            [
                second_born_bound(inp).unwrap().max_rho(),
                linear_bound(inp).unwrap().max_rho(),
                full_nonlinear_bound(inp).unwrap().max_rho(),
            ]
        };
        let base = rho(&inputs(mu, delta, s));
        for other in [inputs(mu + dmu, delta, s), inputs(mu, delta + dd, s), inputs(mu, delta, s + 1)] {
            for (b, o) in base.iter().zip(rho(&other)) {
                prop_assert!(o >= *b - 1e-15);
            }
        }
        let mut wider_b = inputs(mu, delta, s);
        wider_b.mu_bstar = mu + dmu;
        wider_b.mu_a = mu + dmu;
        let o = rho(&wider_b);
        prop_assert!(o.iter().zip(&base).all(|(o, b)| *o >= *b - 1e-15));
    }

    #[test]
    fn guaranteed_traces_approach_the_floor(mu in 0.0f64..0.05, s in 1usize..4, cap in 0.0f64..0.1, v0 in 0.0f64..5.0) {
        let t = generic_bound(mu, s, &[cap], v0, 40).unwrap();
        prop_assume!(t.guarantee);
        let gap = |n: usize| (t.bound_at(n) - t.floor).abs();
        for n in 1..=40 {
            prop_assert!(gap(n) <= gap(n - 1) + 1e-12);
        }
    }

    #[test]
    fn rip_constants_stay_ordered(d in 0.0f64..0.99, g in 0.0f64..0.49, v in 0.0f64..2.0) {
        let c = rip_constants(d, g, v).unwrap();
        prop_assert!(c.alpha <= 1.0 && c.beta >= 1.0);
        prop_assert!((c.c - c.beta * v * v).abs() <= 1e-12 * c.c.max(1.0));
        if c.converges {
            prop_assert!(c.alpha > 0.0);
        }
    }

    #[test]
    fn sparse_diagonal_round_trips(v in prop::collection::vec(complex(), 1..20)) {
        let d = SparseDiagonal::from_dense(&v);
        prop_assert_eq!(d.to_dense(), v.clone());
        prop_assert_eq!(SparseDiagonal::from_matrix(&d.to_matrix()).unwrap(), d);
    }
}

#[test]
fn coupling_is_symmetric_with_zero_diagonal() {
    let grid = VoxelGrid::new(1.3, 4).unwrap();
    let g = coupling_matrix(&grid);
    for i in 0..grid.len() {
        assert_eq!(g[(i, i)], C64::new(0.0, 0.0));
        for j in 0..i {
            assert_eq!(g[(i, j)], g[(j, i)]);
            assert!(g[(i, j)].norm() > 0.0);
        }
    }
}

#[test]
fn grid_diameter_and_spacing() {
    for (side, n) in [(1.0, 3usize), (2.5, 4), (0.7, 1)] {
        let grid = VoxelGrid::new(side, n).unwrap();
        let c = grid.centers();
        let mut max = 0.0f64;
        let mut min = f64::INFINITY;
        for i in 0..c.len() {
            for j in 0..i {
                let d = distance(&c[i], &c[j]);
                max = max.max(d);
                min = min.min(d);
            }
        }
        assert!((max - 3f64.sqrt() * (side - grid.spacing())).abs() < 1e-12);
        if n > 1 {
            assert!((min - grid.spacing()).abs() < 1e-12);
        }
    }
}

#[test]
fn rip_boundaries() {
    let zero = rip_constants(0.0, 0.0, 0.0).unwrap();
    assert_eq!((zero.alpha, zero.beta, zero.c), (1.0, 1.0, 0.0));
    assert!(zero.converges);
    // converges iff v_inf² < 1/8
    assert!(rip_constants(0.0, 0.0, (0.125f64).sqrt() * 0.999).unwrap().converges);
    assert!(!rip_constants(0.0, 0.0, (0.125f64).sqrt() * 1.001).unwrap().converges);
    let edge = rip_constants(0.1, 0.5 - 1e-12, 0.0).unwrap();
    assert!(edge.alpha.abs() < 1e-9);
    assert!(!edge.converges);
    assert!(rip_constants(0.1, 0.5, 0.0).is_err());
    assert!(rip_constants(1.0, 0.1, 0.0).is_err());
}

#[test]
fn second_born_reduces_to_generic_without_coupling() {
    let mut inp = inputs(0.04, 0.0, 2);
    inp.delta_n = vec![0.0];
    inp.noise = vec![0.0];
    let sb = second_born_bound(&inp).unwrap();
    let g = generic_bound(inp.mu_a * inp.mu_bstar, inp.s, &[0.0], inp.v0_err, inp.iterations).unwrap();
    for n in 0..=inp.iterations {
        assert!((sb.bound_at(n) - g.bound_at(n)).abs() < 1e-15);
    }
}

#[test]
fn hemisphere_directions_are_unit_and_upper() {
    let d = sphere_directions(225, Coverage::Hemisphere).unwrap();
    for x in d.directions() {
        assert!(x[2] >= 0.0);
        assert!(((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() - 1.0).abs() < 1e-12);
    }
}
