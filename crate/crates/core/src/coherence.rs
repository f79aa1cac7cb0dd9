//! Mutual coherence of sensing matrices, the far-field closed forms, and the
//! product and perturbation upper bounds.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Result, ScatterError};
use crate::forward::{born_propagator, BornOrder, Coupling, CouplingConvention, SparseDiagonal};
use crate::geometry::{distance, Point3, WAVENUMBER};
use crate::linalg::{dot_conj, vec_norm, ComplexMatrix, C64};

/// Upper bound value after clamping at 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundValue {
    pub value: f64,
    pub clamped: bool,
}

impl BoundValue {
    pub fn clamp(raw: f64) -> Self {
        if raw > 1.0 || raw.is_nan() {
            Self {
                value: 1.0,
                clamped: true,
            }
        } else {
            Self {
                value: raw,
                clamped: false,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundEntry {
    pub name: String,
    pub value: f64,
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceReport {
    pub mu_exact: f64,
    /// Lexicographically smallest pair attaining the maximum.
    pub argmax_pair: (usize, usize),
    pub bound_chain: Vec<BoundEntry>,
}

impl CoherenceReport {
    pub fn push_bound(&mut self, name: impl Into<String>, bound: BoundValue) {
        self.bound_chain.push(BoundEntry {
            name: name.into(),
            value: bound.value,
            clamped: bound.clamped,
        });
    }
}

/// Columns of `m` scaled to unit norm, stored one after another.
fn unit_columns(m: &ComplexMatrix) -> Result<Vec<C64>> {
    let (rows, cols) = m.shape();
    let mut out = vec![C64::new(0.0, 0.0); rows * cols];
    for i in 0..rows {
        for (j, x) in m.row(i).iter().enumerate() {
            out[j * rows + i] = *x;
        }
    }
    for j in 0..cols {
        let col = &mut out[j * rows..(j + 1) * rows];
        let n = vec_norm(col);
        if !(n > 0.0) || !n.is_finite() {
            return Err(ScatterError::invalid(format!("column {j} is zero")));
        }
        for x in col {
            *x /= n;
        }
    }
    Ok(out)
}

/// `max_{j≠k} |⟨M_j, M_k⟩| / (‖M_j‖ ‖M_k‖)`.
pub fn mutual_coherence(m: &ComplexMatrix) -> Result<CoherenceReport> {
    let (rows, cols) = m.shape();
    if cols < 2 {
        return Err(ScatterError::UndefinedCoherence(format!(
            "need at least two columns, got {cols}"
        )));
    }
    let u = unit_columns(m)?;
    let mut best = -1.0;
    let mut pair = (0, 1);
    for j in 0..cols {
        let cj = &u[j * rows..(j + 1) * rows];
        for k in (j + 1)..cols {
            let g = dot_conj(cj, &u[k * rows..(k + 1) * rows]).norm();
            if g > best {
                best = g;
                pair = (j, k);
            }
        }
    }
    Ok(CoherenceReport {
        mu_exact: best.min(1.0),
        argmax_pair: pair,
        bound_chain: Vec::new(),
    })
}

/// Coherence read off a Gram matrix `G = M^*M`.
pub fn gram_coherence(g: &ComplexMatrix) -> Result<CoherenceReport> {
    if !g.is_square() {
        return Err(ScatterError::invalid("Gram matrix must be square"));
    }
    let n = g.rows();
    if n < 2 {
        return Err(ScatterError::UndefinedCoherence(format!(
            "need at least two columns, got {n}"
        )));
    }
    let d: Vec<f64> = (0..n).map(|j| g[(j, j)].re).collect();
    if let Some(j) = d.iter().position(|x| !(*x > 0.0)) {
        return Err(ScatterError::invalid(format!("column {j} is zero")));
    }
    let mut best = -1.0;
    let mut pair = (0, 1);
    for j in 0..n {
        for k in (j + 1)..n {
            let v = g[(j, k)].norm() / libm::sqrt(d[j] * d[k]);
            if v > best {
                best = v;
                pair = (j, k);
            }
        }
    }
    Ok(CoherenceReport {
        mu_exact: best.min(1.0),
        argmax_pair: pair,
        bound_chain: Vec::new(),
    })
}

/// `μ(A) · μ(B^*)`.
pub fn coherence_factored(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    let mu_a = mutual_coherence(a)?.mu_exact;
    let mu_b = mutual_coherence(&b.adjoint())?.mu_exact;
    Ok(mu_a * mu_b)
}

/// Exact coherence of `Φ` with `Φ_{(mn), j} = A_{mj} B_{jn}`, from the Gram
/// matrix `(A^*A) ∘ (BB^*)^T`.
pub fn hadamard_coherence(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<CoherenceReport> {
    let ga = a.adjoint_matmul(a)?;
    let gb = b.matmul_adjoint(b)?;
    let n = ga.rows();
    if gb.rows() != n {
        return Err(ScatterError::shape("A and B disagree on the voxel count"));
    }
    gram_coherence(&ComplexMatrix::from_fn(n, n, |j, k| ga[(j, k)] * gb[(k, j)]))
}

/// `(μ(H) + q μ(A)) / |1 − q μ(A)|`, clamped at 1.
pub fn product_coherence_bound(mu_h: f64, mu_a: f64, q: usize) -> Result<BoundValue> {
    let qa = q as f64 * mu_a;
    let denom = (1.0 - qa).abs();
    if denom == 0.0 {
        return Err(ScatterError::DegenerateBound(format!(
            "q·μ(A) = {qa} makes the denominator vanish"
        )));
    }
    Ok(BoundValue::clamp((mu_h + qa) / denom))
}

/// Bound on `μ(I + VG)` with `δ = ‖VG‖_max`:
/// `(2δ + (s−2)δ²) / (1 + (s−1)δ)`.
pub fn perturbation_inner_bound(delta: f64, s: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(ScatterError::Precondition(format!("δ must lie in [0, 1), got {delta}")));
    }
    if s == 0 {
        return Err(ScatterError::invalid("sparsity must be at least 1"));
    }
    let s = s as f64;
    Ok((2.0 * delta + (s - 2.0) * delta * delta) / (1.0 + (s - 1.0) * delta))
}

/// Bound on `μ(A(I + VG))`: the inner bound combined with `(s+1) μ(A)`.
///
/// With `δ = 0` the product is `A` itself and `μ(A)` is returned.
pub fn perturbation_coherence_bound(delta: f64, s: usize, mu_a: f64) -> Result<BoundValue> {
    let inner = perturbation_inner_bound(delta, s)?;
    if delta == 0.0 {
        return Ok(BoundValue::clamp(mu_a));
    }
    product_coherence_bound(inner, mu_a, s + 1)
}

/// `|sin(kh) / (kh)|`, the continuum-limit far-field coherence.
pub fn farfield_coherence_analytic(kh: f64) -> f64 {
    sinc(kh).abs()
}

#[inline]
pub(crate) fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        libm::sin(x) / x
    }
}

/// Continuum-limit coherence of `A(I + VΓ)` for one scatterer at `r_*`.
///
/// Column `j` of the linearized operator is `A_j + a_j A_*` with
/// `a_j = c exp(ik ρ_j) / ρ_j`, `ρ_j = |r_j − r_*|` and `c` the scatterer
/// strength times the Green's function prefactor. Averaging over all
/// directions turns every inner product of plane-wave columns into
/// `S(d) = sin(kd)/(kd)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingleScatterer {
    /// `c = k²h³η₀ / (4π)` in the Helmholtz convention.
    pub strength: f64,
    pub k: f64,
    pub h: f64,
}

impl SingleScatterer {
    pub fn new(eta0: f64, h: f64, convention: CouplingConvention) -> Result<Self> {
        if !(h > 0.0) {
            return Err(ScatterError::invalid(format!("spacing must be positive, got {h}")));
        }
        let k = WAVENUMBER;
        let strength = k * k * h * h * h * eta0 * convention.potential_scale() / (4.0 * PI);
        Ok(Self { strength, k, h })
    }

    pub fn kh(&self) -> f64 {
        self.k * self.h
    }

    fn amplitude(&self, rho: f64) -> C64 {
        let (s, c) = libm::sincos(self.k * rho);
        C64::new(c, s) * (self.strength / rho)
    }

    fn s(&self, d: f64) -> f64 {
        sinc(self.k * d)
    }

    /// Normalized `|⟨F_j, F_ℓ⟩|` for probe voxels `r_j`, `r_ℓ`.
    pub fn pair_coherence(&self, rj: &Point3, rl: &Point3, rstar: &Point3) -> Result<f64> {
        let pj = distance(rj, rstar);
        let pl = distance(rl, rstar);
        if pj == 0.0 || pl == 0.0 {
            return Err(ScatterError::Singularity);
        }
        let (aj, al) = (self.amplitude(pj), self.amplitude(pl));
        let inner = self.s(distance(rj, rl)) + al * self.s(pj) + aj.conj() * self.s(pl) + aj.conj() * al;
        let nj = 1.0 + 2.0 * aj.re * self.s(pj) + aj.norm_sqr();
        let nl = 1.0 + 2.0 * al.re * self.s(pl) + al.norm_sqr();
        Ok(inner.norm() / libm::sqrt(nj * nl))
    }

    /// Coherence on the probe family `|r_j − r_ℓ| = h`, `ρ_j = ρ_ℓ = ρ`.
    pub fn probe_coherence(&self, rho: f64) -> f64 {
        let kr = self.k * rho;
        let c = self.strength;
        let x = c * libm::sin(2.0 * kr) / (self.k * rho * rho) + c * c / (rho * rho);
        ((self.s(self.h) + x) / (1.0 + x)).abs()
    }

    /// Curve samples `(ρ, μ(ρ))`.
    pub fn curve(&self, rhos: &[f64]) -> Vec<(f64, f64)> {
        rhos.iter().map(|&r| (r, self.probe_coherence(r))).collect()
    }

    /// Maximum of the probe curve over `ρ ∈ [h, rho_max]`, as `(ρ*, μ*)`.
    pub fn maximum(&self, rho_max: f64) -> Result<(f64, f64)> {
        if !(rho_max >= self.h) {
            return Err(ScatterError::invalid("search range must include ρ = h"));
        }
        let samples = 4000;
        let step = (rho_max - self.h) / samples as f64;
        let mut best = (self.h, self.probe_coherence(self.h));
        for i in 1..=samples {
            let r = self.h + step * i as f64;
            let m = self.probe_coherence(r);
            if m > best.1 {
                best = (r, m);
            }
        }
        if step == 0.0 {
            return Ok(best);
        }
        // golden-section refinement inside the bracketing cell
        let (mut lo, mut hi) = ((best.0 - step).max(self.h), (best.0 + step).min(rho_max));
        let g = 0.5 * (libm::sqrt(5.0) - 1.0);
        for _ in 0..100 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if self.probe_coherence(a) >= self.probe_coherence(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let r = 0.5 * (lo + hi);
        let m = self.probe_coherence(r);
        Ok(if m > best.1 { (r, m) } else { best })
    }
}

/// Exact coherence of `A Σ_{m<M}(VΓ)^m` (or `A (I − VΓ)^{-1}`).
pub fn linearized_coherence_numeric<G: Coupling + ?Sized>(
    a: &ComplexMatrix,
    v: &SparseDiagonal,
    gamma: &G,
    order: BornOrder,
) -> Result<CoherenceReport> {
    mutual_coherence(&linearized_operator(a, v, gamma, order)?)
}

/// `A Σ_{m<M}(VΓ)^m`, touching only the support rows of the propagator.
pub fn linearized_operator<G: Coupling + ?Sized>(
    a: &ComplexMatrix,
    v: &SparseDiagonal,
    gamma: &G,
    order: BornOrder,
) -> Result<ComplexMatrix> {
    if a.cols() != v.dim() {
        return Err(ScatterError::shape("A and V disagree on the voxel count"));
    }
    let s = v.support();
    if s.is_empty() || order.validate()?.is_linear() {
        return Ok(a.clone());
    }
    let p = born_propagator(v, gamma, order)?;
    let rows = p.select_rows(s);
    let mut out = a.clone();
    // A P = A + A_S (P_S − E_S)
    let mut delta_rows = rows;
    for (r, &i) in s.iter().enumerate() {
        delta_rows[(r, i)] -= C64::new(1.0, 0.0);
    }
    out.add_assign(&a.select_columns(s).matmul(&delta_rows)?)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{assemble_operators, PotentialField};
    use crate::geometry::{sphere_directions, Coverage, VoxelGrid};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn orthonormal_and_repeated_columns() {
        let r = mutual_coherence(&ComplexMatrix::identity(4)).unwrap();
        assert_eq!(r.mu_exact, 0.0);
        assert_eq!(r.argmax_pair, (0, 1));
        let m = ComplexMatrix::from_fn(3, 3, |i, j| if j == 2 { c(i as f64, 1.0) } else { c(i as f64, 1.0) * 2.0 });
        let r = mutual_coherence(&m).unwrap();
        assert!((r.mu_exact - 1.0).abs() < 1e-15);
        assert!(matches!(
            mutual_coherence(&ComplexMatrix::zeros(3, 1)),
            Err(ScatterError::UndefinedCoherence(_))
        ));
        assert!(mutual_coherence(&ComplexMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn single_source_direction_gives_mu_a() {
        let grid = VoxelGrid::new(1.0, 3).unwrap();
        let d = sphere_directions(10, Coverage::FullSphere).unwrap();
        let ops = assemble_operators(&grid, &d, &d).unwrap();
        let ones = ComplexMatrix::from_fn(grid.len(), 1, |_, _| c(1.0, 0.0));
        let exact = hadamard_coherence(&ops.a, &ones).unwrap().mu_exact;
        let mu_a = mutual_coherence(&ops.a).unwrap().mu_exact;
        assert!((exact - mu_a).abs() < 1e-12);
        let f = coherence_factored(&ops.a, &ops.b).unwrap();
        assert!((f - mu_a * mu_a).abs() < 1e-12);
    }

    #[test]
    fn product_bound_examples() {
        assert_eq!(product_coherence_bound(0.0, 0.0, 5).unwrap().value, 0.0);
        let b = product_coherence_bound(0.1, 0.05, 3).unwrap();
        assert!((b.value - 0.25 / 0.85).abs() < 1e-15 && !b.clamped);
        let b = product_coherence_bound(0.9, 0.2, 4).unwrap();
        assert_eq!(b, BoundValue { value: 1.0, clamped: true });
        assert!(matches!(
            product_coherence_bound(0.1, 0.25, 4),
            Err(ScatterError::DegenerateBound(_))
        ));
    }

    #[test]
    fn perturbation_bound_examples() {
        assert_eq!(perturbation_inner_bound(0.0, 4).unwrap(), 0.0);
        assert!((perturbation_inner_bound(0.3, 1).unwrap() - 0.51).abs() < 1e-15);
        assert!(perturbation_inner_bound(1.0, 2).is_err());
        let b = perturbation_coherence_bound(0.05, 3, 0.505).unwrap();
        assert!(b.clamped && b.value == 1.0);
        assert_eq!(perturbation_coherence_bound(0.0, 3, 0.2).unwrap().value, 0.2);
    }

    #[test]
    fn sinc_references() {
        assert!((farfield_coherence_analytic(1.885) - 0.5045).abs() < 5e-4);
        assert!(farfield_coherence_analytic(PI) < 1e-15);
        assert!((farfield_coherence_analytic(2.98) - 0.0542).abs() < 5e-4);
    }

    #[test]
    fn zero_strength_curve_is_flat_sinc() {
        let ss = SingleScatterer::new(0.0, 0.3, CouplingConvention::Helmholtz).unwrap();
        for (_, m) in ss.curve(&[0.3, 0.45, 1.0, 2.7]) {
            assert!((m - farfield_coherence_analytic(ss.kh())).abs() < 1e-15);
        }
    }

    #[test]
    fn probe_curve_matches_general_pair_formula() {
        let ss = SingleScatterer::new(0.1, 0.3, CouplingConvention::PointScatterer).unwrap();
        let rho: f64 = 0.55;
        let half = 0.15;
        let y = libm::sqrt(rho * rho - half * half);
        let star = [0.0, 0.0, 0.0];
        let pair = ss.pair_coherence(&[-half, y, 0.0], &[half, y, 0.0], &star).unwrap();
        assert!((pair - ss.probe_coherence(rho)).abs() < 1e-14);
        assert_eq!(ss.pair_coherence(&star, &[1.0, 0.0, 0.0], &star), Err(ScatterError::Singularity));
    }

    #[test]
    fn linearized_operator_matches_dense_product() {
        let grid = VoxelGrid::new(1.0, 3).unwrap();
        let d = sphere_directions(6, Coverage::FullSphere).unwrap();
        let ops = assemble_operators(&grid, &d, &d).unwrap();
        let v = PotentialField::new(&grid, vec![3, 11, 20], vec![c(2.0, 0.0), c(1.0, 1.0), c(0.5, 0.0)])
            .unwrap()
            .strengths(&grid)
            .unwrap();
        for order in [BornOrder::Finite(2), BornOrder::Finite(3), BornOrder::Infinite] {
            let fast = linearized_operator(&ops.a, &v, &ops.gamma, order).unwrap();
            let dense = ops.a.matmul(&born_propagator(&v, &ops.gamma, order).unwrap()).unwrap();
            assert!(fast.sub(&dense).unwrap().max_norm() < 1e-13);
        }
        let zero = SparseDiagonal::zeros(grid.len());
        let r = linearized_coherence_numeric(&ops.a, &zero, &ops.gamma, BornOrder::Infinite).unwrap();
        assert_eq!(r.mu_exact, mutual_coherence(&ops.a).unwrap().mu_exact);
    }
}
