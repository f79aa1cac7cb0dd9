//! Convergence guarantees for linear and nonlinear IHT, evaluated as
//! per-iteration upper bounds on `‖v_n − v‖₁`.
//!
//! Every bound has the shape `b_n = ρ_n b_{n−1} + c_n` with `b_0 = ‖v_0 − v‖₁`.
//! The additive term `c_n` carries the `(3s+1)` factor that multiplies every
//! error contribution in the underlying coherence estimate.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::coherence::perturbation_coherence_bound;
use crate::error::{Result, ScatterError};

/// Quantities entering the bounds.
///
/// The per-iterate sequences are indexed by the iterate the step linearizes
/// about: element `n − 1` (from `V_{n−1}`) feeds the bound on `v_n`. A
/// sequence shorter than the trace repeats its last element, so a single
/// worst-case constant covers every iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundInputs {
    pub mu_a: f64,
    pub mu_bstar: f64,
    pub s: usize,
    /// `‖ΓV‖_max`
    pub delta: f64,
    /// `‖ΓV‖₁`
    pub gamma: f64,
    pub delta_n: Vec<f64>,
    pub gamma_n: Vec<f64>,
    /// `‖v‖_∞`
    pub v_inf: f64,
    /// `‖v_0 − v‖₁`
    pub v0_err: f64,
    /// Estimates of `‖Φ_{v_n}^* ε‖_∞`.
    pub noise: Vec<f64>,
    pub iterations: usize,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        let scalars = [
            ("mu_a", self.mu_a),
            ("mu_bstar", self.mu_bstar),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("v_inf", self.v_inf),
            ("v0_err", self.v0_err),
        ];
        for (name, x) in scalars {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(ScatterError::invalid(format!("{name} must be finite and non-negative, got {x}")));
            }
        }
        for (name, seq) in [("delta_n", &self.delta_n), ("gamma_n", &self.gamma_n), ("noise", &self.noise)] {
            if seq.iter().any(|x| !(*x >= 0.0)) {
                return Err(ScatterError::invalid(format!("{name} entries must be non-negative")));
            }
        }
        if self.s == 0 {
            return Err(ScatterError::invalid("sparsity must be at least 1"));
        }
        Ok(())
    }

    fn require_gamma(&self) -> Result<()> {
        if !(self.gamma < 1.0) {
            return Err(ScatterError::Precondition(format!(
                "‖ΓV‖₁ = {} must be below 1",
                self.gamma
            )));
        }
        Ok(())
    }

    fn factor(&self) -> f64 {
        3.0 * self.s as f64 + 1.0
    }
}

fn at(seq: &[f64], n: usize) -> f64 {
    match seq.len() {
        0 => 0.0,
        len => seq[(n - 1).min(len - 1)],
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundStep {
    pub iter: usize,
    pub bound_l1: f64,
    pub rho: f64,
    pub additive: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundTrace {
    pub name: String,
    pub initial: f64,
    pub steps: Vec<BoundStep>,
    /// Limit of the recursion with the worst contraction and additive term;
    /// infinite without a guarantee.
    pub floor: f64,
    /// Every contraction factor is below 1.
    pub guarantee: bool,
}

impl BoundTrace {
    pub fn bound_at(&self, n: usize) -> f64 {
        if n == 0 {
            self.initial
        } else {
            self.steps[n - 1].bound_l1
        }
    }

    pub fn max_rho(&self) -> f64 {
        self.steps.iter().map(|s| s.rho).fold(0.0, f64::max)
    }
}

fn iterate(
    name: &str,
    initial: f64,
    iterations: usize,
    mut step: impl FnMut(usize) -> (f64, f64),
) -> BoundTrace {
    let mut steps = Vec::with_capacity(iterations);
    let mut b = initial;
    let (mut rho_max, mut add_max) = (0.0f64, 0.0f64);
    for n in 1..=iterations {
        let (rho, additive) = step(n);
        b = rho * b + additive;
        rho_max = rho_max.max(rho);
        add_max = add_max.max(additive);
        steps.push(BoundStep {
            iter: n,
            bound_l1: b,
            rho,
            additive,
        });
    }
    let guarantee = rho_max < 1.0;
    let floor = if guarantee {
        add_max / (1.0 - rho_max)
    } else {
        f64::INFINITY
    };
    BoundTrace {
        name: name.into(),
        initial,
        steps,
        floor,
        guarantee,
    }
}

/// Coherence recursion `b_n = μ₀(3s+1) b_{n−1} + (3s+1) cap_n`.
pub fn generic_bound(mu0: f64, s: usize, error_caps: &[f64], v0_err: f64, iterations: usize) -> Result<BoundTrace> {
    if !(mu0 >= 0.0) {
        return Err(ScatterError::invalid(format!("μ₀ must be non-negative, got {mu0}")));
    }
    if s == 0 {
        return Err(ScatterError::invalid("sparsity must be at least 1"));
    }
    let f = 3.0 * s as f64 + 1.0;
    let rho = mu0 * f;
    Ok(iterate("generic", v0_err, iterations, |n| (rho, f * at(error_caps, n))))
}

/// `μ⁽¹⁾(A)` for a given `δ_n`; saturates at 1 where the estimate breaks down.
pub fn mu_one(delta_n: f64, s: usize, mu_a: f64) -> f64 {
    match perturbation_coherence_bound(delta_n, s, mu_a) {
        Ok(b) => b.value,
        Err(_) => 1.0,
    }
}

/// `(1+(s−1)μ(A))(1+(s−1)μ(B^*))`
fn column_sum_factor(inp: &BoundInputs) -> f64 {
    let sm = inp.s as f64 - 1.0;
    (1.0 + sm * inp.mu_a) * (1.0 + sm * inp.mu_bstar)
}

/// Second Born approximation (`M = 2`).
pub fn second_born_bound(inp: &BoundInputs) -> Result<BoundTrace> {
    inp.validate()?;
    inp.require_gamma()?;
    let f = inp.factor();
    let s = inp.s as f64;
    let model = inp.delta * inp.gamma * column_sum_factor(inp) / (1.0 - inp.gamma) * inp.v_inf;
    Ok(iterate("second_born", inp.v0_err, inp.iterations, |n| {
        let dn = at(&inp.delta_n, n);
        let gn = at(&inp.gamma_n, n);
        let rho = f * (mu_one(dn, inp.s, inp.mu_a) * inp.mu_bstar
            + s * inp.delta * inp.mu_a * (1.0 + s * dn * inp.mu_bstar));
        (rho, f * ((1.0 + gn) * model + at(&inp.noise, n)))
    }))
}

/// Linear IHT on data from the full model.
pub fn linear_bound(inp: &BoundInputs) -> Result<BoundTrace> {
    inp.validate()?;
    inp.require_gamma()?;
    let f = inp.factor();
    let rho = inp.mu_a * inp.mu_bstar * f;
    let model = inp.delta * column_sum_factor(inp) / (1.0 - inp.gamma) * inp.v_inf;
    Ok(iterate("linear", inp.v0_err, inp.iterations, |n| {
        let gn = at(&inp.gamma_n, n);
        (rho, f * ((1.0 + gn) * model + at(&inp.noise, n)))
    }))
}

/// Fully nonlinear (T-matrix) IHT.
pub fn full_nonlinear_bound(inp: &BoundInputs) -> Result<BoundTrace> {
    inp.validate()?;
    inp.require_gamma()?;
    if let Some(g) = inp.gamma_n.iter().find(|g| !(**g < 1.0)) {
        return Err(ScatterError::Precondition(format!("‖ΓV_n‖₁ = {g} must be below 1")));
    }
    if inp.mu_bstar > inp.mu_a {
        return Err(ScatterError::Precondition(format!(
            "μ(B*) = {} must not exceed μ(A) = {}",
            inp.mu_bstar, inp.mu_a
        )));
    }
    let f = inp.factor();
    let s = inp.s as f64;
    Ok(iterate("full_nonlinear", inp.v0_err, inp.iterations, |n| {
        let gn = at(&inp.gamma_n, n);
        let q = 1.0 / (1.0 - gn);
        let rho = f * (inp.mu_bstar + q * q * (1.0 + (s - 1.0) * inp.mu_bstar) * inp.delta / (1.0 - inp.gamma));
        (rho, f * at(&inp.noise, n))
    }))
}

/// Constants of the restricted-isometry convergence statement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RipConstants {
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
    pub converges: bool,
}

pub fn rip_constants(delta_2s: f64, gamma: f64, v_inf: f64) -> Result<RipConstants> {
    if !(0.0..1.0).contains(&delta_2s) {
        return Err(ScatterError::Precondition(format!("δ_2s must lie in [0, 1), got {delta_2s}")));
    }
    if !(0.0..0.5).contains(&gamma) {
        return Err(ScatterError::Precondition(format!("γ must lie in [0, 1/2), got {gamma}")));
    }
    if !(v_inf >= 0.0) {
        return Err(ScatterError::invalid(format!("‖v‖_∞ must be non-negative, got {v_inf}")));
    }
    let lower = (1.0 - 2.0 * gamma) / (1.0 - gamma);
    let a = (1.0 - delta_2s) * lower * lower - 1.0;
    let alpha = 1.0 - a * a;
    let b = (1.0 + delta_2s) / ((1.0 - gamma) * (1.0 - gamma)) - 1.0;
    let beta = 1.0 + b * b;
    let c = beta * v_inf * v_inf;
    let converges = alpha > 0.0 && 2.0 / 3.0 * (1.0 + 4.0 * v_inf * v_inf) < alpha / beta;
    Ok(RipConstants { alpha, beta, c, converges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn inputs() -> BoundInputs {
        BoundInputs {
            mu_a: 0.0525,
            mu_bstar: 0.0525,
            s: 3,
            delta: 0.0395,
            gamma: 0.046,
            delta_n: vec![0.0395],
            gamma_n: vec![0.046],
            v_inf: 1.0,
            v0_err: 3.0,
            noise: vec![0.0],
            iterations: 30,
        }
    }

    #[test]
    fn generic_examples() {
        let t = generic_bound(0.0, 3, &[0.0], 5.0, 4).unwrap();
        assert_eq!(t.bound_at(1), 0.0);
        assert!(t.guarantee);
        let t = generic_bound(0.1, 3, &[0.0], 1.0, 2).unwrap();
        assert!(!t.guarantee);
        let t = generic_bound(0.05, 3, &[2.0], 1.0, 200).unwrap();
        assert!((t.floor - 40.0).abs() < 1e-12);
        assert!((t.bound_at(200) - 40.0).abs() < 1e-9);
    }

    #[test]
    fn second_born_without_scattering_is_generic() {
        let mut inp = inputs();
        inp.delta = 0.0;
        inp.delta_n = vec![0.0];
        inp.noise = vec![0.01, 0.02];
        let sb = second_born_bound(&inp).unwrap();
        let g = generic_bound(inp.mu_a * inp.mu_bstar, 3, &inp.noise, inp.v0_err, 30).unwrap();
        for n in 0..=30 {
            assert!((sb.bound_at(n) - g.bound_at(n)).abs() < 1e-15);
        }
    }

    #[test]
    fn paper_constants_give_guarantees() {
        let inp = inputs();
        assert!(second_born_bound(&inp).unwrap().guarantee);
        assert!((second_born_bound(&inp).unwrap().steps[0].rho - 0.251_773_623_876_437_26).abs() < 1e-12);
        // the full-nonlinear factor depends on γ_n: below 1 at the zero start,
        // above 1 once the iterate couples as strongly as the truth
        let mut start = inputs();
        start.gamma_n = vec![0.0];
        let full = full_nonlinear_bound(&start).unwrap();
        assert!((full.steps[0].rho - 0.982_520_964_360_587).abs() < 1e-12);
        assert!(full.guarantee && full.floor == 0.0);
        let full = full_nonlinear_bound(&inp).unwrap();
        assert!((full.steps[0].rho - 1.027_706_209_275_067_3).abs() < 1e-12);
        assert!(!full.guarantee);
        let lin = linear_bound(&inp).unwrap();
        let sb = second_born_bound(&inp).unwrap();
        assert!(lin.floor > sb.floor);

        let mut two = inputs();
        two.mu_a = 0.098;
        two.mu_bstar = 0.098;
        two.delta = 0.0987;
        two.gamma = 0.1299;
        two.delta_n = vec![0.0987];
        two.gamma_n = vec![0.1299];
        assert!(!second_born_bound(&two).unwrap().guarantee);
        assert!(!full_nonlinear_bound(&two).unwrap().guarantee);
    }

    #[test]
    fn linear_far_field_regime_has_no_guarantee() {
        let mut inp = inputs();
        inp.mu_a = 0.505;
        inp.mu_bstar = 0.505;
        let t = linear_bound(&inp).unwrap();
        assert!((t.steps[0].rho - 0.505 * 0.505 * 10.0).abs() < 1e-12);
        assert!(!t.guarantee);
    }

    #[test]
    fn preconditions_are_named() {
        let mut inp = inputs();
        inp.gamma = 1.0;
        assert!(matches!(second_born_bound(&inp), Err(ScatterError::Precondition(_))));
        let mut inp = inputs();
        inp.gamma_n = vec![0.2, 1.0];
        assert!(matches!(full_nonlinear_bound(&inp), Err(ScatterError::Precondition(_))));
        let mut inp = inputs();
        inp.mu_bstar = 0.06;
        assert!(matches!(full_nonlinear_bound(&inp), Err(ScatterError::Precondition(_))));
    }

    #[test]
    fn full_nonlinear_without_scattering() {
        let mut inp = inputs();
        inp.delta = 0.0;
        let t = full_nonlinear_bound(&inp).unwrap();
        assert!((t.steps[0].rho - 10.0 * 0.0525).abs() < 1e-15);
        inp.delta = 0.0395;
        inp.gamma_n = vec![0.999];
        assert!(!full_nonlinear_bound(&inp).unwrap().guarantee);
    }

    #[test]
    fn rip_examples() {
        let r = rip_constants(0.0, 0.0, 0.3).unwrap();
        assert_eq!((r.alpha, r.beta), (1.0, 1.0));
        assert!(r.converges);
        assert!(!rip_constants(0.0, 0.0, 0.36).unwrap().converges);
        let r = rip_constants(0.1, 0.1, 0.05).unwrap();
        assert!((r.alpha - 0.916_543_209_876_543_3).abs() < 1e-12);
        assert!((r.beta - 1.128_181_679_622_008_8).abs() < 1e-12);
        assert!((r.c - 0.002_820_454_199_055_022_5).abs() < 1e-14);
        assert!(r.converges);
        assert!(rip_constants(0.1, 0.5, 0.05).is_err());
        assert!(!rip_constants(0.1, 0.4999, 0.05).unwrap().converges);
    }
}
