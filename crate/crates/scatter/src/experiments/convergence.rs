use std::path::Path;

use serde::Serialize;
use serde_json::json;

use scatter_core::bounds::{full_nonlinear_bound, linear_bound, second_born_bound, BoundInputs, BoundTrace};
use scatter_core::coherence::mutual_coherence;
use scatter_core::forward::{add_noise, coupling_norms, forward_full, BornOrder, GreenCoupling, SparseDiagonal};
use scatter_core::iht::{IhtConfig, IhtSolver};
use scatter_core::models::{build_model, ScattererModel};
use scatter_core::{ComplexMatrix, ScatterError};

use super::{stream_seed, Instrument, Outputs};
use crate::config::ExperimentConfig;
use crate::error::AppResult;
use crate::formats::{save_bound_trace, save_trace, BoundInputsJson, BoundSummary};

/// One simulated reconstruction. Errors are `‖v̂_n − v̂‖₁` in normalized
/// units, the units the bounds are stated in.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRun {
    pub order: BornOrder,
    pub errors: Vec<f64>,
    pub exact_support: bool,
    /// Set when the run stopped early.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundOutcome {
    pub name: String,
    pub order: BornOrder,
    pub trace: Option<BoundTrace>,
    /// Why no trace exists (a violated precondition).
    pub error: Option<String>,
    /// The bound is at least the simulated error at every recorded iteration.
    pub dominates: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceResult {
    pub mu_a: f64,
    pub mu_bstar: f64,
    pub delta: f64,
    pub gamma: f64,
    /// `‖v̂‖_∞`
    pub v_inf: f64,
    pub support: Vec<usize>,
    pub runs: Vec<ConvergenceRun>,
    pub bounds: Vec<BoundOutcome>,
}

impl ConvergenceResult {
    pub fn run(&self, order: BornOrder) -> Option<&ConvergenceRun> {
        self.runs.iter().find(|r| r.order == order)
    }

    pub fn bound(&self, name: &str) -> Option<&BoundOutcome> {
        self.bounds.iter().find(|b| b.name == name)
    }
}

#[derive(Serialize)]
struct Row {
    iter: usize,
    order: String,
    error_l1: f64,
    bound_l1: Option<f64>,
}

fn order_label(o: BornOrder) -> String {
    match o {
        BornOrder::Finite(m) => format!("M{m}"),
        BornOrder::Infinite => "Minf".into(),
    }
}

fn theorem_for(order: BornOrder) -> Option<&'static str> {
    match order {
        BornOrder::Finite(1) => Some("linear"),
        BornOrder::Finite(2) => Some("second_born"),
        BornOrder::Infinite => Some("full_nonlinear"),
        _ => None,
    }
}

/// Simulated IHT error curves for several Born orders next to the matching
/// convergence bounds, evaluated with the measured coherences, the coupling
/// norms of the instance and those of each iterate.
pub fn run_convergence_comparison(cfg: &ExperimentConfig, out_dir: &Path) -> AppResult<ConvergenceResult> {
    let id = cfg.id()?;
    let inst = Instrument::new(&cfg.grid, cfg.measurements, cfg.sources, cfg.coverage)?;
    let grid = &inst.grid;
    let gamma = GreenCoupling::new(grid);
    let s = cfg.sparsity[0];
    let seed = stream_seed(cfg.seed, id, "", 0);
    let pot = build_model(&ScattererModel::RandomVoxels { count: s, eta0: cfg.eta0[0], seed }, grid)?;
    let truth = pot.strengths_with(grid, cfg.convention.into())?;
    let clean = forward_full(&inst.a, &truth, &gamma, &inst.b)?;
    let noisy = add_noise(&clean, cfg.noise_level, scatter_core::seeding::splitmix64(seed))?;
    let noise = noisy.data.sub(&clean)?;

    let mu_a = mutual_coherence(&inst.a)?.mu_exact;
    let mu_bstar = mutual_coherence(&inst.b.adjoint())?.mu_exact;
    let (delta, gamma1) = coupling_norms(&truth, &gamma);

    let mut solver = IhtSolver::new(&inst.a, &inst.b, Some(&gamma))?;
    let truth_hat = solver.operators().to_normalized(&truth);
    let v_inf = truth_hat.max_abs();
    let v0_err = SparseDiagonal::zeros(truth.dim()).l1_distance(&truth_hat);
    let mut data = solver.prepare(&noisy.data)?;
    let mut noise_data = solver.prepare(&noise)?;
    let threshold = cfg.threshold.unwrap_or(s);

    let mut out = Outputs::new(out_dir)?;
    let mut runs = Vec::new();
    let mut bounds = Vec::new();
    let mut rows = Vec::new();
    for order in cfg.born_orders.iter().map(|o| o.0) {
        let run_cfg = IhtConfig::new(threshold, order).with_max_iter(cfg.iterations);
        let (records, failure) = match solver.run(&mut data, &run_cfg, Some(&truth)) {
            Ok(trace) => {
                save_trace(&out.file(&format!("trace_{}.csv", order_label(order))), &trace)?;
                (trace.records, None)
            }
            Err(e) => (Vec::new(), Some(e.to_string())),
        };
        let iterates: Vec<SparseDiagonal> = records.iter().map(|r| r.v.clone()).collect();
        let errors: Vec<f64> = iterates
            .iter()
            .map(|v| solver.operators().to_normalized(v).l1_distance(&truth_hat))
            .collect();
        let exact_support = iterates.last().is_some_and(|v| v.support() == truth.support());

        if let Some(name) = theorem_for(order) {
            // the bound on v_n uses the iterate V_{n−1}
            let mut delta_n = Vec::new();
            let mut gamma_n = Vec::new();
            let mut noise_n = Vec::new();
            for v in iterates.iter().take(cfg.iterations) {
                let (d, g) = coupling_norms(v, &gamma);
                delta_n.push(d);
                gamma_n.push(g);
                noise_n.push(noise_term(&mut solver, &mut noise_data, &noise, v, order)?);
            }
            let inputs = BoundInputs {
                mu_a,
                mu_bstar,
                s,
                delta,
                gamma: gamma1,
                delta_n,
                gamma_n,
                v_inf,
                v0_err,
                noise: noise_n,
                iterations: cfg.iterations,
            };
            let computed = match name {
                "linear" => linear_bound(&inputs),
                "second_born" => second_born_bound(&inputs),
                _ => full_nonlinear_bound(&inputs),
            };
            let outcome = match computed {
                Ok(trace) => {
                    let dominates = errors
                        .iter()
                        .enumerate()
                        .all(|(n, e)| trace.bound_at(n) >= *e * (1.0 - 1e-12));
                    save_bound_trace(&out.file(&format!("bound_{name}.csv")), &trace)?;
                    BoundOutcome {
                        name: name.into(),
                        order,
                        trace: Some(trace),
                        error: None,
                        dominates: dominates && !errors.is_empty(),
                    }
                }
                Err(e) => BoundOutcome {
                    name: name.into(),
                    order,
                    trace: None,
                    error: Some(e.to_string()),
                    dominates: false,
                },
            };
            for (n, e) in errors.iter().enumerate() {
                rows.push(Row {
                    iter: n,
                    order: order.to_string(),
                    error_l1: *e,
                    bound_l1: outcome.trace.as_ref().map(|t| t.bound_at(n)),
                });
            }
            bounds.push((outcome, inputs));
        } else {
            for (n, e) in errors.iter().enumerate() {
                rows.push(Row {
                    iter: n,
                    order: order.to_string(),
                    error_l1: *e,
                    bound_l1: None,
                });
            }
        }
        runs.push(ConvergenceRun {
            order,
            errors,
            exact_support,
            failure,
        });
    }
    out.write_csv("convergence.csv", &rows)?;

    let bound_json: Vec<_> = bounds
        .iter()
        .map(|(b, inputs)| {
            json!({
                "name": b.name,
                "order": b.order.to_string(),
                "summary": b.trace.as_ref().map(BoundSummary::from),
                "error": b.error,
                "dominates": b.dominates,
                "inputs": BoundInputsJson::from(inputs),
            })
        })
        .collect();
    let constants = json!({
        "mu_a": mu_a,
        "mu_bstar": mu_bstar,
        "delta": delta,
        "gamma": gamma1,
        "v_inf": v_inf,
        "v0_err": v0_err,
        "s": s,
        "kh": grid.kh(),
        "support": truth.support(),
        "bounds": bound_json,
        "runs": runs.iter().map(|r| json!({
            "order": r.order.to_string(),
            "final_error": r.errors.last(),
            "exact_support": r.exact_support,
            "failure": r.failure,
        })).collect::<Vec<_>>(),
    });
    crate::formats::save_json(&out.file("bounds.json"), &constants)?;
    out.finish(cfg, id, constants)?;

    Ok(ConvergenceResult {
        mu_a,
        mu_bstar,
        delta,
        gamma: gamma1,
        v_inf,
        support: truth.support().to_vec(),
        runs,
        bounds: bounds.into_iter().map(|(b, _)| b).collect(),
    })
}

/// `‖D(Ã_n^* E B̂^*)‖_∞` for the noise `E`, with `Ã_n` built from the physical
/// iterate `v`.
fn noise_term(
    solver: &mut IhtSolver<'_, GreenCoupling<'_>>,
    noise_data: &mut scatter_core::iht::PreparedData,
    noise: &ComplexMatrix,
    v: &SparseDiagonal,
    order: BornOrder,
) -> Result<f64, ScatterError> {
    if noise.frobenius_norm() == 0.0 {
        return Ok(0.0);
    }
    let v_hat = solver.operators().to_normalized(v);
    let back = solver.backprojection(noise_data, &v_hat, order)?;
    Ok(back.iter().map(|z| z.norm()).fold(0.0, f64::max))
}
