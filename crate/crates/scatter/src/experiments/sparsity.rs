use std::path::Path;

use serde::Serialize;
use serde_json::json;

use scatter_core::coherence::{linearized_coherence_numeric, mutual_coherence};
use scatter_core::forward::{left_coupling_norms, measurement_operator, GreenCoupling};
use scatter_core::models::{build_model, ScattererModel};

use super::{mean_std, stream_seed, Outputs};
use crate::config::{directions, ExperimentConfig, ExperimentId};
use crate::error::AppResult;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparsityRow {
    /// `fixed-eta` or `fixed-coupling`
    pub regime: String,
    pub s: usize,
    pub order: String,
    pub mean: f64,
    pub std: f64,
    pub realizations: usize,
    /// Mean contrast used; varies with the realization in the fixed-coupling
    /// regime.
    pub eta0_mean: f64,
}

/// Coherence of the linearized operators for `s` random scatterers, at fixed
/// contrast and at fixed `‖VΓ‖₁`.
pub fn run_coherence_vs_sparsity(cfg: &ExperimentConfig, out_dir: &Path) -> AppResult<Vec<SparsityRow>> {
    let id = ExperimentId::CoherenceVsSparsity;
    let grid = cfg.grid.build()?;
    let a = measurement_operator(&grid, &directions(cfg.measurements, cfg.coverage)?)?;
    let gamma = GreenCoupling::new(&grid);
    let mu_a = mutual_coherence(&a)?.mu_exact;
    let eta0 = cfg.eta0[0];
    let mut regimes = vec![("fixed-eta", None)];
    if let Some(target) = cfg.fixed_coupling {
        regimes.push(("fixed-coupling", Some(target)));
    }

    let mut rows = Vec::new();
    for &s in &cfg.sparsity {
        // mu[regime][order] over realizations
        let mut samples = vec![vec![Vec::new(); cfg.born_orders.len()]; regimes.len()];
        let mut etas = vec![Vec::new(); regimes.len()];
        for r in 0..cfg.realizations as u64 {
            let seed = stream_seed(cfg.seed, id, &format!("s={s}"), r);
            let pot = build_model(&ScattererModel::RandomVoxels { count: s, eta0, seed }, &grid)?;
            let base = pot.strengths_with(&grid, cfg.convention.into())?;
            for (k, (_, target)) in regimes.iter().enumerate() {
                let (v, eta) = match target {
                    Some(t) if s > 0 => {
                        let (_, g1) = left_coupling_norms(&base, &gamma);
                        let f = t / g1;
                        (base.scaled(f), eta0 * f)
                    }
                    _ => (base.clone(), eta0),
                };
                etas[k].push(eta);
                for (o, order) in cfg.born_orders.iter().enumerate() {
                    let mu = if s == 0 || order.0.is_linear() {
                        mu_a
                    } else {
                        linearized_coherence_numeric(&a, &v, &gamma, order.0)?.mu_exact
                    };
                    samples[k][o].push(mu);
                }
            }
        }
        for (k, (name, _)) in regimes.iter().enumerate() {
            for (o, order) in cfg.born_orders.iter().enumerate() {
                let (mean, std) = mean_std(&samples[k][o]);
                rows.push(SparsityRow {
                    regime: name.to_string(),
                    s,
                    order: order.to_string(),
                    mean,
                    std,
                    realizations: cfg.realizations,
                    eta0_mean: mean_std(&etas[k]).0,
                });
            }
        }
    }
    let mut out = Outputs::new(out_dir)?;
    out.write_csv("coherence_vs_sparsity.csv", &rows)?;
    out.finish(cfg, id, json!({ "mu_a": mu_a, "kh": grid.kh() }))?;
    Ok(rows)
}
