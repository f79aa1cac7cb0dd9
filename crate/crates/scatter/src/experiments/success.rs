use std::path::Path;

use serde::Serialize;
use serde_json::json;

use scatter_core::forward::{add_noise, forward_full, BornOrder, GreenCoupling};
use scatter_core::iht::{IhtConfig, IhtSolver};
use scatter_core::models::{build_model, ScattererModel};
use scatter_core::seeding::splitmix64;

use super::{stream_seed, Instrument, Outputs};
use crate::config::{ExperimentConfig, ExperimentId};
use crate::error::AppResult;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuccessRow {
    pub eta0: f64,
    pub s: usize,
    pub order: String,
    pub successes: usize,
    /// Runs that diverged or hit a singular system; counted as failures.
    pub diverged: usize,
    pub realizations: usize,
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuccessResult {
    pub rows: Vec<SuccessRow>,
}

impl SuccessResult {
    pub fn row(&self, eta0: f64, s: usize, order: BornOrder) -> Option<&SuccessRow> {
        let label = order.to_string();
        self.rows
            .iter()
            .find(|r| r.eta0 == eta0 && r.s == s && r.order == label)
    }

    pub fn rate(&self, eta0: f64, s: usize, order: BornOrder) -> Option<f64> {
        self.row(eta0, s, order).map(|r| r.rate)
    }
}

/// Wilson score interval for `k` successes in `n` trials at `z` standard
/// errors.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Fraction of random `s`-sparse instances whose support IHT recovers
/// exactly, with the threshold set to the true `s`.
pub fn run_success_rate(cfg: &ExperimentConfig, out_dir: &Path) -> AppResult<SuccessResult> {
    let id = ExperimentId::SuccessRate;
    let inst = Instrument::new(&cfg.grid, cfg.measurements, cfg.sources, cfg.coverage)?;
    let gamma = GreenCoupling::new(&inst.grid);
    let mut solver = IhtSolver::new(&inst.a, &inst.b, Some(&gamma))?;
    let orders: Vec<BornOrder> = cfg.born_orders.iter().map(|o| o.0).collect();
    let mut rows = Vec::new();

    for &eta0 in &cfg.eta0 {
        for &s in &cfg.sparsity {
            let mut successes = vec![0usize; orders.len()];
            let mut diverged = vec![0usize; orders.len()];
            for r in 0..cfg.realizations as u64 {
                if s == 0 {
                    successes.iter_mut().for_each(|k| *k += 1);
                    continue;
                }
                let seed = stream_seed(cfg.seed, id, &format!("s={s}"), r);
                let pot = build_model(&ScattererModel::RandomVoxels { count: s, eta0, seed }, &inst.grid)?;
                let truth = pot.strengths_with(&inst.grid, cfg.convention.into())?;
                let clean = forward_full(&inst.a, &truth, &gamma, &inst.b)?;
                let y = add_noise(&clean, cfg.noise_level, splitmix64(seed))?;
                let mut data = solver.prepare(&y.data)?;
                for (o, &order) in orders.iter().enumerate() {
                    let run_cfg = IhtConfig::new(s, order).with_max_iter(cfg.iterations);
                    match solver.run(&mut data, &run_cfg, None) {
                        Ok(trace) if trace.final_estimate().support() == truth.support() => successes[o] += 1,
                        Ok(_) => {}
                        Err(_) => diverged[o] += 1,
                    }
                }
            }
            for (o, order) in orders.iter().enumerate() {
                let n = cfg.realizations;
                let (wilson_low, wilson_high) = wilson_interval(successes[o], n, 2.0);
                rows.push(SuccessRow {
                    eta0,
                    s,
                    order: order.to_string(),
                    successes: successes[o],
                    diverged: diverged[o],
                    realizations: n,
                    rate: successes[o] as f64 / n as f64,
                    wilson_low,
                    wilson_high,
                });
            }
        }
    }
    let mut out = Outputs::new(out_dir)?;
    out.write_csv("success_rate.csv", &rows)?;
    out.finish(cfg, id, json!({ "kh": inst.grid.kh(), "voxels": inst.grid.len() }))?;
    Ok(SuccessResult { rows })
}
