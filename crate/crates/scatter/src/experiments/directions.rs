use std::path::Path;

use serde::Serialize;
use serde_json::json;

use scatter_core::coherence::{farfield_coherence_analytic, mutual_coherence};
use scatter_core::forward::measurement_operator;

use super::Outputs;
use crate::config::{directions, ExperimentConfig, ExperimentId};
use crate::error::AppResult;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionRow {
    pub n_d: usize,
    pub mu_exact: f64,
    pub argmax_i: usize,
    pub argmax_j: usize,
    pub sinc_reference: f64,
}

/// `μ(A)` as the number of measurement directions grows, against `|sinc(kh)|`.
pub fn run_coherence_vs_directions(cfg: &ExperimentConfig, out_dir: &Path) -> AppResult<Vec<DirectionRow>> {
    let id = ExperimentId::CoherenceVsDirections;
    let grid = cfg.grid.build()?;
    let reference = farfield_coherence_analytic(grid.kh());
    let mut rows = Vec::with_capacity(cfg.direction_sweep.len());
    for &n_d in &cfg.direction_sweep {
        let a = measurement_operator(&grid, &directions(n_d, cfg.coverage)?)?;
        let report = mutual_coherence(&a)?;
        rows.push(DirectionRow {
            n_d,
            mu_exact: report.mu_exact,
            argmax_i: report.argmax_pair.0,
            argmax_j: report.argmax_pair.1,
            sinc_reference: reference,
        });
    }
    let mut out = Outputs::new(out_dir)?;
    out.write_csv("coherence_vs_directions.csv", &rows)?;
    let last = rows.last().map(|r| r.mu_exact);
    out.finish(cfg, id, json!({ "kh": grid.kh(), "sinc_reference": reference, "mu_at_largest_sweep": last }))?;
    Ok(rows)
}
