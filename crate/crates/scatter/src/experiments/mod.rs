//! Seeded numerical studies. Each writes CSV tables and a `manifest.json`
//! naming the figure the tables correspond to, and returns its results for
//! programmatic checks.

mod convergence;
mod directions;
mod models;
mod single;
mod sparsity;
mod success;

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use scatter_core::forward::{incident_operator, measurement_operator};
use scatter_core::geometry::VoxelGrid;
use scatter_core::seeding::realization_seed;
use scatter_core::ComplexMatrix;

use crate::config::{directions as direction_set, CoverageSpec, ExperimentConfig, ExperimentId, GridSpec};
use crate::error::{AppError, AppResult};
use crate::formats::save_json;

pub use convergence::{run_convergence_comparison, BoundOutcome, ConvergenceResult, ConvergenceRun};
pub use directions::{run_coherence_vs_directions, DirectionRow};
pub use models::{central_slice, run_model_reconstruction, ModelRow};
pub use single::{run_single_scatterer_curves, SingleScattererResult, SingleSummary};
pub use sparsity::{run_coherence_vs_sparsity, SparsityRow};
pub use success::{run_success_rate, wilson_interval, SuccessResult, SuccessRow};

/// Output directory bookkeeping for one experiment run.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> AppResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Path for `name` inside the output directory, recorded in the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> AppResult<()> {
        let path = self.file(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        for r in rows {
            w.serialize(r).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| AppError::io(&path, e))
    }

    pub fn finish(mut self, cfg: &ExperimentConfig, id: ExperimentId, summary: Value) -> AppResult<()> {
        let path = self.dir.join("manifest.json");
        self.files.sort();
        let manifest = json!({
            "experiment": id.as_str(),
            "figure": id.figure(),
            "files": self.files,
            "config": cfg,
            "summary": summary,
        });
        save_json(&path, &manifest)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> AppError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => AppError::io(path, io),
        other => AppError::Format {
            path: path.display().to_string(),
            message: format!("{other:?}"),
        },
    }
}

/// Grid plus measurement and incident operators.
pub struct Instrument {
    pub grid: VoxelGrid,
    pub a: ComplexMatrix,
    pub b: ComplexMatrix,
}

impl Instrument {
    pub fn new(grid: &GridSpec, measurements: usize, sources: usize, coverage: CoverageSpec) -> AppResult<Self> {
        let grid = grid.build()?;
        let a = measurement_operator(&grid, &direction_set(measurements, coverage)?)?;
        let b = incident_operator(&grid, &direction_set(sources, coverage)?)?;
        Ok(Self { grid, a, b })
    }
}

/// Seed of realization `r` of the stream `tag` within experiment `id`.
pub fn stream_seed(master: u64, id: ExperimentId, tag: &str, r: u64) -> u64 {
    if tag.is_empty() {
        realization_seed(master, id.as_str(), r)
    } else {
        realization_seed(master, &format!("{}/{tag}", id.as_str()), r)
    }
}

/// Results of any experiment.
#[derive(Clone, Debug)]
pub enum ExperimentResult {
    Directions(Vec<DirectionRow>),
    Single(SingleScattererResult),
    Sparsity(Vec<SparsityRow>),
    Convergence(ConvergenceResult),
    Models(Vec<ModelRow>),
    Success(SuccessResult),
}

pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> AppResult<ExperimentResult> {
    let id = cfg.id()?;
    cfg.validate(id)?;
    Ok(match id {
        ExperimentId::CoherenceVsDirections => ExperimentResult::Directions(run_coherence_vs_directions(cfg, out_dir)?),
        ExperimentId::SingleScatterer => ExperimentResult::Single(run_single_scatterer_curves(cfg, out_dir)?),
        ExperimentId::CoherenceVsSparsity => ExperimentResult::Sparsity(run_coherence_vs_sparsity(cfg, out_dir)?),
        ExperimentId::Convergence1 | ExperimentId::Convergence2 => {
            ExperimentResult::Convergence(run_convergence_comparison(cfg, out_dir)?)
        }
        ExperimentId::Model1 | ExperimentId::Model2 => ExperimentResult::Models(run_model_reconstruction(cfg, out_dir)?),
        ExperimentId::SuccessRate => ExperimentResult::Success(run_success_rate(cfg, out_dir)?),
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.290_994_448_735_805_6).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn streams_are_distinct() {
        let a = stream_seed(1, ExperimentId::SuccessRate, "s=5", 0);
        let b = stream_seed(1, ExperimentId::SuccessRate, "s=15", 0);
        let c = stream_seed(1, ExperimentId::SuccessRate, "", 0);
        assert!(a != b && b != c && a != c);
    }
}
