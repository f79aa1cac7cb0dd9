//! Subcommand implementations. Each reads an already-parsed config and writes
//! its outputs into a directory.

use std::path::{Path, PathBuf};

use serde_json::json;

use scatter_core::bounds::{
    full_nonlinear_bound, generic_bound, linear_bound, rip_constants, second_born_bound, BoundInputs, BoundTrace,
};
use scatter_core::coherence::{
    hadamard_coherence, linearized_coherence_numeric, mutual_coherence, perturbation_coherence_bound, BoundValue,
};
use scatter_core::forward::{
    add_noise, coupling_norms, forward_model, BornOrder, CouplingConvention, GreenCoupling, MeasurementMatrix,
    PotentialField, SparseDiagonal,
};
use scatter_core::geometry::VoxelGrid;
use scatter_core::iht::{IhtConfig, IhtSolver, ReconstructionTrace};
use scatter_core::models::build_model;
use scatter_core::{ScatterError, C64};

use crate::config::{BoundsConfig, CoherenceConfig, ForwardConfig, ModelSpec, ReconstructConfig, SetupSpec};
use crate::error::{AppError, AppResult};
use crate::experiments::Instrument;
use crate::formats::{
    load_diagonal, load_measurement, save_bound_trace, save_coherence, save_diagonal, save_json, save_measurement,
    save_trace, BoundSummary,
};

fn create_dir(dir: &Path) -> AppResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

fn instrument(setup: &SetupSpec) -> AppResult<Instrument> {
    Instrument::new(&setup.grid, setup.measurements, setup.sources, setup.coverage)
}

/// Contrast `η` for a model description on `grid`.
pub fn build_potential(spec: &ModelSpec, grid: &VoxelGrid, seed: u64) -> AppResult<PotentialField> {
    match spec {
        ModelSpec::Voxels { entries } => {
            let mut entries = entries.clone();
            entries.sort_by_key(|e| e.0);
            if entries.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(AppError::config("voxel entries repeat an index"));
            }
            let support = entries.iter().map(|e| e.0).collect();
            let values = entries.iter().map(|e| C64::new(e.1, e.2)).collect();
            Ok(PotentialField::new(grid, support, values)?)
        }
        other => Ok(build_model(&other.to_model(seed).expect("not explicit voxels"), grid)?),
    }
}

/// Strengths `V` to contrast `η`.
fn to_contrast(grid: &VoxelGrid, v: &SparseDiagonal, conv: CouplingConvention) -> SparseDiagonal {
    let k = grid.wavenumber();
    v.scaled(1.0 / (k * k * grid.voxel_volume() * conv.potential_scale()))
}

/// Contrast `η` to strengths `V`.
fn to_strengths(grid: &VoxelGrid, eta: &SparseDiagonal, conv: CouplingConvention) -> SparseDiagonal {
    let k = grid.wavenumber();
    eta.scaled(k * k * grid.voxel_volume() * conv.potential_scale())
}

/// Simulates measurements; writes `measurement.txt` and the contrast as
/// `potential.txt`.
pub fn forward(cfg: &ForwardConfig, seed: u64, out: &Path) -> AppResult<MeasurementMatrix> {
    let inst = instrument(&cfg.setup)?;
    let conv: CouplingConvention = cfg.setup.convention.into();
    if !(cfg.noise_level >= 0.0) {
        return Err(AppError::config("noise_level must be non-negative"));
    }
    let pot = build_potential(&cfg.model, &inst.grid, seed)?;
    let v = pot.strengths_with(&inst.grid, conv)?;
    let gamma = GreenCoupling::new(&inst.grid);
    let clean = forward_model(&inst.a, &v, &gamma, &inst.b, cfg.born_order.0)?;
    let y = if cfg.noise_level > 0.0 {
        add_noise(&clean, cfg.noise_level, seed)?
    } else {
        MeasurementMatrix::noiseless(clean)
    };
    create_dir(out)?;
    save_measurement(&out.join("measurement.txt"), &y)?;
    save_diagonal(&out.join("potential.txt"), pot.eta())?;
    Ok(y)
}

/// Runs IHT on a measurement file; writes `trace.csv` and the recovered
/// contrast as `reconstruction.txt`. Relative paths resolve against `base`.
pub fn reconstruct(cfg: &ReconstructConfig, base: &Path, out: &Path) -> AppResult<ReconstructionTrace> {
    let inst = instrument(&cfg.setup)?;
    let conv: CouplingConvention = cfg.setup.convention.into();
    let y = load_measurement(&base.join(&cfg.measurement))?;
    let truth = match &cfg.truth {
        Some(p) => {
            let eta = load_diagonal(&base.join(p))?;
            if eta.dim() != inst.grid.len() {
                return Err(AppError::config(format!(
                    "truth has {} voxels but the grid has {}",
                    eta.dim(),
                    inst.grid.len()
                )));
            }
            Some(to_strengths(&inst.grid, &eta, conv))
        }
        None => None,
    };
    let gamma = GreenCoupling::new(&inst.grid);
    let mut solver = IhtSolver::new(&inst.a, &inst.b, Some(&gamma))?;
    let mut data = solver.prepare(&y.data)?;
    let mut run_cfg = IhtConfig::new(cfg.threshold, cfg.born_order.0).with_max_iter(cfg.iterations);
    run_cfg.tol = cfg.tol;
    let trace = solver.run(&mut data, &run_cfg, truth.as_ref())?;
    create_dir(out)?;
    save_trace(&out.join("trace.csv"), &trace)?;
    save_diagonal(
        &out.join("reconstruction.txt"),
        &to_contrast(&inst.grid, trace.final_estimate(), conv),
    )?;
    Ok(trace)
}

/// Coherence of `A`, or of the linearized operator when a model is given;
/// writes `coherence.json`, plus `product_coherence.json` for the
/// measurement-by-source operator.
pub fn coherence(cfg: &CoherenceConfig, seed: u64, out: &Path) -> AppResult<scatter_core::coherence::CoherenceReport> {
    let inst = instrument(&cfg.setup)?;
    let conv: CouplingConvention = cfg.setup.convention.into();
    let gamma = GreenCoupling::new(&inst.grid);
    let mu_a = mutual_coherence(&inst.a)?;
    let report = match &cfg.model {
        None => mu_a.clone(),
        Some(spec) => {
            let v = build_potential(spec, &inst.grid, seed)?.strengths_with(&inst.grid, conv)?;
            let mut r = linearized_coherence_numeric(&inst.a, &v, &gamma, cfg.born_order.0)?;
            let s = v.sparsity();
            if cfg.born_order.0 == BornOrder::Finite(2) && s > 0 {
                let (delta, _) = coupling_norms(&v, &gamma);
                // only meaningful where the preconditions hold
                if let Ok(b) = perturbation_coherence_bound(delta, s, mu_a.mu_exact) {
                    r.push_bound("perturbation", b);
                }
            }
            r
        }
    };
    create_dir(out)?;
    save_coherence(&out.join("coherence.json"), &report)?;

    let mu_b = mutual_coherence(&inst.b.adjoint())?.mu_exact;
    let mut product = hadamard_coherence(&inst.a, &inst.b)?;
    product.push_bound("factored", BoundValue::clamp(mu_a.mu_exact * mu_b));
    save_coherence(&out.join("product_coherence.json"), &product)?;
    Ok(report)
}

/// Convergence bounds from supplied constants; writes one `bound_<name>.csv`
/// per computed trace and `bounds.json`. A bound whose preconditions fail is
/// reported in the JSON; the command fails only if nothing was computed.
pub fn bounds(cfg: &BoundsConfig, out: &Path) -> AppResult<Vec<BoundTrace>> {
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    let mut requested = 0;
    let mut last_err: Option<ScatterError> = None;
    let mut record = |name: &str, r: Result<BoundTrace, ScatterError>, traces: &mut Vec<BoundTrace>| match r {
        Ok(t) => traces.push(t),
        Err(e) => {
            failures.push(json!({ "name": name, "error": e.to_string() }));
            last_err = Some(e);
        }
    };
    if let Some(inputs) = &cfg.inputs {
        let inp: BoundInputs = inputs.clone().into();
        for name in &cfg.theorems {
            requested += 1;
            let r = match name.as_str() {
                "linear" => linear_bound(&inp),
                "second-born" => second_born_bound(&inp),
                "full-nonlinear" => full_nonlinear_bound(&inp),
                other => return Err(AppError::config(format!("unknown theorem {other:?}"))),
            };
            record(name, r, &mut traces);
        }
    }
    if let Some(g) = &cfg.generic {
        let Some(inputs) = &cfg.inputs else {
            return Err(AppError::config("the generic bound needs inputs for s, v0_err and iterations"));
        };
        requested += 1;
        let r = generic_bound(g.mu0, inputs.s, &g.error_caps, inputs.v0_err, inputs.iterations);
        record("generic", r, &mut traces);
    }
    let rip = match &cfg.rip {
        Some(r) => {
            requested += 1;
            match rip_constants(r.delta_2s, r.gamma, r.v_inf) {
                Ok(c) => Some(json!({ "alpha": c.alpha, "beta": c.beta, "c": c.c, "converges": c.converges })),
                Err(e) => {
                    failures.push(json!({ "name": "rip", "error": e.to_string() }));
                    last_err = Some(e);
                    None
                }
            }
        }
        None => None,
    };
    if requested == 0 {
        return Err(AppError::config("nothing to compute: give inputs, generic or rip"));
    }
    create_dir(out)?;
    for t in &traces {
        save_bound_trace(&out.join(format!("bound_{}.csv", t.name)), t)?;
    }
    let summaries: Vec<BoundSummary> = traces.iter().map(BoundSummary::from).collect();
    save_json(
        &out.join("bounds.json"),
        &json!({
            "inputs": cfg.inputs,
            "bounds": summaries,
            "rip": rip,
            "failures": failures,
        }),
    )?;
    if traces.is_empty() && rip.is_none() {
        return Err(last_err.map(AppError::from).unwrap_or_else(|| AppError::config("no bound computed")));
    }
    Ok(traces)
}

/// Directory holding a config file, for resolving relative paths.
pub fn config_base(config: Option<&Path>) -> PathBuf {
    config
        .and_then(|p| p.parent())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
