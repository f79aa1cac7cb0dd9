use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use scatter::formats::{load_coherence, load_diagonal, load_measurement, read_trace};

fn scatter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scatter"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn setup() -> Value {
    json!({
        "grid": { "side_length": 3.0, "n_per_side": 4 },
        "measurements": 40,
        "sources": 40,
        "convention": "point-scatterer"
    })
}

#[test]
fn forward_then_reconstruct_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fwd = dir.path().join("forward.json");
    write_json(
        &fwd,
        &json!({
            "setup": setup(),
            "model": { "kind": "voxels", "entries": [[5, 0.01, 0.0], [42, 0.02, 0.0]] },
            "noise_level": 0.0
        }),
    );
    let data = dir.path().join("data");
    let o = scatter(&["forward", "--config", fwd.to_str().unwrap(), "--out-dir", data.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let y = load_measurement(&data.join("measurement.txt")).unwrap();
    assert_eq!(y.data.shape(), (40, 40));
    assert_eq!(y.noise_level, 0.0);
    assert_eq!(load_diagonal(&data.join("potential.txt")).unwrap().support(), &[5, 42]);

    let rec = dir.path().join("reconstruct.json");
    write_json(
        &rec,
        &json!({
            "setup": setup(),
            "measurement": "data/measurement.txt",
            "truth": "data/potential.txt",
            "threshold": 2,
            "born_order": "inf",
            "iterations": 20
        }),
    );
    let out = dir.path().join("rec");
    let o = scatter(&["reconstruct", "--config", rec.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_trace(std::fs::File::open(out.join("trace.csv")).unwrap(), "trace").unwrap();
    assert_eq!(rows.len(), 21);
    let last = rows.last().unwrap();
    assert_eq!(last.support, vec![5, 42]);
    assert!(last.y_err < 1e-8, "y_err {}", last.y_err);
    let eta = load_diagonal(&out.join("reconstruction.txt")).unwrap();
    assert!((eta.get(42).re - 0.02).abs() < 1e-8);
}

#[test]
fn noisy_forward_records_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("f.json");
    write_json(
        &cfg,
        &json!({
            "setup": setup(),
            "model": { "kind": "random-voxels", "count": 3, "eta0": 0.05 },
            "born_order": 2,
            "noise_level": 0.01
        }),
    );
    let out = dir.path().join("o");
    let o = scatter(&["forward", "--config", cfg.to_str().unwrap(), "--seed", "11", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(out.join("measurement.txt")).unwrap();
    assert!(text.contains("# seed=11"));
    assert!(text.contains("# noise_level=1"));
}

#[test]
fn coherence_report_respects_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    write_json(
        &cfg,
        &json!({
            "setup": setup(),
            "model": { "kind": "voxels", "entries": [[21, 0.1, 0.0]] },
            "born_order": 2
        }),
    );
    let out = dir.path().join("o");
    let o = scatter(&["coherence", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["coherence.json", "product_coherence.json"] {
        let r = load_coherence(&out.join(name)).unwrap();
        assert!((0.0..=1.0).contains(&r.mu_exact));
        for b in &r.bound_chain {
            assert!(r.mu_exact <= b.value + 1e-12, "{name}: {} exceeds {}", r.mu_exact, b.name);
        }
    }
    let product = load_coherence(&out.join("product_coherence.json")).unwrap();
    assert_eq!(product.bound_chain[0].name, "factored");
}

#[test]
fn bounds_command_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("b.json");
    write_json(
        &cfg,
        &json!({
            "inputs": {
                "mu_a": 0.0525, "mu_bstar": 0.0525, "s": 3, "delta": 0.0395, "gamma": 0.046,
                "v_inf": 1.0, "v0_err": 3.0, "iterations": 30
            },
            "theorems": ["linear", "second-born"],
            "generic": { "mu0": 0.05, "error_caps": [0.0] },
            "rip": { "delta_2s": 0.1, "gamma": 0.05, "v_inf": 0.1 }
        }),
    );
    let out = dir.path().join("o");
    let o = scatter(&["bounds", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["bound_linear.csv", "bound_second_born.csv", "bound_generic.csv"] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        assert!(text.starts_with("iter,bound_l1,rho_n,floor"));
        assert_eq!(text.lines().count(), 32);
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("bounds.json")).unwrap()).unwrap();
    assert_eq!(summary["bounds"].as_array().unwrap().len(), 3);
    assert!(summary["rip"]["alpha"].is_number());
}

#[test]
fn experiment_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("e.json");
    write_json(&cfg, &json!({ "direction_sweep": [5, 20] }));
    let out = dir.path().join("o");
    let o = scatter(&[
        "experiment",
        "coherence-vs-directions",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["figure"], "Fig. 2");
    assert_eq!(manifest["config"]["direction_sweep"], json!([5, 20]));
    let csv = std::fs::read_to_string(out.join("coherence_vs_directions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn configuration_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();

    // no config
    assert_eq!(code(&scatter(&["forward", "--out-dir", out])), 2);
    // unreadable JSON
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&scatter(&["forward", "--config", bad.to_str().unwrap(), "--out-dir", out])), 2);
    // unknown field
    let extra = dir.path().join("extra.json");
    write_json(&extra, &json!({ "setup": setup(), "model": { "kind": "voxels", "entries": [] }, "colour": 1 }));
    assert_eq!(code(&scatter(&["forward", "--config", extra.to_str().unwrap(), "--out-dir", out])), 2);
    // negative noise
    let neg = dir.path().join("neg.json");
    write_json(
        &neg,
        &json!({ "setup": setup(), "model": { "kind": "voxels", "entries": [[0, 0.1, 0.0]] }, "noise_level": -0.1 }),
    );
    assert_eq!(code(&scatter(&["forward", "--config", neg.to_str().unwrap(), "--out-dir", out])), 2);
    // voxel outside the grid
    let far = dir.path().join("far.json");
    write_json(&far, &json!({ "setup": setup(), "model": { "kind": "voxels", "entries": [[64, 0.1, 0.0]] } }));
    assert_eq!(code(&scatter(&["forward", "--config", far.to_str().unwrap(), "--out-dir", out])), 2);
    // unknown experiment and invalid override
    assert_eq!(code(&scatter(&["experiment", "fig-99", "--out-dir", out])), 2);
    let zero = dir.path().join("zero.json");
    write_json(&zero, &json!({ "iterations": 0 }));
    assert_eq!(
        code(&scatter(&["experiment", "convergence-1", "--config", zero.to_str().unwrap(), "--out-dir", out])),
        2
    );
    // invalid scale
    assert_eq!(code(&scatter(&["experiment", "success-rate", "--scale", "huge"])), 2);
}

#[test]
fn numerical_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = dir.path().join("b.json");
    // ‖ΓV‖₁ ≥ 1 violates every theorem's precondition
    write_json(
        &cfg,
        &json!({
            "inputs": {
                "mu_a": 0.05, "mu_bstar": 0.05, "s": 3, "delta": 0.1, "gamma": 1.5,
                "v_inf": 1.0, "v0_err": 3.0, "iterations": 10
            }
        }),
    );
    let o = scatter(&["bounds", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    // non-finite data makes the first misfit non-finite
    let y = dir.path().join("y.txt");
    std::fs::write(&y, "# noise_level=0\n# seed=none\n40 40\n0 0 nan 0\n").unwrap();
    let rec = dir.path().join("r.json");
    write_json(&rec, &json!({ "setup": setup(), "measurement": "y.txt", "threshold": 1, "iterations": 3 }));
    let o = scatter(&["reconstruct", "--config", rec.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn documented_example_configs_run() {
    let repo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    let configs = dir.path().join("configs");
    std::fs::create_dir(&configs).unwrap();
    for entry in std::fs::read_dir(&repo).unwrap() {
        let p = entry.unwrap().path();
        std::fs::copy(&p, configs.join(p.file_name().unwrap())).unwrap();
    }
    for cmd in ["forward", "reconstruct", "coherence", "bounds"] {
        let cfg = configs.join(format!("{cmd}.json"));
        let out = dir.path().join("out").join(cmd);
        let o = scatter(&[cmd, "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(configs.join("model-1-desk.json")).unwrap();
    let overrides: Value = serde_json::from_str(&text).unwrap();
    scatter::config::ExperimentConfig::resolve(
        scatter::config::ExperimentId::Model1,
        scatter::config::Scale::Desk,
        Some(&overrides),
    )
    .unwrap();
}
