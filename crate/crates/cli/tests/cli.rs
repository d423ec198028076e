use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gsmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsmr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("failed to launch gsmr")
}

fn ok(args: &[&str]) -> String {
    let out = gsmr(args);
    assert!(
        out.status.success(),
        "gsmr {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_json(path: &Path, json: serde_json::Value) {
    fs::write(path, serde_json::to_string_pretty(&json).unwrap()).unwrap();
}

#[test]
fn simulate_gate_reconstruct_evaluate_render() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (data, recon) = (root.join("data"), root.join("recon"));

    write_json(
        &root.join("sim.json"),
        serde_json::json!({
            "grid_size": 16, "n_spokes": 240, "samples_per_spoke": 12, "n_coils": 2,
            "n_states": 2, "diaphragm_amplitude": 2.0, "nufft_kernel_width": 5
        }),
    );
    ok(&["simulate", "--config", p(&root.join("sim.json")), "--out", p(&data)]);
    for f in ["kspace.bin", "trajectory.bin", "coils.gsmr", "scene.json", "rois.json", "truth_state_1.gsmr", "truth_dvf_1.bin"] {
        assert!(data.join(f).exists(), "simulate did not write {f}");
    }

    let bins = root.join("bins.json");
    ok(&["gate", "--kspace", p(&data.join("kspace.bin")), "--states", "2", "--out", p(&bins)]);
    let gated: serde_json::Value = serde_json::from_str(&fs::read_to_string(&bins).unwrap()).unwrap();
    let simulated: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("bins.json")).unwrap()).unwrap();
    // k-space is stored in single precision, so only the medians may move
    assert_eq!(gated["states"], simulated["states"]);
    assert_eq!(gated["state_of_spoke"], simulated["state_of_spoke"]);
    for (a, b) in gated["medians"].as_array().unwrap().iter().zip(simulated["medians"].as_array().unwrap()) {
        let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
        assert!((a - b).abs() <= 1e-5 * b.abs(), "{a} vs {b}");
    }

    write_json(
        &root.join("recon.json"),
        serde_json::json!({
            "grid_size": 16, "n_states": 2, "n_gaussians": 200, "n_iterations": 3,
            "checkpoint_every": 2, "nufft_kernel_width": 5, "init_strategy": "random"
        }),
    );
    ok(&[
        "reconstruct",
        "--config",
        p(&root.join("recon.json")),
        "--kspace",
        p(&data),
        "--bins",
        p(&bins),
        "--out",
        p(&recon),
    ]);
    for f in ["reference.gsmr", "state_0.gsmr", "state_1.gsmr", "dvf_1.bin", "loss_history.csv", "config.json"] {
        assert!(recon.join(f).exists(), "reconstruct did not write {f}");
    }
    let history = fs::read_to_string(recon.join("loss_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4, "header plus one row per iteration");

    let report = root.join("report.csv");
    let profile = root.join("profile.png");
    ok(&[
        "evaluate",
        "--recon",
        p(&recon),
        "--truth",
        p(&data),
        "--rois",
        p(&data.join("rois.json")),
        "--out",
        p(&report),
        "--profile-png",
        p(&profile),
    ]);
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("metric,roi,state,value\n"));
    for m in ["snr_db,lung,0,", "cnr_db,liver,1,", "nrmse,,1,", "dvf_epe_mean,,1,", "diaphragm_edge,,0,"] {
        assert!(csv.contains(m), "report lacks {m}:\n{csv}");
    }
    assert!(fs::read(&profile).unwrap().starts_with(b"\x89PNG"));

    let png = root.join("slice.png");
    ok(&["render", "--volume", p(&recon.join("state_1.gsmr")), "--plane", "sagittal", "--slice", "5", "--out", p(&png)]);
    assert!(fs::read(&png).unwrap().starts_with(b"\x89PNG"));
}

#[test]
fn reconstruct_accepts_a_preset_and_rejects_unknown_ones() {
    let out = gsmr(&["reconstruct", "--preset", "no-such-preset", "--kspace", ".", "--out", "unused"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-preset"));

    let listed = ok(&["presets"]);
    assert!(listed.lines().any(|l| l == "desk"));
}

#[test]
fn bad_config_fields_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sim.json");
    write_json(&cfg, serde_json::json!({ "grid_size": 16, "n_spokez": 10 }));
    let out = gsmr(&["simulate", "--config", p(&cfg), "--out", p(&tmp.path().join("x"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_spokez"));
}

#[test]
fn nufft_bench_prints_both_paths() {
    let csv = ok(&["nufft-bench", "--grid", "16", "--spokes", "20"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "path,grid,spokes,seconds,rel_err");
    assert!(lines[1].starts_with("direct,16,20,"));
    assert!(lines[2].starts_with("gridding,16,20,"));
    let err: f64 = lines[2].rsplit(',').next().unwrap().parse().unwrap();
    assert!(err < 1e-6, "gridding error {err}");
}
