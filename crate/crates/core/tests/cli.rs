use std::path::Path;
use std::process::{Command, Output};

use preimage_forge::cnn::{accuracy, save_model, synth_dataset, Architecture};
use preimage_forge::config::RunConfig;
use preimage_forge::demons::parse_metrics_csv;
use preimage_forge::kernels::{fit_kernel_parameter, screened_poisson_residual, Kernel, SmoothingKind};

fn forge(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_preimage-forge"))
        .args(args)
        .current_dir(dir)
        .env_remove("PREIMAGE_FORGE_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn kernel_command_writes_csv_and_rendering() {
    let dir = tempfile::tempdir().unwrap();
    let out = forge(&["kernel", "--kind", "dirac", "--side", "3", "--out", "d.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let k = Kernel::from_csv(&String::from_utf8(read(dir.path().join("d.csv"))).unwrap()).unwrap();
    assert_eq!(k.at(1, 1), 1.0);
    assert_eq!(k.sum(), 1.0);
    assert!(dir.path().join("d.pgm").is_file());

    let out = forge(
        &["kernel", "--kind", "sobolev", "--side", "11", "--threshold", "1e-4", "--out", "s.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let k = Kernel::from_csv(&String::from_utf8(read(dir.path().join("s.csv"))).unwrap()).unwrap();
    let gamma = fit_kernel_parameter(SmoothingKind::Sobolev, 11, 1e-4).unwrap();
    // The CSV carries 17 significant digits, so the residual is limited by
    // decimal rounding of weights of size ≲ 0.5 and γ·4 neighbours.
    assert!(screened_poisson_residual(11, gamma, k.weights()) <= 1e-10);
    let pgm = preimage_forge::grid::decode_ppm(dir.path().join("s.pgm")).unwrap();
    assert_eq!(pgm.shape(), (11, 11, 1));
    assert_eq!(pgm.get(5, 5, 0), 1.0);
}

#[test]
fn explicit_and_fitted_gaussians_differ_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| assert_eq!(code(&forge(args, dir.path())), 0);
    run(&["kernel", "--kind", "gaussian", "--side", "11", "--sigma", "2", "--out", "a.csv"]);
    run(&["kernel", "--kind", "gaussian", "--side", "11", "--out", "b.csv"]);
    run(&["kernel", "--kind", "gaussian", "--side", "11", "--sigma", "2", "--out", "c.csv"]);
    assert_ne!(read(dir.path().join("a.csv")), read(dir.path().join("b.csv")));
    assert_eq!(read(dir.path().join("a.csv")), read(dir.path().join("c.csv")));
    assert_eq!(read(dir.path().join("a.pgm")), read(dir.path().join("c.pgm")));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&forge(&["train", "--arch", "resnet", "--out", "m"], dir.path())), 2);
    assert_eq!(code(&forge(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&forge(&["kernel", "--kind", "sobolev", "--side", "4", "--out", "k.csv"], dir.path())), 2);
    assert_eq!(code(&forge(&["maximize", "--config", "missing.json"], dir.path())), 2);
    std::fs::write(dir.path().join("bad.json"), r#"{"model": {"builtin": "vggish"}, "typo": 1}"#).unwrap();
    assert_eq!(code(&forge(&["maximize", "--config", "bad.json"], dir.path())), 2);

    let out = Command::new(env!("CARGO_BIN_EXE_preimage-forge"))
        .args(["kernel", "--kind", "dirac", "--side", "3", "--out", "k.csv"])
        .current_dir(dir.path())
        .env("PREIMAGE_FORGE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_preimage-forge"))
        .args(["kernel", "--kind", "dirac", "--side", "3", "--out", "k.csv"])
        .current_dir(dir.path())
        .env("PREIMAGE_FORGE_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
}

#[test]
fn train_is_reproducible_and_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let args = |m: &str, r: &str| {
        vec![
            "train".to_string(), "--arch".into(), "vggish".into(), "--seed".into(), "3".into(),
            "--epochs".into(), "1".into(), "--out".into(), m.into(), "--report".into(), r.into(),
        ]
    };
    for (m, r) in [("a.mcnn", "a.json"), ("b.mcnn", "b.json")] {
        let a = args(m, r);
        let a: Vec<&str> = a.iter().map(String::as_str).collect();
        assert_eq!(code(&forge(&a, dir.path())), 0);
    }
    assert_eq!(read(dir.path().join("a.mcnn")), read(dir.path().join("b.mcnn")));
    assert_eq!(read(dir.path().join("a.json")), read(dir.path().join("b.json")));
    let report: serde_json::Value = serde_json::from_slice(&read(dir.path().join("a.json"))).unwrap();
    assert_eq!(report["arch"], "vggish");
    assert_eq!(report["epochs"].as_array().unwrap().len(), 1);
    assert!(report["val_acc"].as_f64().unwrap() >= 0.0);
    assert!(report["epochs"][0]["train_acc"].is_number());
}

#[test]
fn dataset_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = forge(
        &["train", "--arch", "densish", "--epochs", "0", "--out", "m.mcnn", "--dump-dataset", "data"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let data = preimage_forge::cnn::Dataset::load_dir(dir.path().join("data")).unwrap();
    assert_eq!(data.len(), 600);
    assert_eq!(data.labels[..3], [0, 1, 2]);
}

fn write_config(dir: &Path, name: &str, json: &str) {
    std::fs::write(dir.join(name), json).unwrap();
}

#[test]
fn dry_run_prints_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "max.json",
        r#"{"model": {"builtin": "densish", "seed": 2},
            "objective": {"kind": "activation_max", "unit": 0, "z_mode": "initial_activation"},
            "regularizer": {"kind": "tv", "lambda": 0.01},
            "demons": {"elastic": {"kind": "gaussian", "side": 5, "threshold": 1e-3}, "fluid": {"kind": "sobolev", "side": 7}},
            "schedule": {"octaves": [{"scale": 0.5, "steps": 2, "step_size": 1}, {"scale": 1.0, "steps": 2, "step_size": 0.5}], "jitter_fraction": 0.1},
            "output": {"image": "u.pgm", "metrics": "m.csv"}}"#,
    );
    let out = forge(&["maximize", "--config", "max.json", "--dry-run"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let printed = String::from_utf8(out.stdout).unwrap();
    let parsed = RunConfig::from_json(&printed).unwrap();
    assert_eq!(parsed.to_json(), printed.trim_end());
    assert!(parsed.objective.z.is_some() && parsed.objective.layer.is_some());
    assert!(parsed.demons.fluid.as_ref().unwrap().parameter.is_some());
    assert!(!dir.path().join("u.pgm").exists());

    // The printed config is itself a valid input with the same resolution.
    std::fs::write(dir.path().join("resolved.json"), &printed).unwrap();
    let again = forge(&["maximize", "--config", "resolved.json", "--dry-run"], dir.path());
    assert_eq!(String::from_utf8(again.stdout).unwrap(), printed);

    // And the run itself uses it.
    assert_eq!(code(&forge(&["maximize", "--config", "max.json"], dir.path())), 0);
    let metrics = parse_metrics_csv(&String::from_utf8(read(dir.path().join("m.csv"))).unwrap()).unwrap();
    assert_eq!(metrics.len(), 4);
    assert_eq!(preimage_forge::grid::decode_ppm(dir.path().join("u.pgm")).unwrap().shape(), (32, 32, 1));
}

#[test]
fn invert_reduces_the_data_term() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(0, 3).unwrap();
    preimage_forge::grid::encode_ppm(&data.images[1], dir.path().join("target.pgm")).unwrap();
    write_config(
        dir.path(),
        "inv.json",
        r#"{"model": {"builtin": "vggish", "seed": 0},
            "objective": {"kind": "inversion", "layer": 3, "target_image": "target.pgm", "z_mode": "target_norm"},
            "demons": {"fluid": {"kind": "sobolev", "side": 11, "threshold": 1e-4}, "tau": 1.0, "steps": 300},
            "output": {"image": "rec.pgm", "metrics": "rec.csv"}}"#,
    );
    let out = forge(&["invert", "--config", "inv.json"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = parse_metrics_csv(&String::from_utf8(read(dir.path().join("rec.csv"))).unwrap()).unwrap();
    assert!(m.last().unwrap().data_term < 0.05 * m[0].data_term);

    // Wrong command for the objective kind.
    assert_eq!(code(&forge(&["maximize", "--config", "inv.json"], dir.path())), 2);
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(0, 3).unwrap();
    preimage_forge::grid::encode_ppm(&data.images[0], dir.path().join("t.pgm")).unwrap();
    write_config(
        dir.path(),
        "boom.json",
        r#"{"model": {"builtin": "vggish"},
            "objective": {"kind": "inversion", "layer": 6, "target_image": "t.pgm"},
            "demons": {"tau": 1e300, "steps": 20},
            "output": {"image": "out.pgm"}}"#,
    );
    let out = forge(&["invert", "--config", "boom.json"], dir.path());
    assert_eq!(code(&out), 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("last finite step"), "{stderr}");
}

#[test]
fn evaluate_identity_preset_recovers_model_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let net = Architecture::Vggish.build(11).unwrap();
    save_model(&net, dir.path().join("m.mcnn")).unwrap();
    let out = forge(
        &["evaluate", "--model-a", "m.mcnn", "--model-b", "m.mcnn", "--n-images", "12", "--seed", "4",
          "--presets", "identity", "--out", "r.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&read(dir.path().join("r.json"))).unwrap();
    let want = accuracy(&net, &synth_dataset(4, 12).unwrap()).unwrap();
    let results = report["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    for r in results {
        assert_eq!(r["top1"].as_f64().unwrap(), want);
    }

    let other = Architecture::Densish.build(1).unwrap();
    let mut bad = other.clone();
    bad = preimage_forge::cnn::Network::new(
        preimage_forge::cnn::Shape::new(16, 16, 1),
        bad.layers().to_vec(),
        1,
    )
    .unwrap();
    save_model(&bad, dir.path().join("bad.mcnn")).unwrap();
    let out = forge(&["evaluate", "--model-a", "m.mcnn", "--model-b", "bad.mcnn"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}
