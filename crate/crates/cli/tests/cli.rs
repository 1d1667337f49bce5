use std::fs;
use std::path::Path;

use earlylin::datagen::{self, DataSpec, Dataset};
use earlylin::io::Manifest;
use earlylin_cli::{run_to, EXIT_CONFIG, EXIT_FAILED, EXIT_OK};
use nalgebra::DVector;

fn run(args: &[&str]) -> (i32, String, String) {
    let argv: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_to(&argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn moments_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("m");
    let (code, out, _) = run(&[
        "moments",
        "--act",
        "erf",
        "--order",
        "64",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    for key in ["theta0", "theta1", "theta2"] {
        assert!(v[key].as_f64().unwrap().abs() < 1e-10, "{key}");
    }
    assert_eq!(v["quad_order"], 64);
    let m = manifest(&out_dir);
    assert_eq!(m.subcommand, "moments");
    assert!(out_dir.join("summary.csv").exists());
}

#[test]
fn missing_config_is_a_config_error_naming_the_path() {
    let (code, _, err) = run(&["spectral-decay", "--config", "missing.json"]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("missing.json"), "{err}");
}

#[test]
fn bad_command_lines_exit_2() {
    assert_eq!(run(&["agreement", "--no-such-key", "1"]).0, EXIT_CONFIG);
    assert_eq!(run(&["frobnicate"]).0, EXIT_CONFIG);
    let (code, _, err) = run(&["agreement", "--m", "7"]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(
        err.contains("/m: width must be even (symmetric initialization)"),
        "{err}"
    );
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(
        run(&["agreement", "--config", bad.to_str().unwrap()]).0,
        EXIT_CONFIG
    );
}

#[test]
fn help_lists_subcommands_and_keys() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("discrepancy-sweep"));
    assert_eq!(run(&[]).0, EXIT_CONFIG);
    let (_, out, _) = run(&["agreement", "--help"]);
    assert!(out.contains("--horizon-c"));
}

#[test]
fn agreement_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(format!("run{k}"));
        let (code, _, err) = run(&[
            "agreement",
            "--mode",
            "first",
            "--d",
            "32",
            "--n",
            "1024",
            "--m",
            "512",
            "--seed",
            "7",
            "--out",
            out_dir.to_str().unwrap(),
            "--n-test",
            "200",
        ]);
        assert_eq!(code, EXIT_OK, "{err}");
        csvs.push((
            fs::read(out_dir.join("records.csv")).unwrap(),
            fs::read(out_dir.join("summary.csv")).unwrap(),
            fs::read(out_dir.join("manifest.json")).unwrap(),
        ));
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn config_file_is_echoed_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let text =
        r#"{"mode": "second", "d": 8, "n": 200, "m": 64, "steps": 3, "n_test": 20, "seed": 1}"#;
    fs::write(&cfg, text).unwrap();
    let out_dir = dir.path().join("out");
    let (code, _, err) = run(&[
        "agreement",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
        "-q",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let m = manifest(&out_dir);
    assert_eq!(
        m.config,
        serde_json::from_str::<serde_json::Value>(text).unwrap()
    );
    assert_eq!(m.overrides["seed"], 5);
    assert_eq!(m.resolved["seed"], 5);
    assert_eq!(m.resolved["mode"], "second");
    assert_eq!(m.seeds, vec![5]);
    assert_eq!(m.derived["runs"][0]["steps"], 3);
    // The resolved configuration reproduces the run on its own.
    let again = dir.path().join("again.json");
    fs::write(&again, serde_json::to_string(&m.resolved).unwrap()).unwrap();
    let out2 = dir.path().join("out2");
    assert_eq!(
        run(&[
            "agreement",
            "--config",
            again.to_str().unwrap(),
            "--out",
            out2.to_str().unwrap()
        ])
        .0,
        EXIT_OK
    );
    assert_eq!(
        fs::read(out_dir.join("records.csv")).unwrap(),
        fs::read(out2.join("records.csv")).unwrap()
    );
}

#[test]
fn failed_check_exits_1_but_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let (code, _, _) = run(&[
        "agreement",
        "--d",
        "8",
        "--n",
        "200",
        "--m",
        "64",
        "--steps",
        "5",
        "--n-test",
        "20",
        "--max-train-gap",
        "0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_FAILED);
    assert!(out_dir.join("records.csv").exists());
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(
        summary.contains("max_train_gap") && summary.contains("false"),
        "{summary}"
    );
    assert!(!manifest(&out_dir).all_passed());
}

#[test]
fn regime_warning_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&[
        "concentration",
        "--n",
        "100",
        "--d",
        "100",
        "--out",
        dir.path().to_str().unwrap(),
        "--gram-range",
        "0,1000",
        "--constant",
        "100",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(err.contains("d^(1+α)"), "{err}");
    assert_eq!(manifest(dir.path()).warnings.len(), 1);
}

#[test]
fn decompose_splits_residual_energy() {
    let dir = tempfile::tempdir().unwrap();
    let x = datagen::generate_inputs(&DataSpec::gaussian(40, 5, 3));
    // Labels in the span of the inputs, scaled into [-1, 1].
    let raw = &x * DVector::from_element(5, 1.0);
    let y = &raw / raw.amax();
    let data = Dataset::new(x, y.clone(), "test").unwrap();
    let data_path = dir.path().join("test.csv");
    datagen::save_csv(&data, &data_path).unwrap();
    let out_dir = dir.path().join("out");
    let (code, _, err) = run(&[
        "decompose",
        "--data",
        data_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let energy = fs::read_to_string(out_dir.join("energy.csv")).unwrap();
    let row: Vec<f64> = energy
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(row[1] < 1e-20 * row[2].max(1.0), "{energy}");

    // Predictions equal to the labels leave a zero residual.
    let preds = dir.path().join("preds.csv");
    let mut text = String::from("prediction\n");
    for v in y.iter() {
        text.push_str(&format!("{}\n", datagen::fmt_f64(*v)));
    }
    fs::write(&preds, text).unwrap();
    let (code, _, err) = run(&[
        "decompose",
        "--data",
        data_path.to_str().unwrap(),
        "--predictions",
        preds.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let energy = fs::read_to_string(out_dir.join("energy.csv")).unwrap();
    assert!(
        energy.lines().nth(1).unwrap().starts_with("0.0,0.0,0.0"),
        "{energy}"
    );

    assert_eq!(
        run(&["decompose", "--out", out_dir.to_str().unwrap()]).0,
        EXIT_CONFIG
    );
    let (code, _, err) = run(&[
        "decompose",
        "--data",
        data_path.to_str().unwrap(),
        "--predictions",
        "nope.csv",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_FAILED);
    assert!(err.contains("nope.csv"), "{err}");
}

#[test]
fn cnn_kernel_can_be_written() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&[
        "cnn-ntk",
        "--d",
        "16",
        "--q",
        "4",
        "--n",
        "20",
        "--compare-double",
        "false",
        "--write-kernel",
        "--max-ratio",
        "null",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let k = earlylin::io::read_kernel(&dir.path().join("kernel.csv")).unwrap();
    assert_eq!(k.n(), 20);
    assert_eq!(run(&["cnn-ntk", "--d", "4", "--q", "8"]).0, EXIT_CONFIG);
}
