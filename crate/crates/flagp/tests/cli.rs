use std::path::Path;
use std::process::{Command, Output};

fn flagp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flagp")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = flagp(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let out = flagp(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["simulate", "fit", "predict", "calibrate", "map", "score", "bench"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn simulate_is_byte_identical_under_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--preset", "biased", "--runs", "60", "--seed", "4", "--out", s(&a)]);
    ok(&["simulate", "--preset", "biased", "--runs", "60", "--seed", "4", "--out", s(&b)]);
    for f in ["inputs.csv", "outputs.csv", "field_inputs.csv", "field_outputs.csv", "test_truth.csv", "ranges.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let outputs = std::fs::read_to_string(a.join("outputs.csv")).unwrap();
    assert_eq!(outputs.lines().count(), 61);
    assert_eq!(outputs.lines().next().unwrap().split(',').count(), 100);
    let field = std::fs::read_to_string(a.join("field_outputs.csv")).unwrap();
    assert_eq!(field.lines().count(), 11);
}

#[test]
fn unbiased_preset_shapes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--preset", "unbiased", "--out", s(dir.path())]);
    let inputs = std::fs::read_to_string(dir.path().join("inputs.csv")).unwrap();
    assert_eq!(inputs.lines().count(), 243);
    assert_eq!(inputs.lines().next().unwrap(), "R,C");
    let outputs = std::fs::read_to_string(dir.path().join("outputs.csv")).unwrap();
    assert_eq!(outputs.lines().next().unwrap().split(',').count(), 25);
}

#[test]
fn end_to_end_unbiased_recipe() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 3, "calibration": {"n_samples": 600, "n_burn": 200, "m_c": 30}, "emulator": {"m": 30, "samples": 200}}"#).unwrap();
    let cfg = s(&cfg);
    ok(&["simulate", "--preset", "unbiased", "--runs", "98", "--config", cfg, "--out", s(d)]);
    let model = d.join("model.flagp");
    ok(&["fit", "--config", cfg, "--inputs", s(&d.join("inputs.csv")), "--outputs", s(&d.join("outputs.csv")),
        "--ranges", s(&d.join("ranges.json")), "--out", s(&model)]);
    assert!(d.join("model.flagp.manifest.json").exists());
    ok(&["predict", "--config", cfg, "--model", s(&model), "--inputs", s(&d.join("inputs.csv")), "--out", s(&d.join("pred.csv"))]);
    let (fx, fy, test) = (d.join("field_inputs.csv"), d.join("field_outputs.csv"), d.join("test_inputs.csv"));
    let field = ["--model", s(&model), "--field-inputs", s(&fx), "--field-outputs", s(&fy)];
    let cal = d.join("cal");
    let mut args = vec!["calibrate", "--config", cfg, "--test", s(&test), "--out-dir", s(&cal)];
    args.extend(field);
    ok(&args);
    for f in ["posterior.csv", "diagnostics.json", "predictions.csv", "manifest.json"] {
        assert!(cal.join(f).exists(), "{f}");
    }
    let score = d.join("score.json");
    ok(&["score", "--pred", s(&cal.join("predictions.csv")), "--truth", s(&d.join("test_truth.csv")), "--out", s(&score)]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&score).unwrap()).unwrap();
    assert!(report["mape"].as_f64().unwrap() < 0.1, "{report}");

    let map = d.join("map.json");
    let mut args = vec!["map", "--config", cfg, "--out", s(&map)];
    args.extend(field);
    ok(&args);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&map).unwrap()).unwrap();
    let c = m["theta"][0].as_f64().unwrap();
    assert!((0.05..=0.15).contains(&c));
    assert_eq!(m["restarts"].as_array().unwrap().len(), 7);

    // same inputs and seed, same posterior bytes
    let cal2 = d.join("cal2");
    let mut args = vec!["calibrate", "--config", cfg, "--out-dir", s(&cal2), "--discrepancy", "none"];
    args.extend(field);
    ok(&args);
    assert_eq!(std::fs::read(cal.join("posterior.csv")).unwrap(), std::fs::read(cal2.join("posterior.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad_cfg = d.join("bad.json");
    std::fs::write(&bad_cfg, r#"{"calibration": {"n_samples": 5, "n_burn": 9}}"#).unwrap();
    let out = flagp(&["simulate", "--preset", "unbiased", "--config", s(&bad_cfg), "--out", s(d)]);
    assert_eq!(out.status.code(), Some(2));

    ok(&["simulate", "--preset", "unbiased", "--runs", "40", "--out", s(d)]);
    let broken = d.join("broken.csv");
    std::fs::write(&broken, "R,C\n0.1,0.1\n0.2,zero\n").unwrap();
    let out = flagp(&["fit", "--inputs", s(&broken), "--outputs", s(&d.join("outputs.csv")), "--ranges", s(&d.join("ranges.json")), "--out", s(&d.join("m"))]);
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 3, column 2"), "{msg}");

    let out = flagp(&["fit", "--inputs", s(&d.join("missing.csv")), "--outputs", s(&d.join("outputs.csv")), "--ranges", s(&d.join("ranges.json")), "--out", s(&d.join("m"))]);
    assert_eq!(out.status.code(), Some(3));

    // every run identical: the outputs carry no information
    let flat = d.join("flat.csv");
    let header = std::fs::read_to_string(d.join("outputs.csv")).unwrap().lines().next().unwrap().to_string();
    let row = vec!["1.0"; header.split(',').count()].join(",");
    std::fs::write(&flat, format!("{header}\n{}\n", vec![row; 40].join("\n"))).unwrap();
    let out = flagp(&["fit", "--inputs", s(&d.join("inputs.csv")), "--outputs", s(&flat), "--ranges", s(&d.join("ranges.json")), "--out", s(&d.join("m"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
