use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use vsensor::model::ModelKind;
use vsensor::pipeline::{EvalReport, LocationMetrics, ReportMetadata};

fn vsensor(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsensor"))
        .current_dir(dir)
        .env("RUST_LOG", "off")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = vsensor(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    vsensor(dir, args).status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_city(dir: &Path, name: &str, seed: &str) {
    ok(dir, &["synth", "--sensors", "5", "--hours", "240", "--seed", seed, "--out", name]);
}

#[test]
fn synth_train_eval_report_averages_recompute() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--sensors", "8", "--hours", "2000", "--seed", "42", "--out", "city"]);
    ok(d, &["train", "--data", "city", "--model", "sage", "--seed", "0", "--epochs", "2", "--out", "ckpt.vsck"]);
    ok(d, &["eval", "--data", "city", "--ckpt", "ckpt.vsck", "--out", "report"]);

    let report = read_json(&d.join("report/report.json"));
    let locs = report["locations"].as_array().unwrap();
    assert_eq!(locs.len(), 8);
    for key in ["rmse", "nrmse", "grad_rmse"] {
        let mean = locs.iter().map(|l| l[key].as_f64().unwrap()).sum::<f64>() / locs.len() as f64;
        let stored = report["average"][key].as_f64().unwrap();
        assert!((mean - stored).abs() <= 1e-12, "{key}: {mean} vs {stored}");
    }
    let csv = std::fs::read_to_string(d.join("report/report.csv")).unwrap();
    assert!(csv.starts_with("model,rmse,nrmse,grad_rmse\nGraphSAGE,"));
    for m in ["city/manifest.json", "ckpt.vsck.manifest.json", "report/manifest.json"] {
        assert!(d.join(m).is_file(), "missing {m}");
    }
    let manifest = read_json(&d.join("report/manifest.json"));
    assert_eq!(manifest["command"], "eval");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
}

#[test]
fn repeated_pipeline_is_byte_identical() {
    let run = |tmp: &TempDir| {
        let d = tmp.path();
        small_city(d, "city", "7");
        ok(d, &["train", "--data", "city", "--seed", "3", "--epochs", "2", "--out", "m.vsck"]);
        ok(d, &["eval", "--data", "city", "--ckpt", "m.vsck", "--out", "rep"]);
        ok(d, &["predict", "--data", "city", "--ckpt", "m.vsck", "--sensor", "S2", "--out", "p.csv"]);
        ok(d, &["plot", "--data", "city", "--ckpt", "m.vsck", "--sensor", "S2", "--out", "fig.svg"]);
        [
            "city/locations.csv",
            "city/readings.csv",
            "m.vsck",
            "rep/report.json",
            "rep/report.csv",
            "rep/locations.csv",
            "rep/series.csv",
            "p.csv",
            "fig.svg",
        ]
        .map(|f| (f, std::fs::read(d.join(f)).unwrap()))
    };
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for ((name, x), (_, y)) in run(&a).into_iter().zip(run(&b)) {
        assert!(x == y, "{name} differs between runs");
    }
}

fn single_location_report(label: &str, rmse: f64, nrmse: f64, grad: f64) -> String {
    let meta = ReportMetadata {
        model: ModelKind::Sage,
        label: label.into(),
        transferred: label.starts_with("Transferred"),
        seeds: vec![0],
        config_hash: "0000000000000000".into(),
    };
    let loc = LocationMetrics {
        sensor_id: "S1".into(),
        n_frames: 100,
        mean_actual: rmse / nrmse,
        rmse,
        nrmse,
        grad_rmse: grad,
    };
    EvalReport::new(meta, vec![loc], vec![]).unwrap().to_json().unwrap()
}

#[test]
fn compare_reproduces_published_improvement_row() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("base.json"), single_location_report("GraphSAGE", 17.016, 0.526, 9.426)).unwrap();
    std::fs::write(d.join("new.json"), single_location_report("Transferred GraphSAGE", 15.623, 0.481, 6.354)).unwrap();
    let out = ok(d, &["eval", "--compare", "base.json", "new.json", "--out", "cmp"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().last().unwrap().starts_with("Percentage Improvement,"));

    let table = read_json(&d.join("cmp/improvement.json"));
    let imp = &table["improvement"];
    assert!((imp["rmse"].as_f64().unwrap() - 8.19).abs() <= 0.05);
    assert!((imp["grad_rmse"].as_f64().unwrap() - 32.59).abs() <= 0.05);
    assert!((imp["nrmse"].as_f64().unwrap() - 8.576).abs() <= 0.05);
    let csv = std::fs::read_to_string(d.join("cmp/improvement.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn compare_rejects_report_with_tampered_average() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let good = single_location_report("GraphSAGE", 17.016, 0.526, 9.426);
    let mut v: Value = serde_json::from_str(&good).unwrap();
    v["average"]["rmse"] = Value::from(1.0);
    std::fs::write(d.join("a.json"), good).unwrap();
    std::fs::write(d.join("b.json"), v.to_string()).unwrap();
    assert_eq!(code(d, &["eval", "--compare", "a.json", "b.json"]), 1);
}

#[test]
fn plot_with_identical_series_has_two_coincident_paths() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_city(d, "city", "11");
    let readings = std::fs::read_to_string(d.join("city/readings.csv")).unwrap();
    let mut csv = String::from("timestamp,predicted_no2_ugm3\n");
    for line in readings.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[1] == "S1" {
            csv.push_str(&format!("{},{}\n", f[0], f[2]));
        }
    }
    std::fs::write(d.join("same.csv"), csv).unwrap();
    ok(d, &[
        "plot", "--data", "city", "--sensor", "S1", "--predictions", "same.csv", "--start",
        "2023-01-02T10:00:00Z", "--hours", "100", "--out", "same.svg",
    ]);
    let svg = std::fs::read_to_string(d.join("same.svg")).unwrap();
    assert_eq!(svg.matches("<path").count(), 2);
    let paths: Vec<&str> = svg
        .lines()
        .filter(|l| l.starts_with("<path"))
        .map(|l| l.split("d=\"").nth(1).unwrap().split('"').next().unwrap())
        .collect();
    assert_eq!(paths[0], paths[1]);
    assert_eq!(paths[0].split(' ').count(), 100);
}

#[test]
fn config_file_fills_flags_and_flags_win() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("cfg.json"), r#"{"sensors": 4, "hours": 50, "seed": 9}"#).unwrap();
    ok(d, &["synth", "--config", "cfg.json", "--hours", "30", "--out", "c"]);
    let m = read_json(&d.join("c/manifest.json"));
    assert_eq!(m["config"]["n_sensors"], 4);
    assert_eq!(m["config"]["n_hours"], 30);
    assert_eq!(m["seeds"][0], 9);
    let locs = std::fs::read_to_string(d.join("c/locations.csv")).unwrap();
    assert_eq!(locs.lines().count(), 5);
}

#[test]
fn transfer_checkpoint_evaluates_as_fine_tuning() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_city(d, "target", "1");
    ok(d, &["synth", "--source-city", "--sensors", "10", "--hours", "240", "--seed", "2", "--out", "source"]);
    ok(d, &[
        "transfer", "--source", "source", "--target", "target", "--epochs", "2", "--finetune-epochs", "1",
        "--freeze", "layer0.", "--out", "t.vsck",
    ]);
    ok(d, &["eval", "--data", "target", "--ckpt", "t.vsck", "--out", "rep"]);
    let report = read_json(&d.join("rep/report.json"));
    assert_eq!(report["metadata"]["label"], "Transferred GraphSAGE");
    assert_eq!(report["metadata"]["transferred"], true);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(code(d, &["--help"]), 0);
    assert_eq!(code(d, &["--version"]), 0);
    assert_eq!(code(d, &["train", "--help"]), 0);
    assert_eq!(code(d, &["frobnicate"]), 2);
    assert_eq!(code(d, &["synth", "--out", "x", "--no-such-flag"]), 2);
    assert_eq!(code(d, &["train", "--data", "city"]), 2);
    assert_eq!(code(d, &["synth", "--sensors", "many", "--out", "x"]), 2);

    assert_eq!(code(d, &["train", "--data", "missing", "--out", "m.vsck"]), 1);
    small_city(d, "city", "5");
    assert_eq!(code(d, &["train", "--data", "city", "--model", "transformer", "--out", "m.vsck"]), 1);
    assert_eq!(code(d, &["train", "--data", "city", "--lr=-1", "--out", "m.vsck"]), 1);
    assert_eq!(code(d, &["synth", "--sensors", "0", "--out", "y"]), 1);

    std::fs::write(d.join("junk.vsck"), b"not a checkpoint").unwrap();
    assert_eq!(code(d, &["predict", "--data", "city", "--ckpt", "junk.vsck", "--sensor", "S1", "--out", "p.csv"]), 1);

    std::fs::create_dir(d.join("bad")).unwrap();
    std::fs::copy(d.join("city/locations.csv"), d.join("bad/locations.csv")).unwrap();
    std::fs::write(d.join("bad/readings.csv"), "timestamp,sensor,no2\n2023-01-01T00:00:00Z,S1,3\n").unwrap();
    let out = vsensor(d, &["eval", "--data", "bad", "--model", "mlp", "--out", "r"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());

    ok(d, &["train", "--data", "city", "--epochs", "1", "--out", "m.vsck"]);
    assert_eq!(code(d, &["predict", "--data", "city", "--ckpt", "m.vsck", "--sensor", "ZZ", "--out", "p.csv"]), 1);
}
