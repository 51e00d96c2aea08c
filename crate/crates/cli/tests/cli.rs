use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mimogpr_core::document::ModelDocument;
use mimogpr_core::harness::{fit_models, ExperimentConfig, ModelKind};
use mimogpr_core::timeseries::{split, TimeSeriesPanel};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mimogpr"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().unwrap()
}

fn ok(cmd: &mut Command) -> Output {
    let out = run(cmd);
    assert!(out.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let p = dir.join(name);
    ok(bin().arg("synth").args(extra).arg("--out").arg(&p));
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_shape_determinism_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let flags = ["--series", "4", "--months", "183", "--rho", "0.7", "--seed", "42"];
    let a = synth(dir.path(), "a.csv", &flags);
    let b = synth(dir.path(), "b.csv", &flags);
    let panel = TimeSeriesPanel::load(&a).unwrap();
    assert_eq!((panel.len(), panel.num_series()), (183, 4));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let m = json(&dir.path().join("a.csv.manifest.json"));
    assert_eq!(m["command"], "synth");
    assert_eq!(m["config"]["rho"], 0.7);
    assert_eq!(m["outputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let bad = run(bin().args(["synth", "--rho", "1.0", "--out"]).arg(dir.path().join("c.csv")));
    assert_eq!(bad.status.code(), Some(2));
    assert!(!dir.path().join("c.csv").exists());
    let bad = run(bin().args(["synth", "--months", "40", "--out"]).arg(dir.path().join("c.csv")));
    assert_eq!(bad.status.code(), Some(1));
    assert!(!dir.path().join("c.csv").exists());
    assert!(!dir.path().join("c.csv.manifest.json").exists());
}

#[test]
fn describe_noiseless_mean_and_columns() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth(dir.path(), "p.csv", &["--months", "180", "--noise-std", "0", "--trend", "0", "--level", "250"]);
    let out_csv = dir.path().join("t.csv");
    let out = ok(bin().arg("describe").arg("--data").arg(&p).arg("--out").arg(&out_csv));
    let csv = std::fs::read_to_string(&out_csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "series,Minimum,Maximum,Mean,Standard deviation,Skewness,Kurtosis");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[4][0], "Total");
    for r in &rows[..4] {
        let mean: f64 = r[3].parse().unwrap();
        assert!((mean - 250.0).abs() <= 1e-9, "{mean}");
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("| Series | Minimum | Maximum | Mean |"));
    assert!(dir.path().join("t.md").exists());

    let window = ok(bin().arg("describe").arg("--data").arg(&p).args(["--from", "2001-01", "--to", "2001-12"]));
    assert!(String::from_utf8_lossy(&window.stdout).contains("Total"));
    let empty = run(bin().arg("describe").arg("--data").arg(&p).args(["--from", "2002-01", "--to", "2001-12"]));
    assert!(!empty.status.success());
    assert!(String::from_utf8_lossy(&empty.stderr).contains("empty window"));
    let outside = run(bin().arg("describe").arg("--data").arg(&p).args(["--from", "1999-01"]));
    assert!(!outside.status.success());
}

#[test]
fn fit_document_reloads_to_identical_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth(dir.path(), "p.csv", &[]);
    let model = dir.path().join("m.json");
    ok(bin().arg("fit").arg("--data").arg(&p).args(["--train-len", "96", "--valid-len", "60"]).arg("--model").arg(&model));

    let manifest = json(&dir.path().join("m.json.manifest.json"));
    assert_eq!(manifest["derived"]["split"]["test_len"], 27);
    assert_eq!(manifest["input"]["sha256"].as_str().unwrap().len(), 64);

    let doc = ModelDocument::from_json(&std::fs::read_to_string(&model).unwrap()).unwrap();
    let loaded = doc.to_models().unwrap();
    let panel = TimeSeriesPanel::load(&p).unwrap();
    let cfg = ExperimentConfig { models: vec![ModelKind::MimoGpr], ..ExperimentConfig::default() };
    let s = split(&panel, cfg.split, cfg.lags).unwrap();
    let fresh = fit_models(&panel, &cfg, s.valid, None).unwrap();
    for t in 156..183 {
        let w: Vec<Vec<f64>> = (0..4).map(|k| (1..=12).map(|i| panel.values()[(t - i, k)]).collect()).collect();
        let a = loaded.gpr.as_ref().unwrap().step(&w).unwrap();
        let b = fresh.gpr.as_ref().unwrap().step(&w).unwrap();
        assert_eq!(a, b);
    }

    let bad = run(bin().arg("fit").arg("--data").arg(&p).args(["--lags", "200"]).arg("--model").arg(dir.path().join("z.json")));
    assert!(!bad.status.success());
    assert!(!dir.path().join("z.json").exists());
}

#[test]
fn fit_rejects_degenerate_series() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("flat.csv");
    let mut csv = String::from("date,a,b\n");
    for t in 0..60 {
        csv.push_str(&format!("{}-{:02},5,{}\n", 2000 + t / 12, t % 12 + 1, 10.0 + (t as f64).sin()));
    }
    std::fs::write(&p, csv).unwrap();
    let out = run(
        bin().arg("fit").arg("--data").arg(&p).args(["--lags", "3", "--train-len", "30", "--valid-len", "15"]).arg("--model").arg(dir.path().join("m.json")),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("'a'"));
}

fn small_eval(p: &Path, out: &Path, extra: &[&str]) -> Output {
    run(bin()
        .arg("evaluate")
        .arg("--data")
        .arg(p)
        .args(["--restarts", "2", "--horizons", "1,2"])
        .args(extra)
        .arg("--out-dir")
        .arg(out))
}

#[test]
fn evaluate_self_comparison_and_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth(dir.path(), "p.csv", &[]);

    let same = dir.path().join("same");
    let out = small_eval(&p, &same, &["--candidate", "mimo-gpr", "--benchmark", "mimo-gpr"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let acc = std::fs::read_to_string(same.join("accuracy.csv")).unwrap();
    for line in acc.lines().filter(|l| l.contains(",rMAPE,")) {
        assert!(line.ends_with(",1,1"), "{line}");
    }
    for line in acc.lines().filter(|l| l.contains(",DM,")) {
        assert!(line.ends_with(",NA,NA"), "{line}");
    }
    let plae = std::fs::read_to_string(same.join("plae.csv")).unwrap();
    assert!(plae.lines().skip(1).all(|l| l.ends_with(",0,0")));

    let lat = dir.path().join("lat");
    let out = small_eval(
        &p,
        &lat,
        &["--candidate", "mimo-gpr", "--benchmark", "independent-gpr", "--eval-window", "2013-01:2014-01"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&lat.join("manifest.json"));
    assert_eq!(manifest["derived"]["origins"], 13);
    assert_eq!(manifest["derived"]["eval_months"][0], "2013-01");
    let plae = std::fs::read_to_string(lat.join("plae.csv")).unwrap();
    let step = 100.0 / 13.0;
    for line in plae.lines().skip(1) {
        for cell in line.split(',').skip(1) {
            let v: f64 = cell.parse().unwrap();
            assert!(((v / step) - (v / step).round()).abs() < 1e-9, "{v}");
        }
    }
    let md = std::fs::read_to_string(lat.join("plae.md")).unwrap();
    let lattice: Vec<String> = (0..=13).map(|k| format!("{:.1}", k as f64 * step)).collect();
    for row in md.lines().filter(|l| l.starts_with("| series_")) {
        for cell in row.trim_matches('|').split('|').skip(1) {
            assert!(lattice.contains(&cell.trim().to_string()), "{cell}");
        }
    }
    let records = std::fs::read_to_string(lat.join("records.csv")).unwrap();
    assert!(records.starts_with("model,series,origin,h,forecast,actual\n"));
    assert_eq!(records.lines().count(), 1 + 13 * 2 * 4 * 2);
}

#[test]
fn evaluate_errors_leave_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth(dir.path(), "p.csv", &[]);
    let out_dir = dir.path().join("e");
    let unknown = small_eval(&p, &out_dir, &["--candidate", "arima"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("unknown model"));
    let window = small_eval(&p, &out_dir, &["--benchmark", "independent-gpr", "--eval-window", "2010-01:2010-06"]);
    assert_eq!(window.status.code(), Some(1));
    assert!(!out_dir.join("records.csv").exists());
    assert!(!out_dir.join("manifest.json").exists());
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.toml");
    std::fs::write(&cfg, "series = 2\nmonths = 60\nseed = 3\n").unwrap();
    let a = dir.path().join("a.csv");
    ok(bin().arg("synth").arg("--config").arg(&cfg).arg("--months").arg("72").arg("--out").arg(&a));
    let panel = TimeSeriesPanel::load(&a).unwrap();
    assert_eq!((panel.len(), panel.num_series()), (72, 2));

    let j = dir.path().join("synth.json");
    std::fs::write(&j, r#"{"series": 3, "months": 50, "out": "ignored.csv"}"#).unwrap();
    let b = dir.path().join("b.csv");
    ok(bin().arg("synth").arg("--out").arg(&b).arg("--config").arg(&j));
    assert_eq!(TimeSeriesPanel::load(&b).unwrap().num_series(), 3);
    assert!(!dir.path().join("ignored.csv").exists());
}

#[test]
fn help_lists_flags_with_defaults() {
    for (sub, flags) in [
        ("synth", vec!["--series", "--months", "--rho", "--seed", "--out", "--config", "[default: 183]"]),
        ("describe", vec!["--data", "--from", "--to", "--out"]),
        ("fit", vec!["--data", "--lags", "--train-len", "--valid-len", "--model", "--restarts", "--seed", "--with-mlp", "[default: 96]"]),
        ("evaluate", vec!["--horizons", "--candidate", "--benchmark", "--refit-each-origin", "--eval-window", "[default: 1,2,3,6]", "[default: mimo-mlp]"]),
    ] {
        let out = ok(bin().args([sub, "--help"]));
        let text = String::from_utf8_lossy(&out.stdout);
        for f in flags {
            assert!(text.contains(f), "{sub} --help lacks {f}");
        }
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth(dir.path(), "p.csv", &["--series", "3", "--months", "100"]);
    let args = ["--lags", "4", "--train-len", "50", "--valid-len", "25", "--restarts", "3", "--with-mlp", "--mlp-restarts", "3", "--max-epochs", "30"];
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(bin().arg("fit").arg("--data").arg(&p).args(args).arg("--model").arg(&a).env("MIMOGPR_THREADS", "1"));
    ok(bin().arg("fit").arg("--data").arg(&p).args(args).arg("--model").arg(&b).env("MIMOGPR_THREADS", "4"));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let bad = run(bin().arg("fit").arg("--data").arg(&p).args(args).arg("--model").arg(&b).env("MIMOGPR_THREADS", "many"));
    assert!(!bad.status.success());
}
