//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use mimogpr_core::gpr::{kernel_gram, lml_gradient, log_marginal_likelihood, GprModel, KernelHyperparams, DEFAULT_JITTER, N_HYPER};
use mimogpr_core::harness::{
    audit_records, fit_models, generate_synthetic_panel, rolling_evaluate, ExperimentConfig, ForecastRecord, ModelKind,
    RefitPolicy, SyntheticSpec,
};
use mimogpr_core::metrics::{dm_test, mdm_factor, plae, rmape, ErrorSeries, Loss};
use mimogpr_core::mimo::{fit_combiner, FirstStageMatrix};
use mimogpr_core::mlp::{jacobian, train_lm, MlpParams, TrainConfig};
use mimogpr_core::timeseries::{split, Standardizer, SupervisedDataset, TimeSeriesPanel};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, what: &str, ok: bool, detail: &str) {
    println!("criterion {n}: {} - {what} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_theta(r: &mut ChaCha8Rng) -> KernelHyperparams {
    KernelHyperparams {
        nu: r.random_range(0.3..2.0),
        lambda: r.random_range(0.3..2.5),
        gamma: r.random_range(0.0..0.5),
        kappa: r.random_range(0.0..0.5),
        sigma: r.random_range(0.05..1.0),
    }
}

/// Independent transcription of the kernel, element by element.
fn k_oracle(a: &[f64], b: &[f64], t: &KernelHyperparams) -> f64 {
    let mut d2 = 0.0;
    let mut dot = 0.0;
    for i in 0..a.len() {
        d2 += (a[i] - b[i]) * (a[i] - b[i]);
        dot += a[i] * b[i];
    }
    t.nu * t.nu * (-d2 / (2.0 * t.lambda * t.lambda)).exp() + t.gamma * dot + t.kappa
}

fn cross(a: &DMatrix<f64>, b: &DMatrix<f64>, t: &KernelHyperparams) -> DMatrix<f64> {
    let ra: Vec<Vec<f64>> = (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect();
    let rb: Vec<Vec<f64>> = (0..b.nrows()).map(|i| b.row(i).iter().copied().collect()).collect();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| k_oracle(&ra[i], &rb[j], t))
}

#[test]
fn criterion_1_gpr_posterior() {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(2..=20);
        let p = r.random_range(1..=5);
        let m = r.random_range(1..=6);
        let x = DMatrix::from_fn(n, p, |_, _| r.random_range(-2.0..2.0));
        let y = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
        let xs = DMatrix::from_fn(m, p, |_, _| r.random_range(-2.5..2.5));
        let t = random_theta(&mut r);
        let model = GprModel::new(x.clone(), y.clone(), t, Standardizer::identity(p), DEFAULT_JITTER).unwrap();
        let pred = model.predict(&xs).unwrap();
        let noise = t.sigma * t.sigma + model.jitter();
        let kinv = (cross(&x, &x, &t) + DMatrix::identity(n, n) * noise).try_inverse().unwrap();
        let ks = cross(&xs, &x, &t);
        let mean = &ks * &kinv * &y;
        let cov = cross(&xs, &xs, &t) - &ks * &kinv * ks.transpose();
        worst = worst.max((&pred.mean - mean).amax()).max((&pred.cov - cov).amax());
    }
    let mut interp: f64 = 0.0;
    for _ in 0..10 {
        let n = r.random_range(2..=20);
        let x = DMatrix::from_fn(n, 2, |_, _| r.random_range(-3.0..3.0));
        let y = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        let t = KernelHyperparams { nu: 1.0, lambda: 0.5, gamma: 0.0, kappa: 0.0, sigma: 0.0 };
        let model = GprModel::new(x.clone(), y.clone(), t, Standardizer::identity(2), 1e-12).unwrap();
        interp = interp.max((model.predict_mean(&x).unwrap() - y).amax());
    }
    let secs = start.elapsed();
    verdict(
        1,
        "posterior equals dense-inverse evaluation; noiseless interpolation",
        worst <= 1e-9 && interp <= 1e-6 && secs < Duration::from_secs(10),
        &format!("max abs diff {worst:.2e} <= 1e-9, interpolation {interp:.2e} <= 1e-6, {secs:.2?} < 10s"),
    );
}

#[test]
fn criterion_2_lml_gradient() {
    let start = Instant::now();
    let mut r = rng(202);
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..50 {
        let n = r.random_range(3..=20);
        let p = r.random_range(1..=5);
        let x = DMatrix::from_fn(n, p, |_, _| r.random_range(-2.0..2.0));
        let y = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
        let mut t = random_theta(&mut r);
        t.gamma = t.gamma.max(0.01);
        t.kappa = t.kappa.max(0.01);
        let g = lml_gradient(&x, &y, &t).unwrap();
        let l = t.to_log();
        for k in 0..N_HYPER {
            let (mut up, mut dn) = (l, l);
            up[k] += h;
            dn[k] -= h;
            let fu = log_marginal_likelihood(&x, &y, &KernelHyperparams::from_log(&up)).unwrap();
            let fd = log_marginal_likelihood(&x, &y, &KernelHyperparams::from_log(&dn)).unwrap();
            let num = (fu - fd) / (2.0 * h);
            worst = worst.max((g[k] - num).abs() / num.abs().max(1e-6));
        }
    }
    let secs = start.elapsed();
    verdict(
        2,
        "LML gradient equals central finite differences",
        worst <= 1e-4 && secs < Duration::from_secs(30),
        &format!("max relative error {worst:.2e} <= 1e-4, {secs:.2?} < 30s"),
    );
}

#[test]
fn criterion_3_kernel_validity() {
    let mut r = rng(303);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let n = r.random_range(2..=25);
        let p = r.random_range(1..=6);
        let mut x = DMatrix::from_fn(n, p, |_, _| r.random_range(-3.0..3.0));
        if n > 2 {
            let src = x.row(0).clone_owned();
            x.row_mut(1).copy_from(&src);
        }
        let t = random_theta(&mut r);
        let s2 = t.sigma * t.sigma;
        let k = kernel_gram(&x, &t) + DMatrix::identity(n, n) * s2;
        let min = SymmetricEigen::new(k).eigenvalues.min();
        worst = worst.min(min - (s2 - 1e-10));
    }
    verdict(
        3,
        "K(X,X) + sigma^2 I has minimum eigenvalue >= sigma^2 - 1e-10",
        worst >= 0.0,
        &format!("smallest margin {worst:.3e} over 100 input sets"),
    );
}

#[test]
fn criterion_4_combiner() {
    let mut r = rng(404);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let m = r.random_range(1..=5);
        let n = r.random_range(m + 1..=20);
        let f = DMatrix::from_fn(n, m, |_, _| r.random_range(-3.0..3.0));
        let y = DMatrix::from_fn(n, m, |_, _| r.random_range(-3.0..3.0));
        let lam = [0.0, 1e-3, 0.1, 1.0][r.random_range(0..4)];
        let w = fit_combiner(&FirstStageMatrix::new(f.clone(), y.clone(), 0..n).unwrap(), lam).unwrap();
        let mut a = DMatrix::from_element(n, m + 1, 1.0);
        a.view_mut((0, 0), (n, m)).copy_from(&f);
        let mut g = a.transpose() * &a;
        for i in 0..m {
            g[(i, i)] += lam;
        }
        let want = y.transpose() * &a * g.try_inverse().unwrap();
        worst = worst.max((&w.weights - &want).amax() / want.amax().max(1.0));
    }
    let mut interp: f64 = 0.0;
    for _ in 0..10 {
        let m = r.random_range(1..=5);
        let f = DMatrix::from_fn(m + 1, m, |_, _| r.random_range(-3.0..3.0));
        let y = DMatrix::from_fn(m + 1, m, |_, _| r.random_range(-3.0..3.0));
        let w = fit_combiner(&FirstStageMatrix::new(f.clone(), y.clone(), 0..m + 1).unwrap(), 0.0).unwrap();
        for i in 0..=m {
            let row: Vec<f64> = f.row(i).iter().copied().collect();
            let out = w.combine(&row).unwrap();
            for s in 0..m {
                interp = interp.max((out[s] - y[(i, s)]).abs());
            }
        }
    }
    verdict(
        4,
        "combiner equals regularized normal equations; square case interpolates",
        worst <= 1e-10 && interp <= 1e-8,
        &format!("max relative diff {worst:.2e} <= 1e-10, square-case residual {interp:.2e}"),
    );
}

#[test]
fn criterion_5_mlp() {
    let mut r = rng(505);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (q, p) = (r.random_range(1..=4), r.random_range(1..=4));
        let np = q * (p + 2) + 1;
        let theta = DVector::from_fn(np, |_, _| r.random_range(-1.5..1.5));
        let params = MlpParams::from_flat(q, p, &theta).unwrap();
        let n = 6;
        let data = SupervisedDataset::new(
            DMatrix::from_fn(n, p, |_, _| r.random_range(-2.0..2.0)),
            DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0)),
            0,
        )
        .unwrap();
        let j = jacobian(&params, &data).unwrap();
        let h = 1e-6;
        for k in 0..np {
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[k] += h;
            dn[k] -= h;
            let (mu, md) = (MlpParams::from_flat(q, p, &up).unwrap(), MlpParams::from_flat(q, p, &dn).unwrap());
            for i in 0..n {
                let x: Vec<f64> = data.inputs.row(i).iter().copied().collect();
                let fd = (mu.forward(&x).unwrap() - md.forward(&x).unwrap()) / (2.0 * h);
                worst = worst.max((j[(i, k)] - fd).abs() / fd.abs().max(1e-3));
            }
        }
    }
    let xs = |k: usize, lo: f64, hi: f64| -> Vec<f64> { (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect() };
    let ds = |x: Vec<f64>| {
        let n = x.len();
        SupervisedDataset::new(
            DMatrix::from_fn(n, 1, |i, _| x[i]),
            DVector::from_fn(n, |i, _| 0.5 * x[i].tanh() + 0.1),
            0,
        )
        .unwrap()
    };
    let (train, valid) = (ds(xs(50, -2.0, 2.0)), ds(xs(20, -1.9, 1.9)));
    let report = train_lm(&train, &valid, 1, &TrainConfig::default()).unwrap();
    let rmse = (report.params.sse(&train) / 50.0).sqrt();
    let monotone = report
        .restarts
        .iter()
        .all(|t| t.accepted_train_sse.windows(2).all(|w| w[1] < w[0]));
    verdict(
        5,
        "MLP Jacobian, known-function recovery, monotone accepted steps",
        worst <= 1e-5 && rmse <= 1e-3 && monotone,
        &format!("jacobian rel err {worst:.2e} <= 1e-5, rmse {rmse:.2e} <= 1e-3, strictly decreasing SSE: {monotone}"),
    );
}

#[test]
fn criterion_6_metrics() {
    let mut r = rng(606);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let n = 13;
        let h = r.random_range(1..=4);
        let ea: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let eb: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let ones = vec![1.0; n];
        let got = dm_test(
            &ErrorSeries::new(ea.clone(), ones.clone(), h).unwrap(),
            &ErrorSeries::new(eb.clone(), ones, h).unwrap(),
            h,
            Loss::Absolute,
        )
        .unwrap();
        // Direct transcription: explicit autocovariance sums.
        let d: Vec<f64> = (0..n).map(|t| ea[t].abs() - eb[t].abs()).collect();
        let dbar = d.iter().sum::<f64>() / n as f64;
        let mut v = 0.0;
        for k in 0..h {
            let mut g = 0.0;
            for t in k..n {
                g += (d[t] - dbar) * (d[t - k] - dbar);
            }
            g /= n as f64;
            v += if k == 0 { g } else { 2.0 * (1.0 - k as f64 / h as f64) * g };
        }
        let want = dbar / (v / n as f64).sqrt();
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    let factor_err = (mdm_factor(13, 1).unwrap() - (12.0f64 / 13.0).sqrt()).abs();
    let lattice = |wins: usize| {
        let a: Vec<f64> = (0..13).map(|t| if t < wins { 1.0 } else { 3.0 }).collect();
        let e = |v: Vec<f64>| ErrorSeries::new(v, vec![100.0; 13], 1).unwrap();
        format!("{:.1}", plae(&e(a), &e(vec![2.0; 13])).unwrap())
    };
    let (p9, p1) = (lattice(9), lattice(1));
    verdict(
        6,
        "DM transcription, M-DM factor, PLAE lattice",
        worst <= 1e-10 && factor_err <= 1e-12 && p9 == "69.2" && p1 == "7.7",
        &format!("dm diff {worst:.2e}, factor diff {factor_err:.2e}, plae 9/13 = {p9}, 1/13 = {p1}"),
    );
}

fn shipped_panel() -> TimeSeriesPanel {
    generate_synthetic_panel(&SyntheticSpec {
        series: 4,
        months: 183,
        rho: 0.7,
        seed: 42,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn shipped_config() -> ExperimentConfig {
    ExperimentConfig::default()
}

/// One evaluation shared by criteria 7 and 8.
fn shipped_run() -> &'static (Vec<ForecastRecord>, Duration) {
    static RUN: OnceLock<(Vec<ForecastRecord>, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let recs = rolling_evaluate(&shipped_panel(), &shipped_config()).unwrap();
        (recs, start.elapsed())
    })
}

#[test]
fn criterion_7_harness_hygiene() {
    let panel = shipped_panel();
    let cfg = shipped_config();
    let (recs, _) = shipped_run();

    // Exhaustive index audit: rebuild every lag window from the record's
    // origin and check that the target row is never inside it.
    let p = cfg.lags;
    let mut leaks = audit_records(recs).len();
    for r in recs.iter() {
        let rows: Vec<usize> = (1..=p).map(|i| r.origin_row - i).collect();
        if rows.contains(&r.target_row) || rows.iter().any(|&x| x > r.latest_input_row) {
            leaks += 1;
        }
    }
    let refit_cfg = ExperimentConfig {
        models: vec![ModelKind::MimoGpr, ModelKind::IndependentGpr],
        horizons: vec![1, 2],
        refit_policy: RefitPolicy::RefitEachOrigin,
        eval_window: Some(156..162),
        ..shipped_config()
    };
    let refit = rolling_evaluate(&panel, &refit_cfg).unwrap();
    leaks += audit_records(&refit).len();

    // Recursive h = 1 against a direct one-step call on the same models.
    let s = split(&panel, cfg.split, p).unwrap();
    let fitted = fit_models(&panel, &cfg, s.valid.clone(), None).unwrap();
    let gpr = fitted.gpr.as_ref().unwrap();
    let mut mismatches = 0;
    let mut checked = 0;
    for r in recs.iter().filter(|r| r.h == 1) {
        let windows: Vec<Vec<f64>> = (0..panel.num_series())
            .map(|k| (1..=p).map(|i| panel.values()[(r.origin_row - i, k)]).collect())
            .collect();
        let direct = match r.model {
            ModelKind::MimoGpr => gpr.step(&windows).unwrap(),
            ModelKind::IndependentGpr => gpr.first_stage(&windows).unwrap(),
            ModelKind::MimoMlp => fitted.mlp_for(1).unwrap().step(&windows).unwrap(),
        };
        checked += 1;
        if direct[r.series_index].to_bits() != r.forecast.to_bits() {
            mismatches += 1;
        }
    }
    verdict(
        7,
        "no forecast sees its target month; recursive h=1 equals direct one-step",
        leaks == 0 && mismatches == 0 && checked > 0,
        &format!(
            "{} records audited ({} under refit), {leaks} leaks, {mismatches}/{checked} h=1 mismatches",
            recs.len(),
            refit.len()
        ),
    );
}

fn errors(recs: &[ForecastRecord], model: ModelKind, s: usize, h: usize) -> ErrorSeries {
    let sel: Vec<&ForecastRecord> = recs.iter().filter(|r| r.model == model && r.series_index == s && r.h == h).collect();
    let actual: Vec<f64> = sel.iter().map(|r| r.actual.unwrap()).collect();
    let fc: Vec<f64> = sel.iter().map(|r| r.forecast).collect();
    ErrorSeries::from_forecasts(&actual, &fc, h).unwrap()
}

#[test]
fn criterion_8_end_to_end_direction() {
    let (recs, elapsed) = shipped_run();
    let mut vs_mlp = Vec::new();
    let mut vs_ind = Vec::new();
    for s in 0..4 {
        let g = errors(recs, ModelKind::MimoGpr, s, 2);
        vs_mlp.push(rmape(&g, &errors(recs, ModelKind::MimoMlp, s, 2)).unwrap());
        vs_ind.push(rmape(&g, &errors(recs, ModelKind::IndependentGpr, s, 2)).unwrap());
    }
    let wins_mlp = vs_mlp.iter().filter(|v| **v < 1.0).count();
    let wins_ind = vs_ind.iter().filter(|v| **v < 1.0).count();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    verdict(
        8,
        "MIMO GPR beats MIMO MLP and independent GPR at h=2 on >= 3 of 4 series",
        wins_mlp >= 3 && wins_ind >= 3 && *elapsed < Duration::from_secs(300),
        &format!(
            "rMAPE vs MLP [{}] ({wins_mlp}/4), vs independent [{}] ({wins_ind}/4), run {elapsed:.1?} < 300s",
            fmt(&vs_mlp),
            fmt(&vs_ind)
        ),
    );
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mimogpr"))
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{:?} failed: {}", cmd, String::from_utf8_lossy(&out.stderr));
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

#[test]
fn criterion_9_determinism_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| -> PathBuf { dir.path().join(name) };
    let mut checks: Vec<(&str, bool)> = Vec::new();

    run_ok(bin().args(["synth", "--series", "3", "--months", "120", "--seed", "5", "--out"]).arg(d("p.csv")));
    run_ok(bin().arg("synth").arg("--config").arg(d("p.csv.manifest.json")).arg("--out").arg(d("p2.csv")));
    checks.push(("synth", same_bytes(&d("p.csv"), &d("p2.csv"))));

    run_ok(bin().arg("describe").arg("--data").arg(d("p.csv")).arg("--out").arg(d("t.csv")));
    run_ok(bin().arg("describe").arg("--config").arg(d("t.csv.manifest.json")).arg("--out").arg(d("t2.csv")));
    checks.push(("describe", same_bytes(&d("t.csv"), &d("t2.csv")) && same_bytes(&d("t.md"), &d("t2.md"))));

    let small = ["--lags", "6", "--train-len", "60", "--valid-len", "30", "--restarts", "2", "--mlp-restarts", "2", "--max-epochs", "40", "--horizons", "1,2"];
    run_ok(bin().arg("fit").arg("--data").arg(d("p.csv")).args(small).arg("--with-mlp").arg("--model").arg(d("m.json")));
    run_ok(
        bin()
            .arg("fit")
            .arg("--config")
            .arg(d("m.json.manifest.json"))
            .arg("--model")
            .arg(d("m2.json"))
            .env("MIMOGPR_THREADS", "1"),
    );
    checks.push(("fit", same_bytes(&d("m.json"), &d("m2.json"))));

    run_ok(bin().arg("evaluate").arg("--data").arg(d("p.csv")).args(small).arg("--out-dir").arg(d("e1")));
    run_ok(bin().arg("evaluate").arg("--config").arg(d("e1/manifest.json")).arg("--out-dir").arg(d("e2")));
    let eval_same = ["records.csv", "accuracy.csv", "accuracy.md", "plae.csv", "plae.md"]
        .iter()
        .all(|f| same_bytes(&d("e1").join(f), &d("e2").join(f)));
    checks.push(("evaluate", eval_same));

    let ok = checks.iter().all(|(_, v)| *v);
    let detail = checks.iter().map(|(n, v)| format!("{n}: {}", if *v { "identical" } else { "DIFFERENT" })).collect::<Vec<_>>().join(", ");
    verdict(9, "reruns from manifests reproduce outputs byte for byte", ok, &detail);
}
