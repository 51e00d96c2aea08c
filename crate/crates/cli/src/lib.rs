//! Command-line front end: `synth`, `describe`, `fit` and `evaluate`.

pub mod config;
pub mod manifest;
pub mod output;

use std::ffi::OsString;
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mimogpr_core::document::ModelDocument;
use mimogpr_core::gpr::FitConfig;
use mimogpr_core::harness::{
    fit_models, generate_synthetic_panel, records_to_csv, rolling_evaluate, ExperimentConfig, ModelKind, RefitPolicy,
    SyntheticSpec,
};
use mimogpr_core::metrics::Loss;
use mimogpr_core::mlp::TrainConfig;
use mimogpr_core::report::{comparison_table, describe_csv, describe_markdown, describe_with_total};
use mimogpr_core::timeseries::{split, SplitSpec, TimeSeriesPanel, YearMonth};
use serde::Serialize;
use serde_json::json;

use manifest::{now, FileDigest, RunManifest};
use output::Staged;

#[derive(Debug, Parser)]
#[command(name = "mimogpr", version, about = "Two-step MIMO Gaussian process forecasting for panels of monthly series")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic seasonal panel.
    Synth(SynthArgs),
    /// Descriptive statistics per series plus the row-sum total.
    Describe(DescribeArgs),
    /// Fit per-series GPs and the combiner; optionally the MLP benchmark.
    Fit(FitArgs),
    /// Rolling-origin evaluation with accuracy and PLAE reports.
    Evaluate(EvaluateArgs),
}

fn parse_rho(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !(0.0..1.0).contains(&v) {
        return Err(format!("rho must satisfy 0 <= rho < 1, got {v}"));
    }
    Ok(v)
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: mimogpr_core::Error| e.to_string())
}

fn parse_loss(s: &str) -> std::result::Result<Loss, String> {
    match s {
        "absolute" => Ok(Loss::Absolute),
        "squared" => Ok(Loss::Squared),
        _ => Err(format!("unknown loss '{s}' (expected absolute or squared)")),
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    /// Number of series.
    #[arg(long, default_value_t = 4)]
    pub series: usize,
    /// Number of months (at least 48).
    #[arg(long, default_value_t = 183)]
    pub months: usize,
    /// Cross-series correlation of the innovations, in [0, 1).
    #[arg(long, default_value_t = 0.7, value_parser = parse_rho)]
    pub rho: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub level: f64,
    /// Seasonal amplitude.
    #[arg(long, default_value_t = 20.0)]
    pub amplitude: f64,
    /// Trend slope per month.
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
    pub trend: f64,
    /// AR(1) coefficient of the shared innovation component.
    #[arg(long, default_value_t = 0.8, allow_negative_numbers = true)]
    pub persistence: f64,
    #[arg(long, default_value_t = 5.0)]
    pub noise_std: f64,
    /// First month, YYYY-MM.
    #[arg(long, default_value = "2000-01")]
    pub start: YearMonth,
    /// Manifest path (default: <out>.manifest.json).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// TOML or JSON file of flag values, or a previous run manifest.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DescribeArgs {
    /// Panel CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// First month of the window, YYYY-MM (default: panel start).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<YearMonth>,
    /// Last month of the window, YYYY-MM, inclusive (default: panel end).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to: Option<YearMonth>,
    /// CSV output; a Markdown twin is written with the .md extension.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Manifest path (default: <out>.manifest.json when --out is given).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// TOML or JSON file of flag values, or a previous run manifest.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Settings shared by `fit` and `evaluate`.
#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ModelArgs {
    /// Panel CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Lag order p.
    #[arg(long, default_value_t = 12)]
    pub lags: usize,
    #[arg(long, default_value_t = 96)]
    pub train_len: usize,
    #[arg(long, default_value_t = 60)]
    pub valid_len: usize,
    /// Forecast horizons in months.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,6")]
    pub horizons: Vec<usize>,
    /// GP hyperparameter restarts.
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// GP optimizer iteration cap.
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    /// MLP initializations per network.
    #[arg(long, default_value_t = 10)]
    pub mlp_restarts: usize,
    #[arg(long, default_value_t = 500)]
    pub max_epochs: usize,
    /// MLP early-stopping patience in epochs.
    #[arg(long, default_value_t = 25)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    fn experiment(&self, models: Vec<ModelKind>) -> ExperimentConfig {
        let mut horizons = self.horizons.clone();
        horizons.sort_unstable();
        horizons.dedup();
        ExperimentConfig {
            lags: self.lags,
            split: SplitSpec { train_len: self.train_len, valid_len: self.valid_len },
            horizons,
            models,
            seed: self.seed,
            gpr: FitConfig { restarts: self.restarts, max_iters: self.max_iters, ..FitConfig::default() },
            mlp: TrainConfig {
                restarts: self.mlp_restarts,
                max_epochs: self.max_epochs,
                patience: self.patience,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: ModelArgs,
    /// Output model document (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Also fit the MIMO MLP benchmark, one network set per horizon.
    #[arg(long)]
    pub with_mlp: bool,
    /// Manifest path (default: <model>.manifest.json).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// TOML or JSON file of flag values, or a previous run manifest.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: ModelArgs,
    /// Model under evaluation: mimo-gpr, mimo-mlp or independent-gpr.
    #[arg(long, default_value = "mimo-gpr", value_parser = parse_model)]
    pub candidate: ModelKind,
    /// Benchmark model.
    #[arg(long, default_value = "mimo-mlp", value_parser = parse_model)]
    pub benchmark: ModelKind,
    /// Refit (warm-started) at every origin instead of fitting once.
    #[arg(long)]
    pub refit_each_origin: bool,
    /// Origins to score: YYYY-MM:YYYY-MM (inclusive months) or a:b (rows,
    /// half-open). Default: every test origin whose longest horizon lands
    /// inside the panel.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_window: Option<String>,
    /// Loss for the Diebold–Mariano tests: absolute or squared.
    #[arg(long, default_value = "absolute", value_parser = parse_loss)]
    #[serde(serialize_with = "ser_loss")]
    pub loss: Loss,
    /// Output directory for records, reports and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// TOML or JSON file of flag values, or a previous run manifest.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn ser_loss<S: serde::Serializer>(l: &Loss, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(match l {
        Loss::Absolute => "absolute",
        Loss::Squared => "squared",
    })
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MIMOGPR_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("MIMOGPR_THREADS='{v}' is not a count"))?;
        if n > 0 {
            // A second initialization in the same process is harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the command. Usage errors
/// come back as `clap::Error`.
pub fn run(argv: Vec<OsString>) -> Result<()> {
    let argv = config::expand(argv)?;
    let cli = Cli::try_parse_from(argv)?;
    init_threads()?;
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Describe(a) => cmd_describe(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn finish(mut manifest: RunManifest, mut staged: Staged, manifest_path: &Path) -> Result<()> {
    manifest.outputs = staged.digests().into_iter().map(|(path, sha256)| FileDigest { path, sha256 }).collect();
    manifest.finished_at = now();
    staged.add(manifest_path, manifest.to_json().as_bytes())?;
    staged.commit()
}

fn load_panel(path: &Path) -> Result<TimeSeriesPanel> {
    TimeSeriesPanel::load(path).with_context(|| format!("loading panel {}", path.display()))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let started = now();
    let spec = SyntheticSpec {
        series: a.series,
        months: a.months,
        level: a.level,
        amplitude: a.amplitude,
        trend: a.trend,
        rho: a.rho,
        persistence: a.persistence,
        noise_std: a.noise_std,
        seed: a.seed,
        start: a.start,
    };
    let panel = generate_synthetic_panel(&spec)?;
    let mut staged = Staged::new();
    staged.add(&a.out, panel.to_csv_string().as_bytes())?;
    let mut m = RunManifest::new("synth", serde_json::to_value(a)?, Some(a.seed), None, started)?;
    m.derived = json!({ "rows": panel.len(), "series": panel.num_series() });
    finish(m, staged, &a.manifest.clone().unwrap_or_else(|| with_suffix(&a.out, ".manifest.json")))?;
    eprintln!("wrote {} months x {} series to {}", panel.len(), panel.num_series(), a.out.display());
    Ok(())
}

pub fn cmd_describe(a: &DescribeArgs) -> Result<()> {
    let started = now();
    let panel = load_panel(&a.data)?;
    let from = a.from.unwrap_or(panel.start_month());
    let to = a.to.unwrap_or(panel.month_at(panel.len() - 1));
    let (Some(r0), Some(r1)) = (panel.row_of(from), panel.row_of(to)) else {
        bail!(
            "window {from}..{to} lies outside the panel ({}..{})",
            panel.start_month(),
            panel.month_at(panel.len() - 1)
        );
    };
    if r0 > r1 {
        bail!("empty window: {from} is after {to}");
    }
    let window = panel.slice(r0..r1 + 1)?;
    let rows = describe_with_total(&window)?;
    let md = describe_markdown(&rows);
    print!("{md}");
    if let Some(out) = &a.out {
        let mut staged = Staged::new();
        staged.add(out, describe_csv(&rows).as_bytes())?;
        staged.add(&out.with_extension("md"), md.as_bytes())?;
        let mut m = RunManifest::new("describe", serde_json::to_value(a)?, None, Some(&a.data), started)?;
        m.derived = json!({ "from": from.to_string(), "to": to.to_string(), "months": window.len() });
        finish(m, staged, &a.manifest.clone().unwrap_or_else(|| with_suffix(out, ".manifest.json")))?;
    }
    Ok(())
}

fn split_json(panel: &TimeSeriesPanel, spec: SplitSpec, p: usize) -> Result<serde_json::Value> {
    let s = split(panel, spec, p)?;
    Ok(json!({
        "train_rows": [s.train.start, s.train.end],
        "valid_rows": [s.valid.start, s.valid.end],
        "test_rows": [s.test.start, s.test.end],
        "test_len": s.test.len(),
        "test_start": panel.month_at(s.test.start).to_string(),
    }))
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let started = now();
    let panel = load_panel(&a.common.data)?;
    let mut models = vec![ModelKind::MimoGpr];
    if a.with_mlp {
        models.push(ModelKind::MimoMlp);
    }
    let cfg = a.common.experiment(models);
    cfg.resolve(panel.len())?;
    let s = split(&panel, cfg.split, cfg.lags)?;
    let fitted = fit_models(&panel, &cfg, s.valid.clone(), None)?;
    let doc = ModelDocument::new(
        &fitted,
        cfg.seed,
        cfg.lags,
        cfg.split,
        panel.start_month(),
        panel.series_names().to_vec(),
    )?;
    let mut staged = Staged::new();
    staged.add(&a.model, doc.to_json().as_bytes())?;
    let mut m = RunManifest::new("fit", serde_json::to_value(a)?, Some(cfg.seed), Some(&a.common.data), started)?;
    let penalty = fitted.gpr.as_ref().and_then(|f| f.combiner.as_ref()).map(|c| c.ridge_penalty);
    m.derived = json!({ "split": split_json(&panel, cfg.split, cfg.lags)?, "gpr_ridge_penalty": penalty });
    finish(m, staged, &a.manifest.clone().unwrap_or_else(|| with_suffix(&a.model, ".manifest.json")))?;
    eprintln!("wrote model document to {}", a.model.display());
    Ok(())
}

/// `YYYY-MM:YYYY-MM` (inclusive months) or `a:b` (half-open rows).
pub fn parse_eval_window(text: &str, panel: &TimeSeriesPanel) -> Result<Range<usize>> {
    let (a, b) = text.split_once(':').with_context(|| format!("eval window '{text}' is not of the form a:b"))?;
    if a.contains('-') || b.contains('-') {
        let ma: YearMonth = a.parse()?;
        let mb: YearMonth = b.parse()?;
        let (Some(ra), Some(rb)) = (panel.row_of(ma), panel.row_of(mb)) else {
            bail!("eval window {text} lies outside the panel");
        };
        if ra > rb {
            bail!("eval window {text} is empty");
        }
        Ok(ra..rb + 1)
    } else {
        let ra: usize = a.parse().with_context(|| format!("bad window start '{a}'"))?;
        let rb: usize = b.parse().with_context(|| format!("bad window end '{b}'"))?;
        Ok(ra..rb)
    }
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let started = now();
    let panel = load_panel(&a.common.data)?;
    let mut models = vec![a.candidate, a.benchmark];
    models.sort();
    models.dedup();
    let mut cfg = a.common.experiment(models);
    if a.refit_each_origin {
        cfg.refit_policy = RefitPolicy::RefitEachOrigin;
    }
    if let Some(w) = &a.eval_window {
        cfg.eval_window = Some(parse_eval_window(w, &panel)?);
    }
    let window = cfg.resolve(panel.len())?;
    let records = rolling_evaluate(&panel, &cfg)?;
    let table = comparison_table(&records, panel.series_names(), &cfg.horizons, a.candidate, a.benchmark, a.loss)?;

    let mut staged = Staged::new();
    let d = &a.out_dir;
    staged.add(&d.join("records.csv"), records_to_csv(&records).as_bytes())?;
    staged.add(&d.join("accuracy.csv"), table.accuracy_csv().as_bytes())?;
    staged.add(&d.join("accuracy.md"), table.accuracy_markdown().as_bytes())?;
    staged.add(&d.join("plae.csv"), table.plae_csv().as_bytes())?;
    staged.add(&d.join("plae.md"), table.plae_markdown().as_bytes())?;
    let mut m = RunManifest::new("evaluate", serde_json::to_value(a)?, Some(cfg.seed), Some(&a.common.data), started)?;
    m.derived = json!({
        "split": split_json(&panel, cfg.split, cfg.lags)?,
        "eval_rows": [window.start, window.end],
        "eval_months": [panel.month_at(window.start).to_string(), panel.month_at(window.end - 1).to_string()],
        "origins": window.len(),
        "records": records.len(),
    });
    finish(m, staged, &d.join("manifest.json"))?;
    print!("{}\n{}", table.accuracy_markdown(), table.plae_markdown());
    Ok(())
}
