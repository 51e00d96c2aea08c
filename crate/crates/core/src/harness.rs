//! Experiment orchestration: synthetic panels, recursive multi-step
//! forecasts and rolling-origin evaluation.
//!
//! Origin convention: at origin row `t` the panel is observed through row
//! `t − 1`; the `h`-step forecast targets row `t + h − 1`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::{self, FitConfig, GprModel};
use crate::mimo::{build_first_stage, fit_combiner_selected, MimoForecaster, OneStepModel, DEFAULT_PENALTY_GRID};
use crate::mlp::{hidden_units_for_horizon, MlpForecaster, TrainConfig};
use crate::seed;
use crate::timeseries::{embed_range, split, SplitSpec, TimeSeriesPanel, YearMonth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "mimo-gpr")]
    MimoGpr,
    #[serde(rename = "mimo-mlp")]
    MimoMlp,
    #[serde(rename = "independent-gpr")]
    IndependentGpr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::MimoGpr, ModelKind::MimoMlp, ModelKind::IndependentGpr];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::MimoGpr => "mimo-gpr",
            ModelKind::MimoMlp => "mimo-mlp",
            ModelKind::IndependentGpr => "independent-gpr",
        }
    }

    fn uses_gpr(self) -> bool {
        matches!(self, ModelKind::MimoGpr | ModelKind::IndependentGpr)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown model '{s}' (expected one of mimo-gpr, mimo-mlp, independent-gpr)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefitPolicy {
    #[default]
    FitOnce,
    RefitEachOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub lags: usize,
    pub split: SplitSpec,
    pub horizons: Vec<usize>,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    pub refit_policy: RefitPolicy,
    /// Origin rows to score; defaults to every test origin whose longest
    /// horizon still lands inside the panel.
    pub eval_window: Option<Range<usize>>,
    pub gpr: FitConfig,
    pub mlp: TrainConfig,
    pub penalty_grid: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            lags: crate::timeseries::DEFAULT_LAGS,
            split: SplitSpec { train_len: 96, valid_len: 60 },
            horizons: vec![1, 2, 3, 6],
            models: ModelKind::ALL.to_vec(),
            seed: 0,
            refit_policy: RefitPolicy::FitOnce,
            eval_window: None,
            gpr: FitConfig::default(),
            mlp: TrainConfig::default(),
            penalty_grid: DEFAULT_PENALTY_GRID.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn max_horizon(&self) -> usize {
        self.horizons.last().copied().unwrap_or(0)
    }

    /// Checks the configuration against a panel of `n` rows and returns the
    /// resolved origin window.
    pub fn resolve(&self, n: usize) -> Result<Range<usize>> {
        if self.horizons.is_empty() || self.horizons[0] == 0 {
            return Err(Error::InvalidArgument("horizons must be positive and nonempty".into()));
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("horizons must be sorted and unique".into()));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidArgument("no models selected".into()));
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return Err(Error::InvalidArgument("duplicate model in selection".into()));
        }
        self.gpr.validate()?;
        self.mlp.validate()?;
        let s = crate::timeseries::split_len(n, self.split, self.lags)?;
        let window = match &self.eval_window {
            Some(w) => w.clone(),
            None => {
                let end = (n + 1).saturating_sub(self.max_horizon());
                if end <= s.test.start {
                    return Err(Error::InvalidArgument(format!(
                        "test segment of {} rows is shorter than the longest horizon {}",
                        s.test.len(),
                        self.max_horizon()
                    )));
                }
                s.test.start..end
            }
        };
        if window.is_empty() || window.start < s.test.start || window.end > s.test.end {
            return Err(Error::InvalidArgument(format!(
                "evaluation window {window:?} must be a nonempty part of the test rows {:?}",
                s.test
            )));
        }
        if self.refit_policy == RefitPolicy::RefitEachOrigin && self.split.valid_len + self.lags >= window.end {
            return Err(Error::InvalidArgument("refit windows leave no training rows".into()));
        }
        Ok(window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub model: ModelKind,
    pub series: String,
    pub series_index: usize,
    pub origin: YearMonth,
    pub origin_row: usize,
    pub h: usize,
    pub target_row: usize,
    pub forecast: f64,
    pub actual: Option<f64>,
    /// Latest panel row that entered any lag window of the recursion.
    pub latest_input_row: usize,
    /// Last panel row used to fit the models behind this forecast.
    pub fit_through: usize,
}

/// `model,series,origin,h,forecast,actual`; a missing actual is left blank.
pub fn records_to_csv(records: &[ForecastRecord]) -> String {
    let mut out = String::from("model,series,origin,h,forecast,actual\n");
    for r in records {
        let name = if r.series.contains([',', '"', '\n']) {
            format!("\"{}\"", r.series.replace('"', "\"\""))
        } else {
            r.series.clone()
        };
        let actual = r.actual.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{},{}\n", r.model, name, r.origin, r.h, r.forecast, actual));
    }
    out
}

/// Lag windows, most recent first, with the panel row behind each entry
/// (`None` for a value produced by the recursion itself).
#[derive(Debug, Clone)]
struct TaggedWindows {
    values: Vec<Vec<f64>>,
    rows: Vec<Vec<Option<usize>>>,
}

impl TaggedWindows {
    fn from_panel(panel: &TimeSeriesPanel, origin: usize, p: usize) -> Result<Self> {
        if origin < p || origin > panel.len() {
            return Err(Error::InvalidArgument(format!(
                "origin row {origin} needs {p} observed months inside a panel of {}",
                panel.len()
            )));
        }
        let v = panel.values();
        let m = panel.num_series();
        Ok(Self {
            values: (0..m).map(|s| (1..=p).map(|i| v[(origin - i, s)]).collect()).collect(),
            rows: (0..m).map(|_| (1..=p).map(|i| Some(origin - i)).collect()).collect(),
        })
    }

    fn from_history(history: &[Vec<f64>], p: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(history.len());
        for (s, h) in history.iter().enumerate() {
            if h.len() < p {
                return Err(Error::InvalidArgument(format!(
                    "series {s} has {} months of history, {p} needed",
                    h.len()
                )));
            }
            values.push(h.iter().rev().take(p).copied().collect());
        }
        Ok(Self { values, rows: vec![vec![None; p]; history.len()] })
    }

    fn push(&mut self, step: &[f64]) {
        for (s, v) in step.iter().enumerate() {
            self.values[s].pop();
            self.values[s].insert(0, *v);
            self.rows[s].pop();
            self.rows[s].insert(0, None);
        }
    }

    fn latest_row(&self) -> Option<usize> {
        self.rows.iter().flatten().flatten().copied().max()
    }
}

fn recurse<F>(mut windows: TaggedWindows, h: usize, step: F) -> Result<(Vec<Vec<f64>>, Option<usize>)>
where
    F: Fn(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut latest = windows.latest_row();
    let mut out = Vec::with_capacity(h);
    for _ in 0..h {
        latest = latest.max(windows.latest_row());
        let v = step(&windows.values)?;
        if v.len() != windows.values.len() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Optimization("recursive step produced a non-finite forecast".into()));
        }
        windows.push(&v);
        out.push(v);
    }
    Ok((out, latest))
}

/// Iterated forecasts for steps `1..=h`; `history[s]` is chronological and
/// must hold at least `p` months. The combiner, if any, is applied at every
/// step.
pub fn recursive_forecast<T: OneStepModel>(
    forecaster: &MimoForecaster<T>,
    history: &[Vec<f64>],
    h: usize,
) -> Result<Vec<Vec<f64>>> {
    if history.len() != forecaster.num_series() {
        return Err(Error::DimensionMismatch(format!(
            "{} histories for {} series",
            history.len(),
            forecaster.num_series()
        )));
    }
    let w = TaggedWindows::from_history(history, forecaster.lags())?;
    Ok(recurse(w, h, |x| forecaster.step(x))?.0)
}

/// Models fitted on one information set.
#[derive(Debug, Clone)]
pub struct FittedModels {
    pub gpr: Option<MimoForecaster<GprModel>>,
    /// One MIMO network set per horizon.
    pub mlp: Vec<(usize, MimoForecaster<MlpForecaster>)>,
    pub fit_through: usize,
}

impl FittedModels {
    pub fn mlp_for(&self, h: usize) -> Option<&MimoForecaster<MlpForecaster>> {
        self.mlp.iter().find(|(k, _)| *k == h).map(|(_, f)| f)
    }
}

pub fn gpr_fit_config(config: &ExperimentConfig, series: usize) -> FitConfig {
    FitConfig { seed: seed::derive(config.seed, &[seed::tags::GPR, series as u64]), ..config.gpr }
}

pub fn mlp_train_config(config: &ExperimentConfig, h: usize, series: usize) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(config.seed, &[seed::tags::MLP, h as u64, series as u64]),
        ..config.mlp
    }
}

/// Fits members on rows `[0, valid.start)` and each combiner on the
/// first-stage forecasts over `valid`. With `previous`, member fits are warm
/// starts from its parameters.
pub fn fit_models(
    panel: &TimeSeriesPanel,
    config: &ExperimentConfig,
    valid: Range<usize>,
    previous: Option<&FittedModels>,
) -> Result<FittedModels> {
    let p = config.lags;
    let m = panel.num_series();
    let train = p..valid.start;
    if train.is_empty() || valid.is_empty() || valid.end > panel.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot fit with training rows {train:?} and validation rows {valid:?}"
        )));
    }
    let series: Vec<Vec<f64>> = (0..m).map(|s| panel.series(s)).collect();
    let series_name = |s: usize| panel.series_names()[s].clone();

    let gpr = if config.models.iter().any(|k| k.uses_gpr()) {
        let members = (0..m)
            .into_par_iter()
            .map(|s| {
                let data = embed_range(&series[s], p, train.clone())?;
                let cfg = gpr_fit_config(config, s);
                let warm = previous.and_then(|f| f.gpr.as_ref()).map(|f| *f.members[s].hyperparams());
                match warm {
                    Some(theta) => gpr::refit_series(&data, &theta, &cfg),
                    None => gpr::fit_series(&data, &cfg),
                }
                .map_err(|e| Error::Optimization(format!("GPR for series '{}': {e}", series_name(s))))
            })
            .collect::<Result<Vec<_>>>()?;
        let stage = build_first_stage(&members, panel, valid.clone(), p)?;
        let combiner = fit_combiner_selected(&stage, &config.penalty_grid)?;
        Some(MimoForecaster::new(members, Some(combiner))?)
    } else {
        None
    };

    let mut mlp = Vec::new();
    if config.models.contains(&ModelKind::MimoMlp) {
        for &h in &config.horizons {
            let q = hidden_units_for_horizon(h)?;
            let members = (0..m)
                .into_par_iter()
                .map(|s| {
                    let tr = embed_range(&series[s], p, train.clone())?;
                    let va = embed_range(&series[s], p, valid.clone())?;
                    let cfg = mlp_train_config(config, h, s);
                    match previous.and_then(|f| f.mlp_for(h)) {
                        Some(prev) => prev.members[s].retrain(&tr, &va, &cfg),
                        None => MlpForecaster::train(&tr, &va, q, &cfg),
                    }
                    .map_err(|e| Error::Optimization(format!("MLP (h={h}) for series '{}': {e}", series_name(s))))
                })
                .collect::<Result<Vec<_>>>()?;
            let stage = build_first_stage(&members, panel, valid.clone(), p)?;
            let combiner = fit_combiner_selected(&stage, &config.penalty_grid)?;
            mlp.push((h, MimoForecaster::new(members, Some(combiner))?));
        }
    }
    Ok(FittedModels { gpr, mlp, fit_through: valid.end - 1 })
}

fn forecast_origin(
    panel: &TimeSeriesPanel,
    config: &ExperimentConfig,
    models: &FittedModels,
    origin: usize,
) -> Result<Vec<ForecastRecord>> {
    let p = config.lags;
    let n = panel.len();
    let max_h = config.max_horizon();
    let windows = TaggedWindows::from_panel(panel, origin, p)?;
    let mut out = Vec::new();
    let mut emit = |model: ModelKind, h: usize, step: &[f64], latest: Option<usize>| {
        for (s, f) in step.iter().enumerate() {
            let target_row = origin + h - 1;
            out.push(ForecastRecord {
                model,
                series: panel.series_names()[s].clone(),
                series_index: s,
                origin: panel.month_at(origin),
                origin_row: origin,
                h,
                target_row,
                forecast: *f,
                actual: (target_row < n).then(|| panel.values()[(target_row, s)]),
                latest_input_row: latest.expect("windows start from panel rows"),
                fit_through: models.fit_through,
            });
        }
    };
    for &kind in &config.models {
        match kind {
            ModelKind::MimoGpr | ModelKind::IndependentGpr => {
                let f = models.gpr.as_ref().expect("GPR fitted when selected");
                let (steps, latest) = if kind == ModelKind::MimoGpr {
                    recurse(windows.clone(), max_h, |x| f.step(x))?
                } else {
                    recurse(windows.clone(), max_h, |x| f.first_stage(x))?
                };
                for &h in &config.horizons {
                    emit(kind, h, &steps[h - 1], latest);
                }
            }
            ModelKind::MimoMlp => {
                for &h in &config.horizons {
                    let f = models.mlp_for(h).expect("MLP fitted for every horizon");
                    let (steps, latest) = recurse(windows.clone(), h, |x| f.step(x))?;
                    emit(kind, h, &steps[h - 1], latest);
                }
            }
        }
    }
    Ok(out)
}

/// Rolling-origin evaluation. Records are sorted by
/// `(model, series, origin, h)`.
pub fn rolling_evaluate(panel: &TimeSeriesPanel, config: &ExperimentConfig) -> Result<Vec<ForecastRecord>> {
    let window = config.resolve(panel.len())?;
    let s = split(panel, config.split, config.lags)?;
    let base = fit_models(panel, config, s.valid.clone(), None)?;
    rolling_evaluate_with(panel, config, window, base)
}

/// As [`rolling_evaluate`] but starting from already fitted models.
pub fn rolling_evaluate_with(
    panel: &TimeSeriesPanel,
    config: &ExperimentConfig,
    window: Range<usize>,
    base: FittedModels,
) -> Result<Vec<ForecastRecord>> {
    let origins: Vec<usize> = window.collect();
    let mut sets = vec![base];
    if config.refit_policy == RefitPolicy::RefitEachOrigin {
        for &t in &origins[1..] {
            let prev = sets.last().expect("nonempty");
            let next = fit_models(panel, config, t - config.split.valid_len..t, Some(prev))?;
            sets.push(next);
        }
    }
    let mut records: Vec<ForecastRecord> = origins
        .par_iter()
        .enumerate()
        .map(|(i, &t)| forecast_origin(panel, config, &sets[i.min(sets.len() - 1)], t))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    records.sort_by(|a, b| {
        (a.model, a.series_index, a.origin_row, a.h).cmp(&(b.model, b.series_index, b.origin_row, b.h))
    });
    Ok(records)
}

/// Records whose forecast could have seen the target month, either through
/// a lag window or through the fitting data.
pub fn audit_records(records: &[ForecastRecord]) -> Vec<&ForecastRecord> {
    records
        .iter()
        .filter(|r| {
            r.latest_input_row >= r.origin_row
                || r.latest_input_row >= r.target_row
                || r.fit_through >= r.origin_row
                || r.target_row != r.origin_row + r.h - 1
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub series: usize,
    pub months: usize,
    pub level: f64,
    pub amplitude: f64,
    pub trend: f64,
    /// Pairwise correlation of the innovations across series.
    pub rho: f64,
    /// AR(1) coefficient of the shared innovation component.
    pub persistence: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub start: YearMonth,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            series: 4,
            months: 183,
            level: 100.0,
            amplitude: 20.0,
            trend: 0.2,
            rho: 0.7,
            persistence: 0.8,
            noise_std: 5.0,
            seed: 42,
            start: YearMonth::new(2000, 1).expect("valid month"),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(-1.0 < self.persistence && self.persistence < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "persistence must lie in (-1, 1), got {}",
                self.persistence
            )));
        }
        if self.months < 48 {
            return Err(Error::InvalidArgument(format!("at least 48 months required, got {}", self.months)));
        }
        if self.series == 0 {
            return Err(Error::InvalidArgument("at least one series required".into()));
        }
        if [self.level, self.amplitude, self.trend, self.noise_std].iter().any(|v| !v.is_finite()) || self.noise_std < 0.0 {
            return Err(Error::InvalidArgument("level, amplitude, trend and noise std must be finite, noise std nonnegative".into()));
        }
        Ok(())
    }

    pub fn phase(&self, s: usize) -> f64 {
        std::f64::consts::FRAC_PI_2 * s as f64 / self.series as f64
    }

    /// Deterministic part of series `s` at month `t`.
    pub fn mean_at(&self, s: usize, t: usize) -> f64 {
        let tf = t as f64;
        self.level + self.trend * tf + self.amplitude * (std::f64::consts::TAU * tf / 12.0 + self.phase(s)).sin()
    }
}

/// `level + trend·t + amplitude·sin(2πt/12 + phase_s) + ε_{t,s}` with
/// `ε_{t,s} = noise_std·(√ρ·c_t + √(1−ρ)·u_{t,s})`, where `c` is a unit-variance
/// AR(1) shared by all series and `u` is i.i.d. standard normal.
pub fn generate_synthetic_panel(spec: &SyntheticSpec) -> Result<TimeSeriesPanel> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed, &[seed::tags::SYNTH]);
    let (n, m) = (spec.months, spec.series);
    let phi = spec.persistence;
    let shock_scale = (1.0 - phi * phi).sqrt();
    let (a, b) = (spec.rho.sqrt(), (1.0 - spec.rho).sqrt());
    let mut common: f64 = StandardNormal.sample(&mut rng);
    let mut values = DMatrix::zeros(n, m);
    for t in 0..n {
        if t > 0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            common = phi * common + shock_scale * z;
        }
        for s in 0..m {
            let u: f64 = StandardNormal.sample(&mut rng);
            values[(t, s)] = spec.mean_at(s, t) + spec.noise_std * (a * common + b * u);
        }
    }
    let names = (1..=m).map(|s| format!("series_{s}")).collect();
    TimeSeriesPanel::new(spec.start, names, values)
}
