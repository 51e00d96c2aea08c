//! Maximum-likelihood hyperparameter fitting.
//!
//! Projected gradient ascent on the log marginal likelihood in log-parameter
//! space with an Armijo backtracking line search (halving, `c = 1e-4`). The
//! first trial step of each iteration is the Barzilai–Borwein step from the
//! previous iterate. Several restarts are drawn around data-informed centers
//! and the best likelihood wins.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{KernelHyperparams, N_HYPER};
use super::model::{lml_with_gradient, GprModel, DEFAULT_JITTER};
use crate::error::{Error, Result};
use crate::seed;
use crate::timeseries::{Standardizer, SupervisedDataset};

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const LOG_MIN: f64 = -27.631_021_115_928_547; // ln 1e-12
const LOG_MAX: f64 = 9.210_340_371_976_184; // ln 1e4

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Starting diagonal jitter; doubled on factorization failure up to 1e-4.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iters: 200,
            grad_tol: 1e-6,
            jitter: DEFAULT_JITTER,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        if !(self.jitter > 0.0) {
            return Err(Error::InvalidArgument("jitter must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one gradient-ascent run.
#[derive(Debug, Clone, Copy)]
pub struct Ascent {
    pub theta: KernelHyperparams,
    pub lml: f64,
    pub grad_norm: f64,
    pub iters: usize,
}

fn clamp(l: &mut [f64; N_HYPER]) {
    for v in l.iter_mut() {
        *v = v.clamp(LOG_MIN, LOG_MAX);
    }
}

/// Gradient with components that push against an active bound zeroed.
fn projected(l: &[f64; N_HYPER], g: &[f64; N_HYPER]) -> [f64; N_HYPER] {
    let mut out = *g;
    for k in 0..N_HYPER {
        if (l[k] <= LOG_MIN && g[k] < 0.0) || (l[k] >= LOG_MAX && g[k] > 0.0) {
            out[k] = 0.0;
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient ascent from `theta0`. Never returns a point with lower
/// likelihood than the start.
pub fn ascend(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta0: &KernelHyperparams,
    config: &FitConfig,
) -> Result<Ascent> {
    let mut l = theta0.to_log();
    clamp(&mut l);
    let eval = |l: &[f64; N_HYPER]| lml_with_gradient(x, y, &KernelHyperparams::from_log(l), config.jitter);
    let (mut f, mut g) = eval(&l)?;
    if !f.is_finite() {
        return Err(Error::Optimization("non-finite likelihood at the starting point".into()));
    }
    let mut step = 1.0 / norm(&g).max(1.0);
    let mut prev: Option<([f64; N_HYPER], [f64; N_HYPER])> = None;
    let mut iters = 0;
    while iters < config.max_iters {
        let pg = projected(&l, &g);
        if norm(&pg) <= config.grad_tol {
            break;
        }
        if let Some((pl, pgr)) = prev {
            let mut ss = 0.0;
            let mut sy = 0.0;
            for k in 0..N_HYPER {
                let s = l[k] - pl[k];
                ss += s * s;
                sy -= s * (g[k] - pgr[k]);
            }
            let bb = ss / sy;
            step = if bb.is_finite() && bb > 0.0 { bb.clamp(1e-10, 1e3) } else { step * 2.0 };
        }
        let mut accepted = None;
        let mut t = step;
        for _ in 0..MAX_HALVINGS {
            let mut cand = l;
            for k in 0..N_HYPER {
                cand[k] += t * pg[k];
            }
            clamp(&mut cand);
            let ascent: f64 = (0..N_HYPER).map(|k| g[k] * (cand[k] - l[k])).sum();
            if ascent <= 0.0 {
                t *= 0.5;
                continue;
            }
            if let Ok((fc, gc)) = eval(&cand) {
                if fc.is_finite() && fc >= f + ARMIJO_C * ascent {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            t *= 0.5;
        }
        iters += 1;
        match accepted {
            Some((cand, fc, gc)) => {
                prev = Some((l, g));
                l = cand;
                f = fc;
                g = gc;
                step = t;
            }
            // No ascent step along the gradient: numerically stationary.
            None => break,
        }
    }
    Ok(Ascent {
        theta: KernelHyperparams::from_log(&l),
        lml: f,
        grad_norm: norm(&projected(&l, &g)),
        iters,
    })
}

fn median_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut d = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in 0..i {
            d.push((x.row(i) - x.row(j)).norm());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let m = d[d.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn sample_std(y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let m = y.mean();
    (y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Data-informed centers `(nu, lambda, gamma, kappa, sigma)` for restarts.
pub fn initial_center(x: &DMatrix<f64>, y: &DVector<f64>) -> KernelHyperparams {
    let s = sample_std(y);
    KernelHyperparams {
        nu: s,
        lambda: median_pairwise_distance(x),
        gamma: 0.01,
        kappa: 0.01,
        sigma: 0.1 * s,
    }
}

/// Starting point of restart `r`: each log-parameter is the center's log
/// plus a uniform offset in `[ln 0.1, ln 10]`.
pub fn restart_start(center: &KernelHyperparams, seed_value: u64, r: usize) -> KernelHyperparams {
    let mut rng = seed::rng(seed_value, &[seed::tags::GPR, r as u64]);
    let mut l = center.to_log();
    let span = 10f64.ln();
    for v in l.iter_mut() {
        *v += rng.random_range(-span..=span);
    }
    clamp(&mut l);
    KernelHyperparams::from_log(&l)
}

fn check_dataset(dataset: &SupervisedDataset) -> Result<()> {
    if dataset.len() < 2 {
        return Err(Error::InvalidArgument("GPR fit needs at least 2 rows".into()));
    }
    if !(sample_std(&dataset.targets) > 0.0) {
        return Err(Error::ZeroVariance("GPR targets are constant".into()));
    }
    Ok(())
}

/// Multi-start maximum-likelihood fit on an already standardized dataset.
pub fn fit(dataset: &SupervisedDataset, config: &FitConfig) -> Result<GprModel> {
    fit_with_standardizer(dataset, Standardizer::identity(dataset.lags), config)
}

/// Standardizes a raw series dataset, fits on it and keeps the standardizer
/// so that forecasts come back in original units.
pub fn fit_series(raw: &SupervisedDataset, config: &FitConfig) -> Result<GprModel> {
    let standardizer = Standardizer::fit(raw)?;
    let z = standardizer.apply(raw)?;
    fit_with_standardizer(&z, standardizer, config)
}

/// Re-fits on new raw data with the standardizer refitted and a single
/// ascent warm-started from `previous` hyperparameters.
pub fn refit_series(raw: &SupervisedDataset, previous: &KernelHyperparams, config: &FitConfig) -> Result<GprModel> {
    let standardizer = Standardizer::fit(raw)?;
    let z = standardizer.apply(raw)?;
    check_dataset(&z)?;
    config.validate()?;
    let a = ascend(&z.inputs, &z.targets, previous, config)?;
    GprModel::new(z.inputs, z.targets, a.theta, standardizer, config.jitter)
}

fn fit_with_standardizer(
    dataset: &SupervisedDataset,
    standardizer: Standardizer,
    config: &FitConfig,
) -> Result<GprModel> {
    check_dataset(dataset)?;
    config.validate()?;
    let center = initial_center(&dataset.inputs, &dataset.targets);
    let mut best: Option<Ascent> = None;
    let mut failures = Vec::new();
    for r in 0..config.restarts {
        let start = restart_start(&center, config.seed, r);
        match ascend(&dataset.inputs, &dataset.targets, &start, config) {
            Ok(a) => {
                if best.is_none_or(|b| a.lml > b.lml) {
                    best = Some(a);
                }
            }
            Err(e) => failures.push(format!("restart {r}: {e}")),
        }
    }
    let best = best.ok_or_else(|| Error::Optimization(format!("all restarts failed: {}", failures.join("; "))))?;
    GprModel::new(
        dataset.inputs.clone(),
        dataset.targets.clone(),
        best.theta,
        standardizer,
        config.jitter,
    )
}

/// Single ascent from a caller-supplied start.
pub fn fit_from(dataset: &SupervisedDataset, theta0: &KernelHyperparams, config: &FitConfig) -> Result<GprModel> {
    check_dataset(dataset)?;
    config.validate()?;
    let a = ascend(&dataset.inputs, &dataset.targets, theta0, config)?;
    GprModel::new(
        dataset.inputs.clone(),
        dataset.targets.clone(),
        a.theta,
        Standardizer::identity(dataset.lags),
        config.jitter,
    )
}
