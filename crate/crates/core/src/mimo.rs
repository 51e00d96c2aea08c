//! Two-step MIMO extension: per-series one-step forecasts are stacked and a
//! ridge-regularized linear map turns that vector into the joint forecast.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::GprModel;
use crate::timeseries::TimeSeriesPanel;

/// Default ridge penalty grid searched on the held-out tail.
pub const DEFAULT_PENALTY_GRID: [f64; 6] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];

/// A fitted one-step-ahead forecaster for a single series.
pub trait OneStepModel: Send + Sync {
    fn lags(&self) -> usize;

    /// Forecast of the next value from a raw lag window, most recent first.
    fn forecast_next(&self, window: &[f64]) -> Result<f64>;
}

impl OneStepModel for GprModel {
    fn lags(&self) -> usize {
        GprModel::lags(self)
    }

    fn forecast_next(&self, window: &[f64]) -> Result<f64> {
        GprModel::forecast_next(self, window)
    }
}

/// First-stage forecasts `F` (row `t` holds every series' one-step forecast
/// of month `t`) aligned with realized values `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageMatrix {
    pub forecasts: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    /// Panel rows covered.
    pub rows: Range<usize>,
}

impl FirstStageMatrix {
    pub fn new(forecasts: DMatrix<f64>, targets: DMatrix<f64>, rows: Range<usize>) -> Result<Self> {
        if forecasts.shape() != targets.shape() {
            return Err(Error::DimensionMismatch(format!(
                "forecasts {:?} vs targets {:?}",
                forecasts.shape(),
                targets.shape()
            )));
        }
        if rows.len() != forecasts.nrows() {
            return Err(Error::DimensionMismatch("row range does not match matrix height".into()));
        }
        if forecasts.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite first-stage entry".into()));
        }
        Ok(Self { forecasts, targets, rows })
    }

    pub fn len(&self) -> usize {
        self.forecasts.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.forecasts.nrows() == 0
    }

    pub fn num_series(&self) -> usize {
        self.forecasts.ncols()
    }

    /// Splits into `[0, k)` and `[k, len)` chronologically.
    pub fn split_at(&self, k: usize) -> Result<(Self, Self)> {
        if k == 0 || k >= self.len() {
            return Err(Error::InvalidArgument(format!("cannot split {} rows at {k}", self.len())));
        }
        let m = self.num_series();
        let head = Self::new(
            self.forecasts.view((0, 0), (k, m)).into_owned(),
            self.targets.view((0, 0), (k, m)).into_owned(),
            self.rows.start..self.rows.start + k,
        )?;
        let tail = Self::new(
            self.forecasts.view((k, 0), (self.len() - k, m)).into_owned(),
            self.targets.view((k, 0), (self.len() - k, m)).into_owned(),
            self.rows.start + k..self.rows.end,
        )?;
        Ok((head, tail))
    }
}

/// Row `t` of the result holds each model's one-step forecast of month `t`
/// from the `p` actual observations before it.
pub fn build_first_stage<T: OneStepModel>(
    models: &[T],
    panel: &TimeSeriesPanel,
    fit_range: Range<usize>,
    p: usize,
) -> Result<FirstStageMatrix> {
    let m = panel.num_series();
    if models.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} models for {m} series",
            models.len()
        )));
    }
    if let Some(bad) = models.iter().position(|md| md.lags() != p) {
        return Err(Error::DimensionMismatch(format!(
            "model {bad} uses {} lags, expected {p}",
            models[bad].lags()
        )));
    }
    if fit_range.is_empty() {
        return Err(Error::InvalidArgument("empty first-stage range".into()));
    }
    if fit_range.start < p || fit_range.end > panel.len() {
        return Err(Error::InvalidArgument(format!(
            "first-stage rows {fit_range:?} need {p} prior months inside a panel of {}",
            panel.len()
        )));
    }
    let values = panel.values();
    let n_fit = fit_range.len();
    let mut f = DMatrix::zeros(n_fit, m);
    let mut y = DMatrix::zeros(n_fit, m);
    let mut window = vec![0.0; p];
    for (r, t) in fit_range.clone().enumerate() {
        for (s, model) in models.iter().enumerate() {
            for (i, w) in window.iter_mut().enumerate() {
                *w = values[(t - 1 - i, s)];
            }
            f[(r, s)] = model.forecast_next(&window)?;
            y[(r, s)] = values[(t, s)];
        }
    }
    FirstStageMatrix::new(f, y, fit_range)
}

/// The regularized linear map `M x (M + 1)`; the last column is the
/// intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerWeights {
    pub weights: DMatrix<f64>,
    pub ridge_penalty: f64,
}

impl CombinerWeights {
    pub fn new(weights: DMatrix<f64>, ridge_penalty: f64) -> Result<Self> {
        if weights.ncols() != weights.nrows() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "combiner weights must be M x (M+1), got {:?}",
                weights.shape()
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) || !(ridge_penalty >= 0.0) {
            return Err(Error::InvalidArgument("combiner weights must be finite".into()));
        }
        Ok(Self { weights, ridge_penalty })
    }

    /// `[I | 0]`: passes first-stage forecasts through unchanged.
    pub fn identity(m: usize) -> Self {
        let mut w = DMatrix::zeros(m, m + 1);
        w.view_mut((0, 0), (m, m)).fill_with_identity();
        Self { weights: w, ridge_penalty: 0.0 }
    }

    pub fn num_series(&self) -> usize {
        self.weights.nrows()
    }

    pub fn intercept(&self) -> DVector<f64> {
        self.weights.column(self.num_series()).into_owned()
    }

    /// `W [f; 1]`.
    pub fn combine(&self, f: &[f64]) -> Result<Vec<f64>> {
        let m = self.num_series();
        if f.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} first-stage forecasts for a {m}-series combiner",
                f.len()
            )));
        }
        Ok((0..m)
            .map(|i| {
                let mut acc = self.weights[(i, m)];
                for (j, v) in f.iter().enumerate() {
                    acc += self.weights[(i, j)] * v;
                }
                acc
            })
            .collect())
    }

    pub fn to_document(&self) -> CombinerDocument {
        CombinerDocument {
            rows: self.weights.nrows(),
            cols: self.weights.ncols(),
            weights: crate::gpr::row_major(&self.weights),
            ridge_penalty: self.ridge_penalty,
        }
    }

    pub fn from_document(doc: &CombinerDocument) -> Result<Self> {
        if doc.weights.len() != doc.rows * doc.cols {
            return Err(Error::Document("combiner block size does not match its dimensions".into()));
        }
        Self::new(DMatrix::from_row_slice(doc.rows, doc.cols, &doc.weights), doc.ridge_penalty)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerDocument {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `M x (M + 1)` block.
    pub weights: Vec<f64>,
    pub ridge_penalty: f64,
}

fn augmented(f: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = f.shape();
    let mut a = DMatrix::from_element(n, m + 1, 1.0);
    a.view_mut((0, 0), (n, m)).copy_from(f);
    a
}

/// Ridge fit `W = Yᵀ F̃ (F̃ᵀ F̃ + penalty D)⁻¹` with `F̃ = [F | 1]` and `D`
/// the identity with a zero in the (unpenalized) intercept slot.
pub fn fit_combiner(stage: &FirstStageMatrix, ridge_penalty: f64) -> Result<CombinerWeights> {
    let m = stage.num_series();
    if !(ridge_penalty >= 0.0) || !ridge_penalty.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge penalty {ridge_penalty} must be finite and >= 0")));
    }
    if stage.len() < m + 1 {
        return Err(Error::InvalidArgument(format!(
            "combiner needs at least {} rows for {m} series, got {}",
            m + 1,
            stage.len()
        )));
    }
    let ft = augmented(&stage.forecasts);
    let mut a = ft.tr_mul(&ft);
    for i in 0..m {
        a[(i, i)] += ridge_penalty;
    }
    let b = ft.tr_mul(&stage.targets);
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("normal equations not positive definite at penalty {ridge_penalty}; use a positive penalty")))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
    if (lo / hi).powi(2) < 1e-14 {
        return Err(Error::Singular(format!(
            "normal equations are numerically singular at penalty {ridge_penalty}; use a positive penalty"
        )));
    }
    let x = chol.solve(&b);
    CombinerWeights::new(x.transpose(), ridge_penalty)
}

/// Mean squared error of combined forecasts against the stage targets.
pub fn combined_mse(weights: &CombinerWeights, stage: &FirstStageMatrix) -> Result<f64> {
    let mut sse = 0.0;
    for r in 0..stage.len() {
        let f: Vec<f64> = stage.forecasts.row(r).iter().copied().collect();
        let out = weights.combine(&f)?;
        for (s, v) in out.iter().enumerate() {
            sse += (stage.targets[(r, s)] - v).powi(2);
        }
    }
    Ok(sse / (stage.len() * stage.num_series()) as f64)
}

/// Grid penalty minimizing validation MSE when fitted on `stage_train`.
/// Ties go to the larger penalty; penalties whose fit is singular are
/// skipped.
pub fn select_ridge_penalty(stage_train: &FirstStageMatrix, stage_valid: &FirstStageMatrix, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty penalty grid".into()));
    }
    if let Some(bad) = grid.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
        return Err(Error::InvalidArgument(format!("penalty {bad} must be finite and >= 0")));
    }
    let mut best: Option<(f64, f64)> = None;
    let mut last_err = None;
    for &pen in grid {
        let w = match fit_combiner(stage_train, pen) {
            Ok(w) => w,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let mse = combined_mse(&w, stage_valid)?;
        best = match best {
            None => Some((pen, mse)),
            Some((bp, bm)) if mse < bm || (mse == bm && pen > bp) => Some((pen, mse)),
            keep => keep,
        };
    }
    best.map(|(p, _)| p)
        .ok_or_else(|| last_err.unwrap_or_else(|| Error::InvalidArgument("no usable penalty".into())))
}

/// Selects the penalty on the last quarter of `stage` after fitting on the
/// rest, then refits on the whole stage with it.
pub fn fit_combiner_selected(stage: &FirstStageMatrix, grid: &[f64]) -> Result<CombinerWeights> {
    let n = stage.len();
    let tail = (n / 4).max(1);
    let head = n.saturating_sub(tail);
    if head < stage.num_series() + 1 {
        return Err(Error::InvalidArgument(format!(
            "{n} first-stage rows are too few to select a penalty for {} series",
            stage.num_series()
        )));
    }
    let (h, t) = stage.split_at(head)?;
    let pen = select_ridge_penalty(&h, &t, grid)?;
    fit_combiner(stage, pen)
}

/// One member model per series plus an optional second-stage combiner.
#[derive(Debug, Clone)]
pub struct MimoForecaster<T> {
    pub members: Vec<T>,
    pub combiner: Option<CombinerWeights>,
}

impl<T: OneStepModel> MimoForecaster<T> {
    pub fn new(members: Vec<T>, combiner: Option<CombinerWeights>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("forecaster needs at least one series".into()));
        }
        let p = members[0].lags();
        if members.iter().any(|m| m.lags() != p) {
            return Err(Error::DimensionMismatch("members disagree on lag order".into()));
        }
        if let Some(c) = &combiner {
            if c.num_series() != members.len() {
                return Err(Error::DimensionMismatch(format!(
                    "combiner for {} series, {} members",
                    c.num_series(),
                    members.len()
                )));
            }
        }
        Ok(Self { members, combiner })
    }

    pub fn lags(&self) -> usize {
        self.members[0].lags()
    }

    pub fn num_series(&self) -> usize {
        self.members.len()
    }

    /// First-stage forecasts from per-series windows.
    pub fn first_stage(&self, windows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if windows.len() != self.members.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} windows for {} series",
                windows.len(),
                self.members.len()
            )));
        }
        self.members
            .iter()
            .zip(windows)
            .map(|(m, w)| m.forecast_next(w))
            .collect()
    }

    /// One joint step: first stage, then the combiner if present.
    pub fn step(&self, windows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let f = self.first_stage(windows)?;
        match &self.combiner {
            Some(c) => c.combine(&f),
            None => Ok(f),
        }
    }
}
