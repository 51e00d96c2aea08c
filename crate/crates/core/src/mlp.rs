//! Single-hidden-layer perceptron benchmark trained by Levenberg–Marquardt.
//!
//! `ŷ = β₀ + Σⱼ βⱼ tanh(Σᵢ wⱼᵢ xᵢ + w₀ⱼ)`
//!
//! Sign convention: residuals are `r = y − ŷ`, the Jacobian is `J = ∂ŷ/∂θ`
//! and each step solves `(JᵀJ + μI) δ = Jᵀr`, then `θ ← θ + δ`.
//!
//! The flat parameter order is: hidden weights (row-major `q × p`), hidden
//! biases (`q`), output weights (`q`), output bias.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mimo::OneStepModel;
use crate::seed;
use crate::timeseries::{Standardizer, SupervisedDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// `q × p`; row `j` feeds hidden unit `j`.
    pub input_weights: DMatrix<f64>,
    pub hidden_bias: DVector<f64>,
    pub output_weights: DVector<f64>,
    pub output_bias: f64,
    pub activation: Activation,
}

impl MlpParams {
    pub fn zeros(q: usize, p: usize) -> Self {
        Self {
            input_weights: DMatrix::zeros(q, p),
            hidden_bias: DVector::zeros(q),
            output_weights: DVector::zeros(q),
            output_bias: 0.0,
            activation: Activation::Tanh,
        }
    }

    pub fn hidden(&self) -> usize {
        self.input_weights.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.input_weights.ncols()
    }

    pub fn num_params(&self) -> usize {
        let (q, p) = self.input_weights.shape();
        q * (p + 2) + 1
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let (q, p) = self.input_weights.shape();
        let mut v = DVector::zeros(self.num_params());
        for j in 0..q {
            for i in 0..p {
                v[j * p + i] = self.input_weights[(j, i)];
            }
            v[q * p + j] = self.hidden_bias[j];
            v[q * p + q + j] = self.output_weights[j];
        }
        v[q * (p + 2)] = self.output_bias;
        v
    }

    pub fn from_flat(q: usize, p: usize, v: &DVector<f64>) -> Result<Self> {
        if v.len() != q * (p + 2) + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a q={q}, p={p} network",
                v.len()
            )));
        }
        Ok(Self {
            input_weights: DMatrix::from_fn(q, p, |j, i| v[j * p + i]),
            hidden_bias: DVector::from_fn(q, |j, _| v[q * p + j]),
            output_weights: DVector::from_fn(q, |j, _| v[q * p + q + j]),
            output_bias: v[q * (p + 2)],
            activation: Activation::Tanh,
        })
    }

    fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.inputs() {
            return Err(Error::DimensionMismatch(format!(
                "input of length {} for a {}-input network",
                x.len(),
                self.inputs()
            )));
        }
        Ok(())
    }

    fn hidden_activations(&self, x: &[f64], out: &mut [f64]) {
        let p = self.inputs();
        for (j, h) in out.iter_mut().enumerate() {
            let mut a = self.hidden_bias[j];
            for i in 0..p {
                a += self.input_weights[(j, i)] * x[i];
            }
            *h = a.tanh();
        }
    }

    fn output(&self, h: &[f64]) -> f64 {
        let mut y = self.output_bias;
        for (j, v) in h.iter().enumerate() {
            y += self.output_weights[j] * v;
        }
        y
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut h = vec![0.0; self.hidden()];
        self.hidden_activations(x, &mut h);
        Ok(self.output(&h))
    }

    fn predict_all(&self, data: &SupervisedDataset) -> DVector<f64> {
        let mut h = vec![0.0; self.hidden()];
        let mut x = vec![0.0; self.inputs()];
        DVector::from_fn(data.len(), |n, _| {
            for (i, v) in x.iter_mut().enumerate() {
                *v = data.inputs[(n, i)];
            }
            self.hidden_activations(&x, &mut h);
            self.output(&h)
        })
    }

    /// Sum of squared residuals `Σ (y − ŷ)²`.
    pub fn sse(&self, data: &SupervisedDataset) -> f64 {
        (&data.targets - self.predict_all(data)).norm_squared()
    }

    pub fn to_document(&self) -> MlpParamsDocument {
        MlpParamsDocument {
            hidden: self.hidden(),
            inputs: self.inputs(),
            activation: self.activation,
            weights: self.to_flat().iter().copied().collect(),
        }
    }

    pub fn from_document(doc: &MlpParamsDocument) -> Result<Self> {
        Self::from_flat(doc.hidden, doc.inputs, &DVector::from_vec(doc.weights.clone()))
            .map_err(|e| Error::Document(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParamsDocument {
    pub hidden: usize,
    pub inputs: usize,
    pub activation: Activation,
    /// Flat parameter vector in the module's documented order.
    pub weights: Vec<f64>,
}

/// `N × #params` matrix of `∂ŷ/∂θ` (so `∂r/∂θ = −J`).
pub fn jacobian(params: &MlpParams, data: &SupervisedDataset) -> Result<DMatrix<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if data.lags != params.inputs() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} lags, network {} inputs",
            data.lags,
            params.inputs()
        )));
    }
    let (q, p) = params.input_weights.shape();
    let mut jac = DMatrix::zeros(data.len(), params.num_params());
    let mut h = vec![0.0; q];
    let mut x = vec![0.0; p];
    for n in 0..data.len() {
        for (i, v) in x.iter_mut().enumerate() {
            *v = data.inputs[(n, i)];
        }
        params.hidden_activations(&x, &mut h);
        for j in 0..q {
            let back = params.output_weights[j] * (1.0 - h[j] * h[j]);
            for i in 0..p {
                jac[(n, j * p + i)] = back * x[i];
            }
            jac[(n, q * p + j)] = back;
            jac[(n, q * p + q + j)] = h[j];
        }
        jac[(n, q * (p + 2))] = 1.0;
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub restarts: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before a restart stops.
    pub patience: usize,
    pub lm_damping_init: f64,
    pub lm_damping_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_epochs: 500,
            patience: 25,
            lm_damping_init: 1e-2,
            lm_damping_factor: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument("restarts and patience must be at least 1".into()));
        }
        if !(self.lm_damping_init > 0.0) || !(self.lm_damping_factor > 1.0) {
            return Err(Error::InvalidArgument(
                "damping must be positive and its factor greater than 1".into(),
            ));
        }
        Ok(())
    }
}

/// Damping beyond which a restart is considered converged.
const MAX_DAMPING: f64 = 1e12;

/// Per-restart training history.
#[derive(Debug, Clone)]
pub struct RestartTrace {
    /// Training SSE at initialization followed by the SSE after every
    /// accepted step.
    pub accepted_train_sse: Vec<f64>,
    pub best_valid_sse: f64,
    pub epochs: usize,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: MlpParams,
    pub best_valid_sse: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartTrace>,
}

/// Uniform in `[-0.5, 0.5]` scaled by `1/√fan_in`.
pub fn init_params(q: usize, p: usize, seed_value: u64, restart: usize) -> MlpParams {
    let mut rng = seed::rng(seed_value, &[seed::tags::MLP, restart as u64]);
    let hs = 1.0 / (p as f64).sqrt();
    let os = 1.0 / (q as f64).sqrt();
    let mut m = MlpParams::zeros(q, p);
    for j in 0..q {
        for i in 0..p {
            m.input_weights[(j, i)] = rng.random_range(-0.5..0.5) * hs;
        }
        m.hidden_bias[j] = rng.random_range(-0.5..0.5) * hs;
        m.output_weights[j] = rng.random_range(-0.5..0.5) * os;
    }
    m.output_bias = rng.random_range(-0.5..0.5) * os;
    m
}

fn run_restart(
    start: MlpParams,
    train: &SupervisedDataset,
    valid: &SupervisedDataset,
    config: &TrainConfig,
) -> (MlpParams, RestartTrace) {
    let (q, p) = start.input_weights.shape();
    let mut theta = start.to_flat();
    let mut params = start;
    let mut sse = params.sse(train);
    let mut trace = RestartTrace {
        accepted_train_sse: vec![sse],
        best_valid_sse: f64::INFINITY,
        epochs: 0,
        diverged: false,
    };
    if !sse.is_finite() {
        trace.diverged = true;
        return (params, trace);
    }
    let mut best = params.clone();
    trace.best_valid_sse = params.sse(valid);
    let mut stall = 0;
    let mut mu = config.lm_damping_init;
    let np = theta.len();

    'epochs: while trace.epochs < config.max_epochs && stall < config.patience {
        trace.epochs += 1;
        let jac = jacobian(&params, train).expect("dimensions checked by caller");
        let resid = &train.targets - params.predict_all(train);
        let jtj = jac.tr_mul(&jac);
        let jtr = jac.tr_mul(&resid);
        loop {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += mu;
            }
            let step = a.cholesky().map(|c| c.solve(&jtr));
            if let Some(delta) = step {
                let cand_theta = &theta + delta;
                let cand = MlpParams::from_flat(q, p, &cand_theta).expect("same shape");
                let cand_sse = cand.sse(train);
                if cand_sse.is_finite() && cand_sse < sse {
                    theta = cand_theta;
                    params = cand;
                    sse = cand_sse;
                    trace.accepted_train_sse.push(sse);
                    mu /= config.lm_damping_factor;
                    break;
                }
            }
            mu *= config.lm_damping_factor;
            if mu > MAX_DAMPING {
                break 'epochs;
            }
        }
        let v = params.sse(valid);
        if v < trace.best_valid_sse {
            trace.best_valid_sse = v;
            best = params.clone();
            stall = 0;
        } else {
            stall += 1;
        }
    }
    if !best.is_finite() || !trace.best_valid_sse.is_finite() {
        trace.diverged = true;
    }
    (best, trace)
}

/// Multi-start LM training with validation-based early stopping; returns the
/// parameters with the lowest validation SSE seen at any epoch of any
/// restart (initial points included).
pub fn train_lm(train: &SupervisedDataset, valid: &SupervisedDataset, q: usize, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if q == 0 {
        return Err(Error::InvalidArgument("hidden layer needs at least one unit".into()));
    }
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be nonempty".into()));
    }
    if train.lags != valid.lags {
        return Err(Error::DimensionMismatch(format!(
            "train has {} lags, validation {}",
            train.lags, valid.lags
        )));
    }
    let p = train.lags;
    let runs: Vec<(MlpParams, RestartTrace)> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(init_params(q, p, config.seed, r), train, valid, config))
        .collect();
    finish(runs)
}

/// Single LM run warm-started from `start`.
pub fn train_lm_from(
    start: MlpParams,
    train: &SupervisedDataset,
    valid: &SupervisedDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train.lags != start.inputs() || valid.lags != start.inputs() {
        return Err(Error::DimensionMismatch("warm start does not match the data".into()));
    }
    finish(vec![run_restart(start, train, valid, config)])
}

fn finish(runs: Vec<(MlpParams, RestartTrace)>) -> Result<TrainReport> {
    let mut best: Option<usize> = None;
    for (i, (_, t)) in runs.iter().enumerate() {
        if t.diverged {
            continue;
        }
        if best.is_none_or(|b| t.best_valid_sse < runs[b].1.best_valid_sse) {
            best = Some(i);
        }
    }
    let Some(b) = best else {
        let diag: Vec<String> = runs
            .iter()
            .enumerate()
            .map(|(i, (_, t))| format!("restart {i}: {} epochs, last sse {:?}", t.epochs, t.accepted_train_sse.last()))
            .collect();
        return Err(Error::Optimization(format!("all restarts diverged ({})", diag.join("; "))));
    };
    let params = runs[b].0.clone();
    let best_valid_sse = runs[b].1.best_valid_sse;
    Ok(TrainReport {
        params,
        best_valid_sse,
        best_restart: b,
        restarts: runs.into_iter().map(|(_, t)| t).collect(),
    })
}

/// Hidden units for an `h`-month horizon: `min(30, 5h)`.
pub fn hidden_units_for_horizon(h: usize) -> Result<usize> {
    if h < 1 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    Ok((5 * h).min(30))
}

/// A trained network with the standardizer of its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpForecaster {
    pub params: MlpParams,
    pub standardizer: Standardizer,
}

impl MlpForecaster {
    /// Standardizes with statistics of `train`, then trains.
    pub fn train(train: &SupervisedDataset, valid: &SupervisedDataset, q: usize, config: &TrainConfig) -> Result<Self> {
        let standardizer = Standardizer::fit(train)?;
        let report = train_lm(&standardizer.apply(train)?, &standardizer.apply(valid)?, q, config)?;
        Ok(Self { params: report.params, standardizer })
    }

    /// Refits the standardizer on `train` and runs one LM pass starting
    /// from the current weights.
    pub fn retrain(&self, train: &SupervisedDataset, valid: &SupervisedDataset, config: &TrainConfig) -> Result<Self> {
        let standardizer = Standardizer::fit(train)?;
        let report = train_lm_from(
            self.params.clone(),
            &standardizer.apply(train)?,
            &standardizer.apply(valid)?,
            config,
        )?;
        Ok(Self { params: report.params, standardizer })
    }

    pub fn to_document(&self) -> MlpDocument {
        MlpDocument {
            params: self.params.to_document(),
            standardizer: self.standardizer.clone(),
        }
    }

    pub fn from_document(doc: &MlpDocument) -> Result<Self> {
        Ok(Self {
            params: MlpParams::from_document(&doc.params)?,
            standardizer: doc.standardizer.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDocument {
    pub params: MlpParamsDocument,
    pub standardizer: Standardizer,
}

impl OneStepModel for MlpForecaster {
    fn lags(&self) -> usize {
        self.params.inputs()
    }

    fn forecast_next(&self, window: &[f64]) -> Result<f64> {
        let z = self.standardizer.apply_input(window);
        Ok(self.standardizer.invert_target(self.params.forward(&z)?))
    }
}
