use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::kernel::{kernel_gram, kernel_matrix, row_major, KernelHyperparams, N_HYPER};
use crate::error::{Error, Result};
use crate::timeseries::Standardizer;

pub const DEFAULT_JITTER: f64 = 1e-10;
pub const MAX_JITTER: f64 = 1e-4;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cholesky factor of `K + (sigma^2 + jitter) I` together with the jitter
/// that made it succeed.
pub(crate) struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

/// Factorizes `gram + (noise + jitter) I`, doubling the jitter from `start`
/// until the factorization succeeds or `MAX_JITTER` is exceeded.
pub(crate) fn factorize(gram: &DMatrix<f64>, noise: f64, start: f64) -> Result<Factor> {
    let mut jitter = start;
    loop {
        let mut k = gram.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += noise + jitter;
        }
        if let Some(chol) = k.cholesky() {
            return Ok(Factor { chol, jitter });
        }
        if jitter * 2.0 > MAX_JITTER {
            return Err(Error::Indefinite { jitter });
        }
        jitter *= 2.0;
    }
}

fn check_xy(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} input rows vs {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    Ok(())
}

fn lml_from(factor: &Factor, y: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let logdet: f64 = 2.0 * factor.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * y.dot(alpha) - 0.5 * logdet - 0.5 * n * LN_2PI
}

/// `log p(y | X, theta)` for the noisy GP prior.
pub fn log_marginal_likelihood(x: &DMatrix<f64>, y: &DVector<f64>, theta: &KernelHyperparams) -> Result<f64> {
    log_marginal_likelihood_with_jitter(x, y, theta, DEFAULT_JITTER)
}

pub fn log_marginal_likelihood_with_jitter(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &KernelHyperparams,
    jitter: f64,
) -> Result<f64> {
    check_xy(x, y)?;
    theta.validate()?;
    let factor = factorize(&kernel_gram(x, theta), theta.noise_variance(), jitter)?;
    let alpha = factor.chol.solve(y);
    Ok(lml_from(&factor, y, &alpha))
}

/// Gradient of the log marginal likelihood with respect to
/// `(ln nu, ln lambda, ln gamma, ln kappa, ln sigma)`.
pub fn lml_gradient(x: &DMatrix<f64>, y: &DVector<f64>, theta: &KernelHyperparams) -> Result<[f64; N_HYPER]> {
    lml_with_gradient(x, y, theta, DEFAULT_JITTER).map(|(_, g)| g)
}

/// Value and log-space gradient in one factorization:
/// `d/dθ = ½ tr[(α αᵀ − K⁻¹) ∂K/∂θ]`.
pub fn lml_with_gradient(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &KernelHyperparams,
    jitter: f64,
) -> Result<(f64, [f64; N_HYPER])> {
    check_xy(x, y)?;
    theta.validate()?;
    let n = x.nrows();
    let p = x.ncols();
    let xr = row_major(x);

    // Radial part and squared distances, reused by the nu and lambda terms.
    let mut rbf = DMatrix::zeros(n, n);
    let mut d2 = DMatrix::zeros(n, n);
    let mut dots = DMatrix::zeros(n, n);
    let two_l2 = 2.0 * theta.lambda * theta.lambda;
    for i in 0..n {
        for j in 0..=i {
            let (mut s, mut d) = (0.0, 0.0);
            for k in 0..p {
                let (a, b) = (xr[i * p + k], xr[j * p + k]);
                s += (a - b) * (a - b);
                d += a * b;
            }
            let r = theta.nu * theta.nu * (-s / two_l2).exp();
            rbf[(i, j)] = r;
            rbf[(j, i)] = r;
            d2[(i, j)] = s;
            d2[(j, i)] = s;
            dots[(i, j)] = d;
            dots[(j, i)] = d;
        }
    }
    let gram = DMatrix::from_fn(n, n, |i, j| rbf[(i, j)] + theta.gamma * dots[(i, j)] + theta.kappa);
    let factor = factorize(&gram, theta.noise_variance(), jitter)?;
    let alpha = factor.chol.solve(y);
    let lml = lml_from(&factor, y, &alpha);

    let kinv = factor.chol.inverse();
    let mut g = [0.0; N_HYPER];
    let inv_l2 = 1.0 / (theta.lambda * theta.lambda);
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            g[0] += w * 2.0 * rbf[(i, j)];
            g[1] += w * rbf[(i, j)] * d2[(i, j)] * inv_l2;
            g[2] += w * theta.gamma * dots[(i, j)];
            g[3] += w * theta.kappa;
        }
        let w = alpha[i] * alpha[i] - kinv[(i, i)];
        g[4] += w * 2.0 * theta.noise_variance();
    }
    for v in &mut g {
        *v *= 0.5;
    }
    Ok((lml, g))
}

/// Posterior mean and covariance at a batch of test inputs.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// A fitted single-output GP with its cached factorization.
///
/// Training inputs and targets are held in standardized units; the
/// `standardizer` maps raw lag windows in and forecasts back out.
#[derive(Clone)]
pub struct GprModel {
    train_inputs: DMatrix<f64>,
    train_targets: DVector<f64>,
    hyperparams: KernelHyperparams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    lml: f64,
    standardizer: Standardizer,
}

impl std::fmt::Debug for GprModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GprModel")
            .field("n", &self.train_inputs.nrows())
            .field("p", &self.train_inputs.ncols())
            .field("hyperparams", &self.hyperparams)
            .field("jitter", &self.jitter)
            .field("lml", &self.lml)
            .finish()
    }
}

impl GprModel {
    /// Conditions the GP on `(inputs, targets)` with fixed hyperparameters,
    /// escalating jitter from `jitter` as needed.
    pub fn new(
        inputs: DMatrix<f64>,
        targets: DVector<f64>,
        hyperparams: KernelHyperparams,
        standardizer: Standardizer,
        jitter: f64,
    ) -> Result<Self> {
        check_xy(&inputs, &targets)?;
        hyperparams.validate()?;
        if standardizer.lags() != inputs.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "standardizer has {} lags, inputs {}",
                standardizer.lags(),
                inputs.ncols()
            )));
        }
        if !(jitter > 0.0) {
            return Err(Error::InvalidArgument("jitter must be positive".into()));
        }
        let factor = factorize(&kernel_gram(&inputs, &hyperparams), hyperparams.noise_variance(), jitter)?;
        let alpha = factor.chol.solve(&targets);
        let lml = lml_from(&factor, &targets, &alpha);
        Ok(Self {
            train_inputs: inputs,
            train_targets: targets,
            hyperparams,
            jitter: factor.jitter,
            chol: factor.chol,
            alpha,
            lml,
            standardizer,
        })
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hyperparams
    }

    pub fn train_inputs(&self) -> &DMatrix<f64> {
        &self.train_inputs
    }

    pub fn train_targets(&self) -> &DVector<f64> {
        &self.train_targets
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn lags(&self) -> usize {
        self.train_inputs.ncols()
    }

    /// Jitter actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    /// Lower-triangular `L` with `L Lᵀ = K + (sigma^2 + jitter) I`.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn check_cols(&self, x_star: &DMatrix<f64>) -> Result<()> {
        if x_star.ncols() != self.lags() {
            return Err(Error::DimensionMismatch(format!(
                "test inputs have {} columns, model {}",
                x_star.ncols(),
                self.lags()
            )));
        }
        Ok(())
    }

    /// Posterior mean `K(X*, X) α` in standardized units.
    pub fn predict_mean(&self, x_star: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_cols(x_star)?;
        let ks = kernel_matrix(x_star, &self.train_inputs, &self.hyperparams)?;
        Ok(ks * &self.alpha)
    }

    /// Posterior mean and covariance in standardized units. Diagonal
    /// entries within `1e-8` below zero are clamped to zero.
    pub fn predict(&self, x_star: &DMatrix<f64>) -> Result<Prediction> {
        self.check_cols(x_star)?;
        let ks = kernel_matrix(&self.train_inputs, x_star, &self.hyperparams)?;
        let mean = ks.tr_mul(&self.alpha);
        let l = self.chol.l();
        let v = l
            .solve_lower_triangular(&ks)
            .ok_or_else(|| Error::Singular("cholesky factor has a zero pivot".into()))?;
        let kss = kernel_matrix(x_star, x_star, &self.hyperparams)?;
        let mut cov = kss - v.tr_mul(&v);
        for i in 0..cov.nrows() {
            let d = cov[(i, i)];
            if (-1e-8..0.0).contains(&d) {
                cov[(i, i)] = 0.0;
            }
        }
        Ok(Prediction { mean, cov })
    }

    /// One-step forecast from a raw lag window (most recent first), in the
    /// original units of the series.
    pub fn forecast_next(&self, window: &[f64]) -> Result<f64> {
        if window.len() != self.lags() {
            return Err(Error::DimensionMismatch(format!(
                "window of {} values for a {}-lag model",
                window.len(),
                self.lags()
            )));
        }
        let z = self.standardizer.apply_input(window);
        let p = self.lags();
        let mut mean = 0.0;
        for (i, a) in self.alpha.iter().enumerate() {
            let k = super::kernel::eval_unchecked(
                z.iter().copied(),
                (0..p).map(|j| self.train_inputs[(i, j)]),
                &self.hyperparams,
            );
            mean += k * a;
        }
        Ok(self.standardizer.invert_target(mean))
    }

    pub fn to_document(&self) -> GprDocument {
        GprDocument {
            hyperparams: self.hyperparams,
            jitter: self.jitter,
            standardizer: self.standardizer.clone(),
            rows: self.train_inputs.nrows(),
            cols: self.train_inputs.ncols(),
            inputs: row_major(&self.train_inputs),
            targets: self.train_targets.iter().copied().collect(),
        }
    }

    /// Rebuilds a model from its document. The stored jitter is reused as
    /// the starting point, which reproduces the original factorization.
    pub fn from_document(doc: &GprDocument) -> Result<Self> {
        if doc.inputs.len() != doc.rows * doc.cols || doc.targets.len() != doc.rows {
            return Err(Error::Document("training block size does not match its dimensions".into()));
        }
        let inputs = DMatrix::from_row_slice(doc.rows, doc.cols, &doc.inputs);
        let targets = DVector::from_vec(doc.targets.clone());
        let model = Self::new(inputs, targets, doc.hyperparams, doc.standardizer.clone(), doc.jitter)?;
        if model.jitter != doc.jitter {
            return Err(Error::Document(format!(
                "stored jitter {:e} no longer factorizes the kernel matrix",
                doc.jitter
            )));
        }
        Ok(model)
    }
}

/// Serialized form of a fitted GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprDocument {
    pub hyperparams: KernelHyperparams,
    pub jitter: f64,
    pub standardizer: Standardizer,
    pub rows: usize,
    pub cols: usize,
    /// Standardized training inputs, row-major.
    pub inputs: Vec<f64>,
    /// Standardized training targets.
    pub targets: Vec<f64>,
}
