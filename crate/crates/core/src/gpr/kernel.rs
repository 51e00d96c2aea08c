//! Radial basis kernel with a linear trend and a constant offset:
//!
//! `k(x, x') = nu^2 exp(-|x - x'|^2 / (2 lambda^2)) + gamma x.x' + kappa`

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest value representable in log space; zero `gamma`/`kappa`/`sigma`
/// are floored here before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Number of hyperparameters, ordered `(nu, lambda, gamma, kappa, sigma)`.
pub const N_HYPER: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    /// Prior amplitude of the radial component.
    pub nu: f64,
    /// Length-scale.
    pub lambda: f64,
    /// Weight of the linear (dot-product) trend.
    pub gamma: f64,
    /// Constant offset.
    pub kappa: f64,
    /// Observation-noise standard deviation.
    pub sigma: f64,
}

impl KernelHyperparams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.nu, self.lambda, self.gamma, self.kappa, self.sigma];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite hyperparameters {self:?}")));
        }
        if self.nu <= 0.0 || self.lambda <= 0.0 {
            return Err(Error::InvalidArgument(format!("nu and lambda must be positive: {self:?}")));
        }
        if self.gamma < 0.0 || self.kappa < 0.0 || self.sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "gamma, kappa and sigma must be nonnegative: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn to_log(&self) -> [f64; N_HYPER] {
        [self.nu, self.lambda, self.gamma, self.kappa, self.sigma].map(|v| v.max(LOG_FLOOR).ln())
    }

    pub fn from_log(l: &[f64; N_HYPER]) -> Self {
        Self {
            nu: l[0].exp(),
            lambda: l[1].exp(),
            gamma: l[2].exp(),
            kappa: l[3].exp(),
            sigma: l[4].exp(),
        }
    }

    pub fn noise_variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

#[inline]
pub(crate) fn eval_unchecked(a: impl Iterator<Item = f64> + Clone, b: impl Iterator<Item = f64> + Clone, th: &KernelHyperparams) -> f64 {
    let mut d2 = 0.0;
    let mut dot = 0.0;
    for (x, y) in a.zip(b) {
        d2 += (x - y) * (x - y);
        dot += x * y;
    }
    th.nu * th.nu * (-d2 / (2.0 * th.lambda * th.lambda)).exp() + th.gamma * dot + th.kappa
}

pub fn kernel_eval(x_i: &[f64], x_j: &[f64], theta: &KernelHyperparams) -> Result<f64> {
    if x_i.len() != x_j.len() {
        return Err(Error::DimensionMismatch(format!(
            "kernel arguments of length {} and {}",
            x_i.len(),
            x_j.len()
        )));
    }
    Ok(eval_unchecked(x_i.iter().copied(), x_j.iter().copied(), theta))
}

/// Cross-covariance matrix with element `(i, j) = k(a_i, b_j)`.
pub fn kernel_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, theta: &KernelHyperparams) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "kernel inputs with {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    // Row-major copies keep the inner loop contiguous.
    let ar = row_major(a);
    let br = row_major(b);
    let p = a.ncols();
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let x = &ar[i * p..(i + 1) * p];
        let y = &br[j * p..(j + 1) * p];
        eval_unchecked(x.iter().copied(), y.iter().copied(), theta)
    }))
}

/// Symmetric `K(X, X)`; the lower triangle is computed and mirrored so that
/// the result is exactly symmetric.
pub fn kernel_gram(x: &DMatrix<f64>, theta: &KernelHyperparams) -> DMatrix<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let xr = row_major(x);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = eval_unchecked(
                xr[i * p..(i + 1) * p].iter().copied(),
                xr[j * p..(j + 1) * p].iter().copied(),
                theta,
            );
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter().copied());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn theta(nu: f64, lambda: f64, gamma: f64, kappa: f64) -> KernelHyperparams {
        KernelHyperparams { nu, lambda, gamma, kappa, sigma: 0.1 }
    }

    #[test]
    fn zero_distance_gives_prior_variance() {
        let t = theta(1.7, 0.3, 0.0, 0.0);
        let v = kernel_eval(&[0.2, -1.0], &[0.2, -1.0], &t).unwrap();
        assert!((v - 1.7 * 1.7).abs() < 1e-15);
    }

    #[test]
    fn gaussian_tail() {
        let t = theta(1.0, 1.0, 0.0, 0.0);
        let v = kernel_eval(&[0.0], &[10.0], &t).unwrap();
        assert!((v - (-50.0f64).exp()).abs() < 1e-35);
        assert!((v - 1.93e-22).abs() < 0.01e-22);
    }

    #[test]
    fn hand_evaluated_mixture() {
        let t = theta(1.0, 1.0, 0.5, 0.25);
        let v = kernel_eval(&[1.0, 0.0], &[0.0, 1.0], &t).unwrap();
        assert!((v - ((-1.0f64).exp() + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let t = theta(1.0, 1.0, 0.0, 0.0);
        assert!(kernel_eval(&[1.0], &[1.0, 2.0], &t).is_err());
        assert!(kernel_matrix(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 3), &t).is_err());
    }

    #[test]
    fn one_row_gram() {
        let t = theta(1.3, 0.7, 0.2, 0.05);
        let x = DMatrix::from_row_slice(1, 2, &[0.5, -2.0]);
        let k = kernel_matrix(&x, &x, &t).unwrap();
        let expect = 1.3 * 1.3 + 0.2 * (0.25 + 4.0) + 0.05;
        assert!((k[(0, 0)] - expect).abs() < 1e-14);
    }

    #[test]
    fn gram_is_exactly_symmetric_and_matches_cross() {
        let x = DMatrix::from_fn(7, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let t = theta(0.9, 1.4, 0.3, 0.1);
        let g = kernel_gram(&x, &t);
        assert_eq!(g, g.transpose());
        let c = kernel_matrix(&x, &x, &t).unwrap();
        assert!((g - c).amax() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(theta(0.0, 1.0, 0.0, 0.0).validate().is_err());
        assert!(theta(1.0, 1.0, -1.0, 0.0).validate().is_err());
        assert!(theta(1.0, f64::NAN, 0.0, 0.0).validate().is_err());
        assert!(theta(1.0, 1.0, 0.0, 0.0).validate().is_ok());
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric(a in prop::collection::vec(-5.0f64..5.0, 3), b in prop::collection::vec(-5.0f64..5.0, 3),
                               nu in 0.1f64..3.0, l in 0.1f64..3.0, g in 0.0f64..1.0, k in 0.0f64..1.0) {
            let t = theta(nu, l, g, k);
            prop_assert_eq!(kernel_eval(&a, &b, &t).unwrap(), kernel_eval(&b, &a, &t).unwrap());
        }

        #[test]
        fn log_round_trip(nu in 1e-3f64..1e3, l in 1e-3f64..1e3, g in 1e-3f64..1e3) {
            let t = KernelHyperparams { nu, lambda: l, gamma: g, kappa: 0.5, sigma: 0.2 };
            let back = KernelHyperparams::from_log(&t.to_log());
            prop_assert!((back.nu / nu - 1.0).abs() < 1e-14);
            prop_assert!((back.lambda / l - 1.0).abs() < 1e-14);
            prop_assert!((back.gamma / g - 1.0).abs() < 1e-14);
        }
    }
}
