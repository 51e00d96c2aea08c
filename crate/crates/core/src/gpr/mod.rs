//! Single-output Gaussian process regression.

mod fit;
mod kernel;
mod model;

pub(crate) use kernel::row_major;

pub use fit::{ascend, fit, fit_from, fit_series, initial_center, refit_series, restart_start, Ascent, FitConfig};
pub use kernel::{kernel_eval, kernel_gram, kernel_matrix, KernelHyperparams, LOG_FLOOR, N_HYPER};
pub use model::{
    lml_gradient, lml_with_gradient, log_marginal_likelihood, log_marginal_likelihood_with_jitter, GprDocument,
    GprModel, Prediction, DEFAULT_JITTER, MAX_JITTER,
};
