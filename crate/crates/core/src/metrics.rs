//! Forecast accuracy statistics: MAPE, relative MAPE, Diebold–Mariano with a
//! Newey–West long-run variance, the small-sample modified DM, and the
//! percentage of periods with lower absolute error.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Critical value printed next to DM statistics in comparison tables.
pub const DISPLAY_CRITICAL_VALUE: f64 = 2.028;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    /// `e_t = y_t − ŷ_t`.
    pub errors: Vec<f64>,
    pub actuals: Vec<f64>,
    pub horizon: usize,
}

impl ErrorSeries {
    pub fn new(errors: Vec<f64>, actuals: Vec<f64>, horizon: usize) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::InvalidArgument("error series is empty".into()));
        }
        if errors.len() != actuals.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} errors but {} actuals",
                errors.len(),
                actuals.len()
            )));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if errors.iter().chain(&actuals).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("error series contains non-finite values".into()));
        }
        Ok(Self { errors, actuals, horizon })
    }

    pub fn from_forecasts(actuals: &[f64], forecasts: &[f64], horizon: usize) -> Result<Self> {
        if actuals.len() != forecasts.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} actuals but {} forecasts",
                actuals.len(),
                forecasts.len()
            )));
        }
        let errors = actuals.iter().zip(forecasts).map(|(y, f)| y - f).collect();
        Self::new(errors, actuals.to_vec(), horizon)
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Absolute,
    Squared,
}

impl Loss {
    pub fn apply(self, e: f64) -> f64 {
        match self {
            Loss::Absolute => e.abs(),
            Loss::Squared => e * e,
        }
    }
}

fn same_length(a: &ErrorSeries, b: &ErrorSeries) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "error series of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Mean absolute percentage error in percent.
pub fn mape(es: &ErrorSeries) -> Result<f64> {
    let mut total = 0.0;
    for (t, (e, y)) in es.errors.iter().zip(&es.actuals).enumerate() {
        if *y == 0.0 {
            return Err(Error::InvalidArgument(format!("zero actual at period {t}")));
        }
        total += (e / y).abs();
    }
    Ok(100.0 * total / es.len() as f64)
}

/// `MAPE(candidate) / MAPE(benchmark)`.
pub fn rmape(candidate: &ErrorSeries, benchmark: &ErrorSeries) -> Result<f64> {
    same_length(candidate, benchmark)?;
    let b = mape(benchmark)?;
    if b == 0.0 {
        return Err(Error::InvalidArgument("benchmark MAPE is zero".into()));
    }
    Ok(mape(candidate)? / b)
}

/// Newey–West long-run variance with Bartlett weights and truncation lag
/// `h − 1`; autocovariances use the `1/n` divisor.
pub fn newey_west_variance(d: &[f64], h: usize) -> f64 {
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n as f64;
    let autocov = |k: usize| -> f64 {
        (k..n).map(|t| (d[t] - mean) * (d[t - k] - mean)).sum::<f64>() / n as f64
    };
    let mut v = autocov(0);
    for k in 1..h.min(n) {
        v += 2.0 * (1.0 - k as f64 / h as f64) * autocov(k);
    }
    v
}

/// Diebold–Mariano statistic for `d_t = L(e_A,t) − L(e_B,t)`; negative when
/// A has the smaller losses.
pub fn dm_test(a: &ErrorSeries, b: &ErrorSeries, h: usize, loss: Loss) -> Result<f64> {
    same_length(a, b)?;
    if a.len() < 2 {
        return Err(Error::InvalidArgument("DM test needs at least two periods".into()));
    }
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let d: Vec<f64> = a
        .errors
        .iter()
        .zip(&b.errors)
        .map(|(ea, eb)| loss.apply(*ea) - loss.apply(*eb))
        .collect();
    let n = d.len() as f64;
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let v = newey_west_variance(&d, h);
    if scale == 0.0 || !(v > (1e-12 * scale).powi(2)) {
        return Err(Error::InvalidArgument(
            "loss differential has zero variance (identical losses): test undefined".into(),
        ));
    }
    let mean = d.iter().sum::<f64>() / n;
    Ok(mean / (v / n).sqrt())
}

/// Small-sample correction factor `√((n + 1 − 2h + h(h−1)/n) / n)`.
pub fn mdm_factor(n: usize, h: usize) -> Result<f64> {
    if h == 0 || n <= h {
        return Err(Error::InvalidArgument(format!(
            "modified DM needs n > h >= 1 (n={n}, h={h})"
        )));
    }
    let (nf, hf) = (n as f64, h as f64);
    Ok(((nf + 1.0 - 2.0 * hf + hf * (hf - 1.0) / nf) / nf).sqrt())
}

pub fn mdm_test(dm_stat: f64, n: usize, h: usize) -> Result<f64> {
    Ok(dm_stat * mdm_factor(n, h)?)
}

/// Percentage of periods where `|e_A| < |e_B|` strictly.
pub fn plae(a: &ErrorSeries, b: &ErrorSeries) -> Result<f64> {
    same_length(a, b)?;
    let wins = a
        .errors
        .iter()
        .zip(&b.errors)
        .filter(|(ea, eb)| ea.abs() < eb.abs())
        .count();
    Ok(100.0 * wins as f64 / a.len() as f64)
}

/// Two-sided 5% Student-t critical value with `df` degrees of freedom.
pub fn student_t_critical(df: usize) -> Result<f64> {
    let t = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::InvalidArgument(format!("Student-t with {df} degrees of freedom: {e}")))?;
    Ok(t.inverse_cdf(0.975))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub rmape: f64,
    /// `None` when the loss differential has zero variance.
    pub dm_stat: Option<f64>,
    pub mdm_stat: Option<f64>,
    pub plae_pct: f64,
    pub n: usize,
    pub critical_value: f64,
    pub student_t_critical: f64,
}

/// Candidate versus benchmark on one series and horizon.
pub fn compare(candidate: &ErrorSeries, benchmark: &ErrorSeries, loss: Loss) -> Result<ComparisonResult> {
    same_length(candidate, benchmark)?;
    let h = candidate.horizon;
    if benchmark.horizon != h {
        return Err(Error::InvalidArgument(format!(
            "horizons differ ({h} vs {})",
            benchmark.horizon
        )));
    }
    let n = candidate.len();
    let dm_stat = match dm_test(candidate, benchmark, h, loss) {
        Ok(v) => Some(v),
        Err(Error::InvalidArgument(_)) => None,
        Err(e) => return Err(e),
    };
    let mdm_stat = match dm_stat {
        Some(v) if n > h => Some(mdm_test(v, n, h)?),
        _ => None,
    };
    Ok(ComparisonResult {
        rmape: rmape(candidate, benchmark)?,
        dm_stat,
        mdm_stat,
        plae_pct: plae(candidate, benchmark)?,
        n,
        critical_value: DISPLAY_CRITICAL_VALUE,
        student_t_critical: if n >= 2 { student_t_critical(n - 1)? } else { f64::NAN },
    })
}
