//! Panel ingestion, descriptive statistics, lag embedding, chronological
//! splitting and standardization.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lag order: one seasonal cycle of monthly data.
pub const DEFAULT_LAGS: usize = 12;

/// A calendar month, serialized as `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct YearMonth {
    year: i32,
    month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidArgument(format!("month {month} out of range")));
        }
        Ok(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month
    }

    /// Month index counted from year 0, used for differences.
    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn plus(self, months: i64) -> Self {
        let o = self.ordinal() + months;
        Self {
            year: o.div_euclid(12) as i32,
            month: (o.rem_euclid(12) + 1) as u32,
        }
    }

    pub fn months_since(self, earlier: YearMonth) -> i64 {
        self.ordinal() - earlier.ordinal()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("expected YYYY-MM, got {s:?}"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year: i32 = y.parse().map_err(|_| bad())?;
        let month: u32 = m.parse().map_err(|_| bad())?;
        YearMonth::new(year, month)
    }
}

impl TryFrom<String> for YearMonth {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<YearMonth> for String {
    fn from(ym: YearMonth) -> String {
        ym.to_string()
    }
}

/// A date-indexed matrix of `M` monthly series with `n` consecutive rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    start_month: YearMonth,
    series_names: Vec<String>,
    values: DMatrix<f64>,
}

impl TimeSeriesPanel {
    pub fn new(start_month: YearMonth, series_names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::InvalidPanel(format!(
                "need at least 2 months, got {}",
                values.nrows()
            )));
        }
        if values.ncols() == 0 || values.ncols() != series_names.len() {
            return Err(Error::InvalidPanel(format!(
                "{} series names for {} value columns",
                series_names.len(),
                values.ncols()
            )));
        }
        for (i, name) in series_names.iter().enumerate() {
            if name.trim().is_empty() {
                return Err(Error::InvalidPanel(format!("series {i} has an empty name")));
            }
            if series_names[..i].contains(name) {
                return Err(Error::InvalidPanel(format!("duplicate series name {name:?}")));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::InvalidPanel(format!("non-finite value at row {r}, column {c}")));
        }
        Ok(Self {
            start_month,
            series_names,
            values,
        })
    }

    pub fn start_month(&self) -> YearMonth {
        self.start_month
    }

    pub fn month_at(&self, row: usize) -> YearMonth {
        self.start_month.plus(row as i64)
    }

    /// Row index of `month`, if it lies inside the panel.
    pub fn row_of(&self, month: YearMonth) -> Option<usize> {
        let d = month.months_since(self.start_month);
        (d >= 0 && (d as usize) < self.len()).then_some(d as usize)
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn num_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn series_names(&self) -> &[String] {
        &self.series_names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn series(&self, s: usize) -> Vec<f64> {
        self.values.column(s).iter().copied().collect()
    }

    /// Row sums, described as one aggregate series.
    pub fn total(&self) -> Vec<f64> {
        self.values.row_iter().map(|r| r.sum()).collect()
    }

    /// Rows `range` as a new panel.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start >= range.end {
            return Err(Error::InvalidArgument(format!(
                "row range {range:?} outside panel of {} rows",
                self.len()
            )));
        }
        let values = self.values.rows(range.start, range.len()).into_owned();
        TimeSeriesPanel::new(self.month_at(range.start), self.series_names.clone(), values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_bytes(&bytes)
    }

    /// Parses the panel CSV format: `date,<name1>,...,<nameM>` then one
    /// `YYYY-MM` row per month. Row numbers in errors are 1-based file lines.
    pub fn from_csv_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(bytes);
        let header = reader
            .headers()
            .map_err(|e| Error::Parse { row: 1, col: 0, msg: e.to_string() })?
            .clone();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(Error::Parse { row: 1, col: 0, msg: "empty file".into() });
        }
        if header.len() < 2 {
            return Err(Error::Parse {
                row: 1,
                col: 1,
                msg: "header needs a date column and at least one series".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let m = names.len();

        let mut start: Option<YearMonth> = None;
        let mut prev: Option<YearMonth> = None;
        let mut data = Vec::new();
        let mut rows = 0usize;
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Parse { row: line, col: 0, msg: e.to_string() })?;
            if rec.len() != m + 1 {
                return Err(Error::Parse {
                    row: line,
                    col: rec.len(),
                    msg: format!("expected {} fields, found {}", m + 1, rec.len()),
                });
            }
            let date: YearMonth = rec[0].parse().map_err(|e: Error| Error::Parse {
                row: line,
                col: 0,
                msg: e.to_string(),
            })?;
            if let Some(p) = prev {
                let step = date.months_since(p);
                if step == 0 {
                    return Err(Error::Parse {
                        row: line,
                        col: 0,
                        msg: format!("duplicate date {date}"),
                    });
                }
                if step != 1 {
                    return Err(Error::MonthGap {
                        row: line,
                        expected: p.plus(1).to_string(),
                        found: date.to_string(),
                    });
                }
            } else {
                start = Some(date);
            }
            prev = Some(date);
            for (c, field) in rec.iter().enumerate().skip(1) {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    row: line,
                    col: c,
                    msg: format!("non-numeric cell {field:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: line,
                        col: c,
                        msg: format!("non-finite cell {field:?}"),
                    });
                }
                data.push(v);
            }
            rows += 1;
        }
        let start = start.ok_or(Error::Parse { row: 2, col: 0, msg: "empty file: no data rows".into() })?;
        let values = DMatrix::from_row_slice(rows, m, &data);
        TimeSeriesPanel::new(start, names, values)
    }

    /// Values are written with the shortest representation that parses back
    /// to the same `f64`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.len() * (self.num_series() + 1) * 12);
        out.push_str("date");
        for name in &self.series_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for r in 0..self.len() {
            out.push_str(&self.month_at(r).to_string());
            for c in 0..self.num_series() {
                out.push(',');
                out.push_str(&format!("{}", self.values[(r, c)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Summary moments of one series over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation (n - 1 divisor).
    pub std: f64,
    pub skewness: f64,
    /// Excess kurtosis.
    pub kurtosis: f64,
}

/// Moments of a single series. Skewness and kurtosis are the moment ratios
/// `m3 / m2^1.5` and `m4 / m2^2 - 3` with `1/n` central moments.
pub fn describe_series(values: &[f64]) -> Result<SeriesSummary> {
    let n = values.len();
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "describe needs at least 4 observations, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    if m2 == 0.0 {
        return Err(Error::ZeroVariance("series is constant; skewness undefined".into()));
    }
    let std = (m2 / (nf - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    Ok(SeriesSummary {
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        std,
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2) - 3.0,
    })
}

/// Per-series summaries in panel column order.
pub fn describe_panel(panel: &TimeSeriesPanel) -> Result<Vec<(String, SeriesSummary)>> {
    panel
        .series_names()
        .iter()
        .enumerate()
        .map(|(s, name)| {
            describe_series(&panel.series(s))
                .map(|d| (name.clone(), d))
                .map_err(|e| match e {
                    Error::ZeroVariance(msg) => Error::ZeroVariance(format!("{name}: {msg}")),
                    other => other,
                })
        })
        .collect()
}

/// Lag-embedded input/target pairs for one series.
///
/// Row `i` holds `[y_{t-1}, ..., y_{t-p}]` for target `y_t` with
/// `t = origin_index + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedDataset {
    pub inputs: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub lags: usize,
    pub origin_index: usize,
}

impl SupervisedDataset {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>, origin_index: usize) -> Result<Self> {
        if inputs.nrows() != targets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} input rows vs {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        Ok(Self {
            lags: inputs.ncols(),
            inputs,
            targets,
            origin_index,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Embeds `series` with lag order `p`, most recent lag first.
pub fn embed(series: &[f64], p: usize) -> Result<SupervisedDataset> {
    embed_range(series, p, p..series.len())
}

/// Embeds only the targets whose indices fall in `targets`; every target
/// index must have `p` observations before it.
pub fn embed_range(series: &[f64], p: usize, targets: Range<usize>) -> Result<SupervisedDataset> {
    if p == 0 {
        return Err(Error::InvalidArgument("lag order must be at least 1".into()));
    }
    if series.len() <= p {
        return Err(Error::InvalidArgument(format!(
            "series of length {} too short for {p} lags",
            series.len()
        )));
    }
    if targets.start < p || targets.end > series.len() || targets.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "target rows {targets:?} infeasible for {p} lags over {} observations",
            series.len()
        )));
    }
    let n = targets.len();
    let inputs = DMatrix::from_fn(n, p, |i, j| series[targets.start + i - 1 - j]);
    let target_vec = DVector::from_fn(n, |i, _| series[targets.start + i]);
    SupervisedDataset::new(inputs, target_vec, targets.start)
}

/// Train/validation lengths; the test segment is whatever remains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_len: usize,
    pub valid_len: usize,
}

/// Contiguous chronological row ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        if self.train_len < p + 1 {
            return Err(Error::InvalidArgument(format!(
                "train length {} must exceed lag order {p}",
                self.train_len
            )));
        }
        if self.valid_len < 1 {
            return Err(Error::InvalidArgument("validation length must be at least 1".into()));
        }
        if self.train_len + self.valid_len >= n {
            return Err(Error::InvalidArgument(format!(
                "train {} + valid {} leaves no test rows in a panel of {n}",
                self.train_len, self.valid_len
            )));
        }
        Ok(())
    }
}

pub fn split(panel: &TimeSeriesPanel, spec: SplitSpec, p: usize) -> Result<Split> {
    split_len(panel.len(), spec, p)
}

pub fn split_len(n: usize, spec: SplitSpec, p: usize) -> Result<Split> {
    spec.validate(n, p)?;
    let v = spec.train_len + spec.valid_len;
    Ok(Split {
        train: 0..spec.train_len,
        valid: spec.train_len..v,
        test: v..n,
    })
}

/// Per-column affine standardization of a supervised dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

impl Standardizer {
    /// No-op transform on `p` inputs.
    pub fn identity(p: usize) -> Self {
        Self {
            means: vec![0.0; p],
            scales: vec![1.0; p],
            target_mean: 0.0,
            target_scale: 1.0,
        }
    }

    pub fn fit(dataset: &SupervisedDataset) -> Result<Self> {
        if dataset.len() < 2 {
            return Err(Error::InvalidArgument("standardizer needs at least 2 rows".into()));
        }
        let mut means = Vec::with_capacity(dataset.lags);
        let mut scales = Vec::with_capacity(dataset.lags);
        for j in 0..dataset.lags {
            let (m, s) = mean_std(dataset.inputs.column(j).iter().copied());
            if !(s > 0.0) {
                return Err(Error::ZeroVariance(format!("input column {j} is constant")));
            }
            means.push(m);
            scales.push(s);
        }
        let (target_mean, target_scale) = mean_std(dataset.targets.iter().copied());
        if !(target_scale > 0.0) {
            return Err(Error::ZeroVariance("target is constant".into()));
        }
        Ok(Self {
            means,
            scales,
            target_mean,
            target_scale,
        })
    }

    pub fn lags(&self) -> usize {
        self.means.len()
    }

    pub fn apply_input(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_scale
    }

    pub fn invert_target(&self, z: f64) -> f64 {
        z * self.target_scale + self.target_mean
    }

    pub fn invert_input(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }

    pub fn apply(&self, dataset: &SupervisedDataset) -> Result<SupervisedDataset> {
        self.check(dataset)?;
        let inputs = DMatrix::from_fn(dataset.len(), dataset.lags, |i, j| {
            (dataset.inputs[(i, j)] - self.means[j]) / self.scales[j]
        });
        let targets = dataset.targets.map(|y| self.apply_target(y));
        SupervisedDataset::new(inputs, targets, dataset.origin_index)
    }

    pub fn invert(&self, dataset: &SupervisedDataset) -> Result<SupervisedDataset> {
        self.check(dataset)?;
        let inputs = DMatrix::from_fn(dataset.len(), dataset.lags, |i, j| {
            dataset.inputs[(i, j)] * self.scales[j] + self.means[j]
        });
        let targets = dataset.targets.map(|z| self.invert_target(z));
        SupervisedDataset::new(inputs, targets, dataset.origin_index)
    }

    fn check(&self, dataset: &SupervisedDataset) -> Result<()> {
        if dataset.lags != self.lags() {
            return Err(Error::DimensionMismatch(format!(
                "standardizer has {} lags, dataset {}",
                self.lags(),
                dataset.lags
            )));
        }
        Ok(())
    }
}
