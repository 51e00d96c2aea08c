//! Tabular reports in CSV and Markdown twins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{ForecastRecord, ModelKind};
use crate::metrics::{compare, ComparisonResult, ErrorSeries, Loss, DISPLAY_CRITICAL_VALUE};
use crate::timeseries::{describe_panel, describe_series, SeriesSummary, TimeSeriesPanel};

pub const DESCRIBE_COLUMNS: [&str; 6] = ["Minimum", "Maximum", "Mean", "Standard deviation", "Skewness", "Kurtosis"];

fn csv_line(fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
    w.write_record(fields).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn md_row(fields: &[String]) -> String {
    format!("| {} |\n", fields.join(" | "))
}

fn md_rule(cols: usize) -> String {
    format!("|{}\n", "---|".repeat(cols))
}

/// Per-series summaries followed by a `Total` row for the row sums.
pub fn describe_with_total(panel: &TimeSeriesPanel) -> Result<Vec<(String, SeriesSummary)>> {
    let mut rows = describe_panel(panel)?;
    rows.push(("Total".to_string(), describe_series(&panel.total())?));
    Ok(rows)
}

fn summary_fields(s: &SeriesSummary) -> [f64; 6] {
    [s.min, s.max, s.mean, s.std, s.skewness, s.kurtosis]
}

pub fn describe_csv(rows: &[(String, SeriesSummary)]) -> String {
    let mut head = vec!["series".to_string()];
    head.extend(DESCRIBE_COLUMNS.iter().map(|c| c.to_string()));
    let mut out = csv_line(&head);
    for (name, s) in rows {
        let mut f = vec![name.clone()];
        f.extend(summary_fields(s).iter().map(|v| v.to_string()));
        out.push_str(&csv_line(&f));
    }
    out
}

pub fn describe_markdown(rows: &[(String, SeriesSummary)]) -> String {
    let mut head = vec!["Series".to_string()];
    head.extend(DESCRIBE_COLUMNS.iter().map(|c| c.to_string()));
    let mut out = md_row(&head);
    out.push_str(&md_rule(head.len()));
    for (name, s) in rows {
        let mut f = vec![name.clone()];
        f.extend(summary_fields(s).iter().map(|v| format!("{v:.3}")));
        out.push_str(&md_row(&f));
    }
    out
}

/// Candidate versus benchmark for every series and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub candidate: ModelKind,
    pub benchmark: ModelKind,
    pub horizons: Vec<usize>,
    /// `(series, one result per horizon)` in panel order.
    pub rows: Vec<(String, Vec<ComparisonResult>)>,
}

fn errors_for(records: &[ForecastRecord], model: ModelKind, series: usize, h: usize) -> Result<ErrorSeries> {
    let mut sel: Vec<&ForecastRecord> = records
        .iter()
        .filter(|r| r.model == model && r.series_index == series && r.h == h && r.actual.is_some())
        .collect();
    if sel.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no scored forecasts for {model}, series {series}, h={h}"
        )));
    }
    sel.sort_by_key(|r| r.origin_row);
    let actuals: Vec<f64> = sel.iter().map(|r| r.actual.expect("filtered")).collect();
    let forecasts: Vec<f64> = sel.iter().map(|r| r.forecast).collect();
    ErrorSeries::from_forecasts(&actuals, &forecasts, h)
}

/// Builds the table from records with actuals; both models must cover the
/// same origins.
pub fn comparison_table(
    records: &[ForecastRecord],
    series_names: &[String],
    horizons: &[usize],
    candidate: ModelKind,
    benchmark: ModelKind,
    loss: Loss,
) -> Result<ComparisonTable> {
    let mut rows = Vec::with_capacity(series_names.len());
    for (s, name) in series_names.iter().enumerate() {
        let mut cells = Vec::with_capacity(horizons.len());
        for &h in horizons {
            let a = errors_for(records, candidate, s, h)?;
            let b = errors_for(records, benchmark, s, h)?;
            cells.push(compare(&a, &b, loss).map_err(|e| {
                Error::InvalidArgument(format!("series '{name}', h={h}: {e}"))
            })?);
        }
        rows.push((name.clone(), cells));
    }
    Ok(ComparisonTable { candidate, benchmark, horizons: horizons.to_vec(), rows })
}

fn opt(v: Option<f64>, digits: Option<usize>) -> String {
    match (v, digits) {
        (None, _) => "NA".to_string(),
        (Some(x), None) => x.to_string(),
        (Some(x), Some(d)) => format!("{x:.d$}"),
    }
}

fn horizon_header(first: &[&str], horizons: &[usize]) -> Vec<String> {
    let mut h: Vec<String> = first.iter().map(|s| s.to_string()).collect();
    h.extend(horizons.iter().map(|h| format!("h={h}")));
    h
}

type Stat = fn(&ComparisonResult) -> Option<f64>;

impl ComparisonTable {
    fn accuracy_rows(&self, digits: Option<usize>) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        for (name, cells) in &self.rows {
            let stats: [(&str, Stat); 3] = [
                ("rMAPE", |c| Some(c.rmape)),
                ("DM", |c| c.dm_stat),
                ("M-DM", |c| c.mdm_stat),
            ];
            for (i, (label, get)) in stats.iter().enumerate() {
                let mut row = vec![if i == 0 || digits.is_none() { name.clone() } else { String::new() }, label.to_string()];
                row.extend(cells.iter().map(|c| opt(get(c), digits)));
                out.push(row);
            }
        }
        out
    }

    /// rMAPE, DM and M-DM per series (rows) and horizon (columns).
    pub fn accuracy_csv(&self) -> String {
        let mut out = csv_line(&horizon_header(&["series", "statistic"], &self.horizons));
        for row in self.accuracy_rows(None) {
            out.push_str(&csv_line(&row));
        }
        out
    }

    pub fn accuracy_markdown(&self) -> String {
        let head = horizon_header(&["Series", "Statistic"], &self.horizons);
        let mut out = format!("Forecast accuracy: {} vs. {}\n\n", self.candidate, self.benchmark);
        out.push_str(&md_row(&head));
        out.push_str(&md_rule(head.len()));
        for row in self.accuracy_rows(Some(3)) {
            out.push_str(&md_row(&row));
        }
        let n = self.rows.first().and_then(|(_, c)| c.first()).map(|c| (c.n, c.student_t_critical));
        out.push_str(&format!("\nrMAPE below 1 favours {}. ", self.candidate));
        out.push_str(&format!("Negative DM means {} has the smaller losses. ", self.candidate));
        out.push_str(&format!("5% critical value shown for reference: {DISPLAY_CRITICAL_VALUE}"));
        if let Some((n, t)) = n {
            out.push_str(&format!(" (Student-t with {} df: {t:.3})", n.saturating_sub(1)));
        }
        out.push('\n');
        out
    }

    /// Percentage of periods where the candidate has the lower absolute error.
    pub fn plae_csv(&self) -> String {
        let mut out = csv_line(&horizon_header(&["series"], &self.horizons));
        for (name, cells) in &self.rows {
            let mut row = vec![name.clone()];
            row.extend(cells.iter().map(|c| c.plae_pct.to_string()));
            out.push_str(&csv_line(&row));
        }
        out
    }

    pub fn plae_markdown(&self) -> String {
        let head = horizon_header(&["Series"], &self.horizons);
        let mut out = format!("PLAE: {} with respect to {}\n\n", self.candidate, self.benchmark);
        out.push_str(&md_row(&head));
        out.push_str(&md_rule(head.len()));
        for (name, cells) in &self.rows {
            let mut row = vec![name.clone()];
            row.extend(cells.iter().map(|c| format!("{:.1}", c.plae_pct)));
            out.push_str(&md_row(&row));
        }
        out
    }
}
