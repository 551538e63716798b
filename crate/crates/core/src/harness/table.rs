//! Result tables and the verdicts computed from them.
//!
//! A verdict depends on nothing but the rows and the experiment's rule, so
//! it can be recomputed from a persisted `tables.csv`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

/// Label of the convergence series in every table that has one.
pub const SERIES: &str = "metric";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub eps: Option<f64>,
    pub metric: f64,
    pub std_error: f64,
    /// Lower acceptance bound, when the row is a bounded check.
    pub lower: Option<f64>,
    /// Upper acceptance bound, or the error budget of a series row.
    pub budget: Option<f64>,
}

impl Row {
    pub fn series(eps: f64, metric: f64, std_error: f64, budget: Option<f64>) -> Self {
        Self { label: SERIES.into(), eps: Some(eps), metric, std_error, lower: None, budget }
    }

    pub fn check(label: impl Into<String>, eps: Option<f64>, metric: f64, lower: Option<f64>, budget: f64) -> Self {
        Self { label: label.into(), eps, metric, std_error: 0.0, lower, budget: Some(budget) }
    }

    pub fn info(label: impl Into<String>, eps: Option<f64>, metric: f64, std_error: f64) -> Self {
        Self { label: label.into(), eps, metric, std_error, lower: None, budget: None }
    }

    fn within_bounds(&self) -> Option<bool> {
        let hi = self.budget?;
        let lo = self.lower.unwrap_or(f64::NEG_INFINITY);
        Some(self.metric >= lo && self.metric <= hi)
    }
}

/// How a table is judged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerdictRule {
    /// Require the series rows to decrease strictly over at least this many
    /// rows; `0` means the table has no series.
    pub min_series: usize,
    /// Require the last series row to stay below this multiple of its budget.
    pub final_factor: Option<f64>,
}

impl VerdictRule {
    pub const CHECKS: Self = Self { min_series: 0, final_factor: None };
    pub const MONOTONE: Self = Self { min_series: 3, final_factor: None };
    pub const CONVERGENCE: Self = Self { min_series: 3, final_factor: Some(3.0) };
}

impl std::fmt::Display for VerdictRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.min_series > 0 {
            write!(f, "series strictly decreasing over at least {} rows", self.min_series)?;
            if let Some(k) = self.final_factor {
                write!(f, ", final row below {k} x budget")?;
            }
            write!(f, "; ")?;
        }
        write!(f, "bounded rows within their bounds")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub monotone: Option<bool>,
    pub final_within_budget: Option<bool>,
    /// Every non-series row carrying a budget lies within its bounds.
    pub checks: Option<bool>,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub experiment: String,
    pub rows: Vec<Row>,
}

impl ConvergenceTable {
    pub fn new(experiment: impl Into<String>) -> Self {
        Self { experiment: experiment.into(), rows: vec![] }
    }

    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn series(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| r.label == SERIES)
    }
}

pub fn verdict(rule: &VerdictRule, rows: &[Row]) -> Verdict {
    let series: Vec<&Row> = rows.iter().filter(|r| r.label == SERIES).collect();
    let mut detail = vec![];
    let monotone = (rule.min_series > 0).then(|| {
        let enough = series.len() >= rule.min_series;
        let decreasing = series.windows(2).all(|w| w[1].metric < w[0].metric);
        if !enough {
            detail.push(format!("{} series rows, need {}", series.len(), rule.min_series));
        } else if !decreasing {
            detail.push("series not strictly decreasing".to_string());
        }
        enough && decreasing && series.iter().all(|r| r.metric.is_finite())
    });
    let final_within_budget = rule.final_factor.map(|f| {
        let ok = series.last().is_some_and(|r| r.budget.is_some_and(|b| r.metric < f * b));
        if !ok {
            detail.push(format!("final series row not below {f} x budget"));
        }
        ok
    });
    let bounded: Vec<(&Row, bool)> =
        rows.iter().filter(|r| r.label != SERIES).filter_map(|r| r.within_bounds().map(|ok| (r, ok))).collect();
    let checks = (!bounded.is_empty()).then(|| {
        for (r, ok) in &bounded {
            if !ok {
                detail.push(format!("{} out of bounds", r.label));
            }
        }
        bounded.iter().all(|(_, ok)| *ok)
    });
    let pass = [monotone, final_within_budget, checks].iter().all(|v| v.unwrap_or(true))
        && (monotone.is_some() || checks.is_some());
    Verdict { monotone, final_within_budget, checks, pass, detail: detail.join("; ") }
}

pub const CSV_HEADER: [&str; 7] = ["experiment", "label", "eps", "metric", "std_error", "lower", "budget"];

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e15)`.
fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// All tables as one RFC-4180 CSV, rows in table order. Floats use the
/// shortest decimal form that parses back to the same value.
pub fn write_csv<W: Write>(tables: &[ConvergenceTable], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for t in tables {
        for r in &t.rows {
            w.write_record([
                t.experiment.clone(),
                r.label.clone(),
                opt(r.eps),
                num(r.metric),
                num(r.std_error),
                opt(r.lower),
                opt(r.budget),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum TableParseError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: bad number {value:?} in column {column}")]
    Number { line: u64, column: &'static str, value: String },
    #[error("unexpected header {0:?}")]
    Header(Vec<String>),
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ConvergenceTable>, TableParseError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != CSV_HEADER {
        return Err(TableParseError::Header(header));
    }
    let mut order: Vec<String> = vec![];
    let mut by_id: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<Option<f64>, TableParseError> {
            let s = &rec[i];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| TableParseError::Number {
                line,
                column: CSV_HEADER[i],
                value: s.to_string(),
            })
        };
        let req = |i: usize| -> Result<f64, TableParseError> {
            num(i)?.ok_or(TableParseError::Number { line, column: CSV_HEADER[i], value: String::new() })
        };
        let row = Row {
            label: rec[1].to_string(),
            eps: num(2)?,
            metric: req(3)?,
            std_error: req(4)?,
            lower: num(5)?,
            budget: num(6)?,
        };
        let id = rec[0].to_string();
        if !by_id.contains_key(&id) {
            order.push(id.clone());
        }
        by_id.entry(id).or_default().push(row);
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let rows = by_id.remove(&id).unwrap_or_default();
            ConvergenceTable { experiment: id, rows }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[(f64, f64)]) -> Vec<Row> {
        let eps = [0.2, 0.1, 0.05, 0.025];
        values.iter().zip(eps).map(|(&(m, b), e)| Row::series(e, m, 0.0, Some(b))).collect()
    }

    #[test]
    fn convergence_needs_decrease_and_small_final_row() {
        let ok = series(&[(0.4, 0.01), (0.2, 0.01), (0.1, 0.01), (0.02, 0.01)]);
        assert!(verdict(&VerdictRule::CONVERGENCE, &ok).pass);
        let flat = series(&[(0.4, 0.01), (0.2, 0.01), (0.2, 0.01), (0.02, 0.01)]);
        let v = verdict(&VerdictRule::CONVERGENCE, &flat);
        assert_eq!((v.monotone, v.pass), (Some(false), false));
        let big = series(&[(0.4, 0.01), (0.2, 0.01), (0.1, 0.01), (0.05, 0.01)]);
        let v = verdict(&VerdictRule::CONVERGENCE, &big);
        assert_eq!((v.monotone, v.final_within_budget), (Some(true), Some(false)));
        assert!(verdict(&VerdictRule::MONOTONE, &big).pass);
        assert!(!verdict(&VerdictRule::MONOTONE, &big[..2]).pass);
    }

    #[test]
    fn checks_use_both_bounds() {
        let rows = vec![Row::check("slope", None, -0.4, Some(-0.65), 0.0), Row::info("note", None, 7.0, 0.0)];
        assert!(verdict(&VerdictRule::CHECKS, &rows).pass);
        let rows = vec![Row::check("slope", None, -0.7, Some(-0.65), 0.0)];
        assert!(!verdict(&VerdictRule::CHECKS, &rows).pass);
        // a table with nothing to judge does not pass
        assert!(!verdict(&VerdictRule::CHECKS, &[Row::info("note", None, 1.0, 0.0)]).pass);
    }

    #[test]
    fn csv_round_trip_preserves_every_bit() {
        let mut a = ConvergenceTable::new("a");
        a.push(Row::series(0.2, 0.1 + 0.2, 1e-17, Some(1.0 / 3.0)));
        a.push(Row::check("with,comma", None, -0.0, Some(-1e300), 5e-324));
        let mut b = ConvergenceTable::new("b");
        b.push(Row::info("x", Some(0.05), f64::MAX, 0.0));
        let mut buf = vec![];
        write_csv(&[a.clone(), b.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("experiment,label,eps,metric,std_error,lower,budget\r\n"));
        assert!(text.contains("\"with,comma\""));
        let back = read_csv(&buf[..]).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn bad_numbers_name_the_column() {
        let text = "experiment,label,eps,metric,std_error,lower,budget\nx,metric,0.1,oops,0,,\n";
        let err = read_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("metric"), "{err}");
    }
}
