//! Daily return panels: loading, validation, calendar partitioning, and
//! synthetic data generation.

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use std::fmt;
use std::path::Path;
use thiserror::Error;

use crate::linalg;

/// Errors raised while loading or constructing return panels.
#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("empty file: {0}")]
    EmptyFile(String),
    #[error("header must start with a `date` column, got {0:?}")]
    BadHeader(String),
    #[error("row {row}: cannot parse date {text:?}")]
    BadDate { row: usize, text: String },
    #[error("row {row}: date {date} does not increase over previous date {prev}")]
    NonMonotoneDates {
        row: usize,
        date: NaiveDate,
        prev: NaiveDate,
    },
    #[error("row {row}: duplicate date {date}")]
    DuplicateDate { row: usize, date: NaiveDate },
    #[error("row {row}, column {column}: non-numeric cell {text:?}")]
    NonNumericCell {
        row: usize,
        column: String,
        text: String,
    },
    #[error("row {row}, column {column}: missing or non-finite value")]
    MissingValue { row: usize, column: String },
    #[error("row {row}: expected {expected} fields, got {got}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("risk-free column {0:?} not found in header")]
    UnknownRfColumn(String),
    #[error("panel must have at least one asset and one day")]
    EmptyPanel,
    #[error("regime lengths sum to {got}, expected {expected}")]
    RegimeLengthMismatch { expected: usize, got: usize },
    #[error("regime {0} covariance is not positive definite")]
    RegimeNotPositiveDefinite(usize),
}

/// A dated panel of daily simple returns for `n` assets.
///
/// Returns are dimensionless fractions (0.01 = 1%). Rows are trading days
/// in strictly increasing date order. The optional `risk_free` series holds
/// the daily risk-free return aligned to the same dates. Immutable after
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsMatrix {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    values: DMatrix<f64>,
    risk_free: Option<Vec<f64>>,
}

impl ReturnsMatrix {
    /// Builds a panel from parts, checking the type invariants.
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        values: DMatrix<f64>,
        risk_free: Option<Vec<f64>>,
    ) -> Result<Self, MarketDataError> {
        if dates.is_empty() || assets.is_empty() {
            return Err(MarketDataError::EmptyPanel);
        }
        if values.nrows() != dates.len() || values.ncols() != assets.len() {
            return Err(MarketDataError::RaggedRow {
                row: 0,
                expected: dates.len() * assets.len(),
                got: values.len(),
            });
        }
        for (i, pair) in dates.windows(2).enumerate() {
            if pair[1] == pair[0] {
                return Err(MarketDataError::DuplicateDate {
                    row: i + 2,
                    date: pair[1],
                });
            }
            if pair[1] < pair[0] {
                return Err(MarketDataError::NonMonotoneDates {
                    row: i + 2,
                    date: pair[1],
                    prev: pair[0],
                });
            }
        }
        for r in 0..values.nrows() {
            for c in 0..values.ncols() {
                if !values[(r, c)].is_finite() {
                    return Err(MarketDataError::MissingValue {
                        row: r + 2,
                        column: assets[c].clone(),
                    });
                }
            }
        }
        if let Some(rf) = &risk_free {
            if rf.len() != dates.len() || rf.iter().any(|x| !x.is_finite()) {
                return Err(MarketDataError::MissingValue {
                    row: 0,
                    column: "risk_free".into(),
                });
            }
        }
        Ok(Self {
            dates,
            assets,
            values,
            risk_free,
        })
    }

    /// Number of trading days.
    pub fn days(&self) -> usize {
        self.dates.len()
    }

    /// Number of assets (excluding any risk-free series).
    pub fn assets_count(&self) -> usize {
        self.assets.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn asset_names(&self) -> &[String] {
        &self.assets
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// The return vector for day `t` (0-based).
    pub fn row(&self, t: usize) -> DVector<f64> {
        self.values.row(t).transpose()
    }

    pub fn risk_free(&self) -> Option<&[f64]> {
        self.risk_free.as_deref()
    }

    /// Risk-free return for day `t`, zero when no series is attached.
    pub fn risk_free_at(&self, t: usize) -> f64 {
        self.risk_free.as_ref().map_or(0.0, |rf| rf[t])
    }

    /// A new panel containing only the given day indices (in order).
    pub fn select_days(&self, idx: &[usize]) -> ReturnsMatrix {
        let dates = idx.iter().map(|&i| self.dates[i]).collect();
        let mut values = DMatrix::zeros(idx.len(), self.assets.len());
        for (r, &i) in idx.iter().enumerate() {
            values.row_mut(r).copy_from(&self.values.row(i));
        }
        let risk_free = self
            .risk_free
            .as_ref()
            .map(|rf| idx.iter().map(|&i| rf[i]).collect());
        ReturnsMatrix {
            dates,
            assets: self.assets.clone(),
            values,
            risk_free,
        }
    }

    /// Serializes the panel back to the CSV interchange format.
    ///
    /// Floats are written in shortest round-trip form, so a
    /// load-write-load cycle reproduces dates, assets, and values exactly.
    pub fn to_csv(&self, rf_name: Option<&str>) -> String {
        let mut out = String::from("date");
        for a in &self.assets {
            out.push(',');
            out.push_str(a);
        }
        if self.risk_free.is_some() {
            out.push(',');
            out.push_str(rf_name.unwrap_or("rf"));
        }
        out.push('\n');
        for t in 0..self.days() {
            out.push_str(&self.dates[t].format("%Y-%m-%d").to_string());
            for c in 0..self.assets.len() {
                out.push(',');
                out.push_str(&format!("{}", self.values[(t, c)]));
            }
            if let Some(rf) = &self.risk_free {
                out.push(',');
                out.push_str(&format!("{}", rf[t]));
            }
            out.push('\n');
        }
        out
    }
}

/// Calendar quarter identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct QuarterId {
    pub year: i32,
    pub quarter: u8,
}

impl QuarterId {
    pub fn of(date: NaiveDate) -> Self {
        QuarterId {
            year: date.year(),
            quarter: ((date.month() - 1) / 3 + 1) as u8,
        }
    }
}

impl fmt::Display for QuarterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

/// Partition of a panel's day indices into calendar quarters.
///
/// Ranges are contiguous, disjoint, and cover `0..T` in order.
#[derive(Debug, Clone)]
pub struct QuarterPartition {
    ranges: Vec<(QuarterId, std::ops::Range<usize>)>,
}

impl QuarterPartition {
    pub fn ranges(&self) -> &[(QuarterId, std::ops::Range<usize>)] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Quarter id for day index `t`.
    pub fn quarter_of(&self, t: usize) -> QuarterId {
        for (q, r) in &self.ranges {
            if r.contains(&t) {
                return *q;
            }
        }
        panic!("day index {t} outside partition");
    }
}

/// Groups the panel's days into calendar quarters.
pub fn quarter_partition(returns: &ReturnsMatrix) -> QuarterPartition {
    let dates = returns.dates();
    let mut ranges: Vec<(QuarterId, std::ops::Range<usize>)> = Vec::new();
    let mut start = 0usize;
    let mut current = QuarterId::of(dates[0]);
    for (i, d) in dates.iter().enumerate().skip(1) {
        let q = QuarterId::of(*d);
        if q != current {
            ranges.push((current, start..i));
            start = i;
            current = q;
        }
    }
    ranges.push((current, start..dates.len()));
    QuarterPartition { ranges }
}

/// Loads a return panel from the CSV interchange format.
///
/// The first column must be `date` with ISO-8601 dates in strictly
/// increasing order; every other column is one asset of simple daily
/// returns as decimal fractions. Rows with any missing or non-numeric
/// value are rejected with row/column context, never imputed. When
/// `rf_column` is given, that column is split out as the risk-free series
/// and removed from the asset list.
pub fn load_returns_csv(
    path: impl AsRef<Path>,
    rf_column: Option<&str>,
) -> Result<ReturnsMatrix, MarketDataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MarketDataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_returns_csv(&text, rf_column, &path.display().to_string())
}

/// CSV parsing backing [`load_returns_csv`]; exposed for in-memory tests.
pub fn parse_returns_csv(
    text: &str,
    rf_column: Option<&str>,
    origin: &str,
) -> Result<ReturnsMatrix, MarketDataError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| MarketDataError::EmptyFile(origin.to_string()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.is_empty() || !cols[0].eq_ignore_ascii_case("date") {
        return Err(MarketDataError::BadHeader(header.to_string()));
    }
    let names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    if names.is_empty() {
        return Err(MarketDataError::EmptyPanel);
    }
    let rf_idx = match rf_column {
        Some(name) => Some(
            names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| MarketDataError::UnknownRfColumn(name.to_string()))?,
        ),
        None => None,
    };

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines {
        let row = lineno + 1; // 1-based, matching editor line numbers
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() + 1 {
            return Err(MarketDataError::RaggedRow {
                row,
                expected: names.len() + 1,
                got: fields.len(),
            });
        }
        let date = NaiveDate::parse_from_str(fields[0], "%Y-%m-%d").map_err(|_| {
            MarketDataError::BadDate {
                row,
                text: fields[0].to_string(),
            }
        })?;
        if let Some(&prev) = dates.last() {
            if date == prev {
                return Err(MarketDataError::DuplicateDate { row, date });
            }
            if date < prev {
                return Err(MarketDataError::NonMonotoneDates { row, date, prev });
            }
        }
        let mut vals = Vec::with_capacity(names.len());
        for (c, field) in fields[1..].iter().enumerate() {
            if field.is_empty() {
                return Err(MarketDataError::MissingValue {
                    row,
                    column: names[c].clone(),
                });
            }
            let v: f64 = field.parse().map_err(|_| MarketDataError::NonNumericCell {
                row,
                column: names[c].clone(),
                text: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(MarketDataError::MissingValue {
                    row,
                    column: names[c].clone(),
                });
            }
            vals.push(v);
        }
        dates.push(date);
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(MarketDataError::EmptyPanel);
    }

    let (asset_names, risk_free): (Vec<String>, Option<Vec<f64>>) = match rf_idx {
        Some(k) => {
            let kept: Vec<String> = names
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, n)| n.clone())
                .collect();
            if kept.is_empty() {
                return Err(MarketDataError::EmptyPanel);
            }
            let rf = rows.iter().map(|r| r[k]).collect();
            (kept, Some(rf))
        }
        None => (names.clone(), None),
    };
    let n = asset_names.len();
    let mut values = DMatrix::zeros(rows.len(), n);
    for (r, vals) in rows.iter().enumerate() {
        let mut c_out = 0;
        for (c, v) in vals.iter().enumerate() {
            if Some(c) == rf_idx {
                continue;
            }
            values[(r, c_out)] = *v;
            c_out += 1;
        }
    }
    ReturnsMatrix::new(dates, asset_names, values, risk_free)
}

/// One segment of a regime-switching generator: `length` days drawn
/// i.i.d. from a zero-mean Gaussian with the given covariance.
#[derive(Debug, Clone)]
pub struct Regime {
    pub length: usize,
    pub covariance: DMatrix<f64>,
}

/// Generates a synthetic panel of `total_days` zero-mean Gaussian returns
/// whose covariance switches between the given regimes.
///
/// Deterministic for a fixed seed. Dates are consecutive calendar days
/// starting 2000-01-03. Regime lengths must sum to `total_days` and each
/// regime covariance must be positive definite.
pub fn synth_regime_returns(
    n: usize,
    total_days: usize,
    regimes: &[Regime],
    seed: u64,
) -> Result<ReturnsMatrix, MarketDataError> {
    let sum: usize = regimes.iter().map(|r| r.length).sum();
    if sum != total_days {
        return Err(MarketDataError::RegimeLengthMismatch {
            expected: total_days,
            got: sum,
        });
    }
    let mut chols = Vec::with_capacity(regimes.len());
    for (k, regime) in regimes.iter().enumerate() {
        if regime.covariance.nrows() != n || regime.covariance.ncols() != n {
            return Err(MarketDataError::RegimeNotPositiveDefinite(k));
        }
        let l = linalg::chol_lower(&regime.covariance)
            .ok_or(MarketDataError::RegimeNotPositiveDefinite(k))?;
        chols.push(l);
    }

    let mut rng = StdRng::seed_from_u64(seed);
    let mut values = DMatrix::zeros(total_days, n);
    let mut t = 0usize;
    for (k, regime) in regimes.iter().enumerate() {
        let l = &chols[k];
        for _ in 0..regime.length {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let r = l * z;
            values.row_mut(t).copy_from(&r.transpose());
            t += 1;
        }
    }

    let start = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
    let dates: Vec<NaiveDate> = (0..total_days)
        .map(|i| start + chrono::Duration::days(i as i64))
        .collect();
    let assets = (0..n).map(|i| format!("A{i:02}")).collect();
    ReturnsMatrix::new(dates, assets, values, None)
}
