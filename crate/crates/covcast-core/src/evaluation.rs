//! Statistical and portfolio evaluation of covariance predictors:
//! Gaussian log-likelihood in precision-factor form, the per-window
//! empirical optimum, quarterly log-likelihood regret, regret
//! distributions, and portfolio performance metrics.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::combiner::{precision_cholesky, PrecisionFactor};
use crate::estimators::{empirical_second_moment, ridge_if_singular, CovEstimate};
use crate::linalg;
use crate::market_data::{QuarterId, QuarterPartition, ReturnsMatrix};
use crate::portfolios::{PortfolioWeights, TRADING_DAYS_PER_YEAR};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("series are misaligned: {0}")]
    Misaligned(String),
    #[error("quarter {0} has no evaluated days")]
    EmptyQuarter(QuarterId),
    #[error(transparent)]
    Combiner(#[from] crate::combiner::CombinerError),
}

/// Gaussian log-likelihood of a return under a covariance prediction,
/// evaluated through the Cholesky factor of the precision matrix:
/// `-(n/2) log(2 pi) + sum_i log L_ii - (1/2) ||L' r||^2`, in nats.
pub fn log_likelihood(factor: &PrecisionFactor, r: &DVector<f64>) -> Result<f64, EvaluationError> {
    let n = factor.dim();
    if r.len() != n {
        return Err(EvaluationError::Misaligned(format!(
            "return length {} vs factor dimension {n}",
            r.len()
        )));
    }
    let l = factor.matrix();
    let mut logdiag = 0.0;
    for i in 0..n {
        logdiag += l[(i, i)].ln();
    }
    let lt_r = l.transpose() * r;
    Ok(-(n as f64) * 0.5 * (2.0 * std::f64::consts::PI).ln() + logdiag
        - 0.5 * lt_r.norm_squared())
}

/// The best average log-likelihood any constant covariance can achieve on
/// the window, `(1/2)(-n(log(2 pi) + 1) - log det S_emp)` with `S_emp`
/// the window's empirical second moment (ridged only if singular).
/// Returned in nats per day.
pub fn empirical_optimum_loglik(
    returns: &ReturnsMatrix,
    range: std::ops::Range<usize>,
) -> Result<f64, EvaluationError> {
    if range.is_empty() || range.end > returns.days() {
        return Err(EvaluationError::Misaligned(format!(
            "window {range:?} outside panel of {} days",
            returns.days()
        )));
    }
    let n = returns.assets_count() as f64;
    let (emp, _) = ridge_if_singular(empirical_second_moment(returns, range));
    let chol = linalg::chol_lower(&emp).expect("ridged second moment factors");
    let logdet = linalg::logdet_from_chol(&chol);
    Ok(0.5 * (-n * ((2.0 * std::f64::consts::PI).ln() + 1.0) - logdet))
}

/// Summary statistics of a quarterly regret series, in nats per day.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RegretSummary {
    pub average: f64,
    pub std_dev: f64,
    pub max: f64,
}

/// Per-quarter average log-likelihood regret with summary statistics.
#[derive(Debug, Clone, Serialize)]
pub struct RegretSeries {
    pub per_quarter: Vec<(QuarterId, f64)>,
    pub summary: RegretSummary,
}

impl RegretSeries {
    pub fn from_values(per_quarter: Vec<(QuarterId, f64)>) -> Self {
        let summary = Self::summarize(&per_quarter);
        Self {
            per_quarter,
            summary,
        }
    }

    /// Summary recomputed from the raw values (population standard
    /// deviation); the stored summary always agrees with this.
    pub fn summarize(per_quarter: &[(QuarterId, f64)]) -> RegretSummary {
        let n = per_quarter.len() as f64;
        let avg = per_quarter.iter().map(|(_, v)| v).sum::<f64>() / n;
        let var = per_quarter
            .iter()
            .map(|(_, v)| (v - avg) * (v - avg))
            .sum::<f64>()
            / n;
        let max = per_quarter
            .iter()
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        RegretSummary {
            average: avg,
            std_dev: var.sqrt(),
            max,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.per_quarter.iter().map(|(_, v)| *v).collect()
    }
}

/// Per-quarter regret of a predictor from its per-day log-likelihoods:
/// the quarter's empirical optimum minus the predictor's quarter average.
///
/// Quarters whose empirical second moment is singular (possible only for
/// a partial quarter shorter than the asset count) are dropped: no
/// constant covariance attains a finite optimum there, so the regret is
/// undefined. The drop applies to every predictor identically.
pub(crate) fn quarterly_regret_from_loglik(
    loglik: &[f64],
    returns: &ReturnsMatrix,
    partition: &QuarterPartition,
) -> Result<RegretSeries, EvaluationError> {
    if loglik.len() != returns.days() {
        return Err(EvaluationError::Misaligned(format!(
            "{} log-likelihoods vs {} days",
            loglik.len(),
            returns.days()
        )));
    }
    let n = returns.assets_count() as f64;
    let mut per_quarter = Vec::with_capacity(partition.len());
    for (q, range) in partition.ranges() {
        if range.is_empty() {
            return Err(EvaluationError::EmptyQuarter(*q));
        }
        let emp = empirical_second_moment(returns, range.clone());
        let chol = match linalg::chol_lower(&emp) {
            Some(c) => c,
            None => {
                eprintln!(
                    "note: dropping {q} from the regret series: {} days cannot identify a \
                     {}-asset covariance",
                    range.len(),
                    returns.assets_count()
                );
                continue;
            }
        };
        let optimum = 0.5
            * (-n * ((2.0 * std::f64::consts::PI).ln() + 1.0) - linalg::logdet_from_chol(&chol));
        let mean_ll = loglik[range.clone()].iter().sum::<f64>() / range.len() as f64;
        per_quarter.push((*q, optimum - mean_ll));
    }
    if per_quarter.is_empty() {
        return Err(EvaluationError::Misaligned(
            "no quarter admits a positive definite empirical covariance".into(),
        ));
    }
    Ok(RegretSeries::from_values(per_quarter))
}

/// Quarterly log-likelihood regret of a per-day covariance series against
/// the per-quarter empirical optimum. Estimates must cover every day of
/// the panel (the caller restricts both to the evaluation days first).
pub fn quarterly_regret(
    estimates: &[CovEstimate],
    returns: &ReturnsMatrix,
    partition: &QuarterPartition,
) -> Result<RegretSeries, EvaluationError> {
    if estimates.len() != returns.days() {
        return Err(EvaluationError::Misaligned(format!(
            "{} estimates vs {} days",
            estimates.len(),
            returns.days()
        )));
    }
    let mut loglik = Vec::with_capacity(estimates.len());
    for (t, est) in estimates.iter().enumerate() {
        let factor = precision_cholesky(est)?;
        loglik.push(log_likelihood(&factor, &returns.row(t))?);
    }
    quarterly_regret_from_loglik(&loglik, returns, partition)
}

/// Right-continuous empirical CDF of the quarterly regret values, as
/// `(value, cumulative fraction)` points sorted by value.
pub fn regret_cdf(series: &RegretSeries) -> Vec<(f64, f64)> {
    let mut values = series.values();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total = values.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, v) in values.iter().enumerate() {
        let frac = (i + 1) as f64 / total;
        match points.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => points.push((*v, frac)),
        }
    }
    points
}

/// Annualized performance of one portfolio under one predictor.
///
/// `max_drawdown` follows the trough-relative form
/// `max_{t1<t2} V_t1/V_t2 - 1`; `max_drawdown_peak` is the conventional
/// peak-relative decline. `realized_vol` uses the uncentered second
/// moment of the daily portfolio returns, `ann_risk` the centered one.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PortfolioMetrics {
    pub ann_return: f64,
    pub ann_risk: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
    pub max_drawdown_peak: f64,
    pub exante_vol: f64,
    pub realized_vol: f64,
}

/// Metrics from the per-day scalar series; the panel-level entry point
/// [`portfolio_metrics`] reduces to this.
pub(crate) fn metrics_from_series(
    daily_returns: &[f64],
    exante_vars: &[f64],
    risk_free: &[f64],
) -> PortfolioMetrics {
    let t = daily_returns.len() as f64;
    let mean = daily_returns.iter().sum::<f64>() / t;
    let var = daily_returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / t;
    let second = daily_returns.iter().map(|r| r * r).sum::<f64>() / t;
    let mean_excess = daily_returns
        .iter()
        .zip(risk_free.iter())
        .map(|(r, rf)| r - rf)
        .sum::<f64>()
        / t;
    let std = var.sqrt();
    let sharpe = if mean_excess == 0.0 || std == 0.0 {
        0.0
    } else {
        mean_excess / std * TRADING_DAYS_PER_YEAR.sqrt()
    };

    // Compounded value path, starting from one.
    let mut value = 1.0f64;
    let mut running_max = 1.0f64;
    let mut dd_trough = f64::NEG_INFINITY;
    let mut dd_peak = 0.0f64;
    for r in daily_returns {
        value *= 1.0 + r;
        dd_trough = dd_trough.max(running_max / value - 1.0);
        dd_peak = dd_peak.max((running_max - value) / running_max);
        running_max = running_max.max(value);
    }

    let exante = (exante_vars.iter().sum::<f64>() / t).sqrt();
    PortfolioMetrics {
        ann_return: mean * TRADING_DAYS_PER_YEAR,
        ann_risk: std * TRADING_DAYS_PER_YEAR.sqrt(),
        sharpe,
        max_drawdown: dd_trough,
        max_drawdown_peak: dd_peak,
        exante_vol: exante * TRADING_DAYS_PER_YEAR.sqrt(),
        realized_vol: second.sqrt() * TRADING_DAYS_PER_YEAR.sqrt(),
    }
}

/// Performance metrics of a daily weight series against realized returns
/// and the covariance estimates that produced the weights. Day `t`'s
/// weights are applied to day `t`'s return.
pub fn portfolio_metrics(
    weights: &[PortfolioWeights],
    estimates: &[CovEstimate],
    returns: &ReturnsMatrix,
) -> Result<PortfolioMetrics, EvaluationError> {
    if weights.len() != returns.days() || estimates.len() != returns.days() {
        return Err(EvaluationError::Misaligned(format!(
            "{} weights, {} estimates, {} days",
            weights.len(),
            estimates.len(),
            returns.days()
        )));
    }
    if weights.is_empty() {
        return Err(EvaluationError::Misaligned("empty series".into()));
    }
    let mut daily = Vec::with_capacity(weights.len());
    let mut exante = Vec::with_capacity(weights.len());
    let mut rf = Vec::with_capacity(weights.len());
    for t in 0..weights.len() {
        let r = returns.row(t);
        daily.push(weights[t].daily_return(&r, returns.risk_free_at(t)));
        exante.push(weights[t].exante_variance(&estimates[t]));
        rf.push(returns.risk_free_at(t));
    }
    Ok(metrics_from_series(&daily, &exante, &rf))
}
