//! Portfolio constructions driven by a covariance estimate: equal weight,
//! minimum variance, risk parity, maximum diversification, the cash
//! volatility overlay, and a basic mean-variance portfolio with an EWMA
//! return forecast.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::convex_kit::{
    solve_mean_variance, solve_nonneg_qp_eq, solve_qp_box_l1, solve_risk_parity,
    BoxL1Constraints, ConvexError,
};
use crate::estimators::{CovEstimate, VectorEwma};
use crate::market_data::ReturnsMatrix;

/// Trading days per year used for all annualization in the crate.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Error)]
pub enum PortfolioError {
    #[error("portfolio ex-ante volatility is zero; cannot scale to a target")]
    ZeroVolatility,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("return history is empty")]
    EmptyPrefix,
    #[error(transparent)]
    Solver(#[from] ConvexError),
}

/// Portfolio weights for one day. With `has_cash` the last entry is the
/// cash weight; entries always sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights {
    weights: DVector<f64>,
    has_cash: bool,
    day_index: usize,
}

impl PortfolioWeights {
    /// Wraps a weight vector, normalizing away solver-level rounding in
    /// the budget (at most ~1e-8) so the sum-to-one invariant is exact.
    pub fn new(weights: DVector<f64>, has_cash: bool, day_index: usize) -> Self {
        let sum = weights.sum();
        debug_assert!((sum - 1.0).abs() <= 1e-6, "weights sum to {sum}, expected 1");
        Self {
            weights: weights / sum,
            has_cash,
            day_index,
        }
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn has_cash(&self) -> bool {
        self.has_cash
    }

    pub fn day_index(&self) -> usize {
        self.day_index
    }

    /// Weights over the risky assets only.
    pub fn risky(&self) -> DVector<f64> {
        if self.has_cash {
            self.weights.rows(0, self.weights.len() - 1).into_owned()
        } else {
            self.weights.clone()
        }
    }

    /// Cash weight, zero when the portfolio holds no cash leg.
    pub fn cash(&self) -> f64 {
        if self.has_cash {
            self.weights[self.weights.len() - 1]
        } else {
            0.0
        }
    }

    /// Realized daily return of the portfolio against a return vector and
    /// the day's risk-free rate.
    pub fn daily_return(&self, r: &DVector<f64>, risk_free: f64) -> f64 {
        self.risky().dot(r) + self.cash() * risk_free
    }

    /// Ex-ante daily variance under a covariance estimate of the risky
    /// block (cash contributes nothing).
    pub fn exante_variance(&self, est: &CovEstimate) -> f64 {
        let w = self.risky();
        (est.matrix() * &w).dot(&w)
    }
}

/// The 1/n portfolio.
pub fn equal_weight(n: usize, day_index: usize) -> PortfolioWeights {
    PortfolioWeights::new(DVector::from_element(n, 1.0 / n as f64), false, day_index)
}

/// Minimum-variance portfolio over the budget/leverage/box set.
pub fn min_variance(
    est: &CovEstimate,
    cons: &BoxL1Constraints,
) -> Result<PortfolioWeights, PortfolioError> {
    let w = solve_qp_box_l1(est.matrix(), &DVector::zeros(est.dim()), cons)?;
    Ok(PortfolioWeights::new(w, false, est.day_index()))
}

/// Risk-parity portfolio: normalized solution of the log-barrier problem,
/// equalizing every asset's contribution to portfolio variance.
pub fn risk_parity(est: &CovEstimate) -> Result<PortfolioWeights, PortfolioError> {
    let x = solve_risk_parity(est.matrix())?;
    Ok(PortfolioWeights::new(&x / x.sum(), false, est.day_index()))
}

/// Maximum-diversification portfolio: normalized long-only minimizer of
/// `x' S x` with predicted volatilities pinned to one.
pub fn max_diversification(est: &CovEstimate) -> Result<PortfolioWeights, PortfolioError> {
    let x = solve_nonneg_qp_eq(est.matrix(), &est.volatilities())?;
    Ok(PortfolioWeights::new(&x / x.sum(), false, est.day_index()))
}

/// Diversification ratio of long-only weights under an estimate.
pub fn diversification_ratio(w: &DVector<f64>, est: &CovEstimate) -> f64 {
    est.volatilities().dot(w) / (est.matrix() * w).dot(w).sqrt()
}

/// Mixes a risky portfolio with cash so that its ex-ante daily volatility
/// equals `sigma_target_annual / sqrt(252)`. The cash weight may be
/// negative (leverage).
pub fn cash_overlay(
    w: &PortfolioWeights,
    est: &CovEstimate,
    sigma_target_annual: f64,
) -> Result<PortfolioWeights, PortfolioError> {
    let risky = w.risky();
    if risky.len() != est.dim() {
        return Err(PortfolioError::Dimension(format!(
            "{} weights vs {} assets",
            risky.len(),
            est.dim()
        )));
    }
    let variance = (est.matrix() * &risky).dot(&risky);
    if !(variance > 0.0) {
        return Err(PortfolioError::ZeroVolatility);
    }
    let daily_target = sigma_target_annual / TRADING_DAYS_PER_YEAR.sqrt();
    let theta = daily_target / variance.sqrt();
    let n = risky.len();
    let mut out = DVector::zeros(n + 1);
    for i in 0..n {
        out[i] = theta * risky[i];
    }
    out[n] = 1.0 - theta * risky.sum();
    Ok(PortfolioWeights::new(out, true, w.day_index()))
}

/// Normalized EWMA of past daily returns, the mean forecast feeding the
/// mean-variance portfolio.
pub fn ewma_mean(
    returns: &ReturnsMatrix,
    prefix_days: usize,
    half_life: f64,
) -> Result<DVector<f64>, PortfolioError> {
    if prefix_days == 0 || prefix_days > returns.days() {
        return Err(PortfolioError::EmptyPrefix);
    }
    let mut ewma = VectorEwma::with_half_life(returns.assets_count(), half_life)
        .map_err(|_| PortfolioError::Dimension("invalid half-life".into()))?;
    for t in 0..prefix_days {
        ewma.update(&returns.row(t));
    }
    Ok(ewma.estimate().expect("at least one update"))
}

/// Mean-variance portfolio over `n` risky assets plus cash. The forecast
/// `r_hat` has `n + 1` entries with the cash forecast last; the box and
/// leverage constraints cover the risky block only. The risk cap is the
/// annual volatility target converted to daily units, so no cash dilution
/// is applied afterwards.
pub fn mean_variance(
    est: &CovEstimate,
    r_hat: &DVector<f64>,
    cons: &BoxL1Constraints,
    sigma_target_annual: f64,
) -> Result<PortfolioWeights, PortfolioError> {
    let n = est.dim();
    if r_hat.len() != n + 1 {
        return Err(PortfolioError::Dimension(format!(
            "forecast has {} entries, expected {}",
            r_hat.len(),
            n + 1
        )));
    }
    if cons.dim() != n {
        return Err(PortfolioError::Dimension(format!(
            "constraints cover {} assets, expected {n}",
            cons.dim()
        )));
    }
    let mut sigma_aug = DMatrix::zeros(n + 1, n + 1);
    sigma_aug.view_mut((0, 0), (n, n)).copy_from(est.matrix());
    let mut w_min = DVector::from_element(n + 1, f64::NEG_INFINITY);
    let mut w_max = DVector::from_element(n + 1, f64::INFINITY);
    w_min.rows_mut(0, n).copy_from(&cons.w_min);
    w_max.rows_mut(0, n).copy_from(&cons.w_max);
    let cons_aug = BoxL1Constraints {
        leverage_max: cons.leverage_max,
        w_min,
        w_max,
        budget: cons.budget,
    };
    let mut subset = vec![true; n + 1];
    subset[n] = false;
    let daily_cap = sigma_target_annual / TRADING_DAYS_PER_YEAR.sqrt();
    let sol = solve_mean_variance(&sigma_aug, r_hat, daily_cap, &cons_aug, Some(&subset))?;
    Ok(PortfolioWeights::new(sol.weights, true, est.day_index()))
}
