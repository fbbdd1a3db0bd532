//! Streaming one-step-ahead covariance predictors.
//!
//! Each predictor consumes one return vector at a time and emits the
//! prediction for the *next* day, so the estimate for day `t` never sees
//! the day-`t` return. Predictors report `None` while they cannot yet
//! produce a positive definite matrix; availability is a first-class
//! outcome, not an error.

use nalgebra::{DMatrix, DVector};
use std::collections::VecDeque;
use thiserror::Error;

use crate::linalg;
use crate::market_data::{QuarterPartition, ReturnsMatrix};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("return vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("half-life must be >= 1, got {0}")]
    InvalidHalfLife(f64),
    #[error("forgetting factor must lie in (0,1), got {0}")]
    InvalidBeta(f64),
    #[error("window memory must be >= 1")]
    InvalidMemory,
    #[error("diagonal inflation fraction must be nonnegative, got {0}")]
    NegativeFraction(f64),
}

/// Converts a half-life in days to the forgetting factor with
/// `beta^half_life = 1/2`.
pub fn beta_from_half_life(half_life: f64) -> Result<f64, EstimatorError> {
    if !(half_life >= 1.0) || !half_life.is_finite() {
        return Err(EstimatorError::InvalidHalfLife(half_life));
    }
    Ok(0.5f64.powf(1.0 / half_life))
}

/// Half-life implied by a forgetting factor.
pub fn half_life_from_beta(beta: f64) -> f64 {
    -(2.0f64.ln()) / beta.ln()
}

/// One day's predicted covariance matrix, in units of squared daily
/// return. `day_index` is the 0-based index of the day the estimate
/// predicts, which equals the number of returns consumed to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimate {
    matrix: DMatrix<f64>,
    day_index: usize,
}

impl CovEstimate {
    /// Wraps a symmetric positive definite matrix. Callers inside this
    /// crate construct symmetric matrices; the Cholesky gate happens in
    /// the predictor emit paths.
    pub fn new(matrix: DMatrix<f64>, day_index: usize) -> Self {
        Self { matrix, day_index }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn day_index(&self) -> usize {
        self.day_index
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Predicted per-asset volatilities, the square roots of the diagonal.
    pub fn volatilities(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.matrix[(i, i)].sqrt())
    }

    /// Predicted correlation matrix view.
    pub fn correlations(&self) -> DMatrix<f64> {
        let s = self.volatilities();
        let n = self.dim();
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                c[(i, j)] = self.matrix[(i, j)] / (s[i] * s[j]);
            }
        }
        c
    }
}

/// Checks the emit gate: symmetric (by construction) and Cholesky-factorable.
fn emit_if_pd(matrix: DMatrix<f64>, day_index: usize) -> Option<CovEstimate> {
    linalg::chol_lower(&matrix)?;
    Some(CovEstimate::new(matrix, day_index))
}

// ---------------------------------------------------------------------------
// EWMA accumulators
// ---------------------------------------------------------------------------

/// Normalized exponentially weighted accumulation of outer products.
///
/// After `m` updates the read-out is `(1-beta)/(1-beta^m)` times the
/// beta-weighted sum, i.e. the exponentially weighted second moment with
/// weights summing to one.
#[derive(Debug, Clone)]
pub struct EwmaState {
    beta: f64,
    count: u32,
    sum: DMatrix<f64>,
}

impl EwmaState {
    pub fn new(n: usize, beta: f64) -> Result<Self, EstimatorError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(EstimatorError::InvalidBeta(beta));
        }
        Ok(Self {
            beta,
            count: 0,
            sum: DMatrix::zeros(n, n),
        })
    }

    pub fn with_half_life(n: usize, half_life: f64) -> Result<Self, EstimatorError> {
        Self::new(n, beta_from_half_life(half_life)?)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Number of returns consumed so far.
    pub fn count(&self) -> usize {
        self.count as usize
    }

    fn dim(&self) -> usize {
        self.sum.nrows()
    }

    fn normalizer(&self) -> f64 {
        (1.0 - self.beta) / (1.0 - self.beta.powi(self.count as i32))
    }

    fn update(&mut self, r: &DVector<f64>) {
        let n = self.dim();
        self.sum *= self.beta;
        for i in 0..n {
            for j in 0..=i {
                let v = r[i] * r[j];
                self.sum[(i, j)] += v;
                if i != j {
                    self.sum[(j, i)] += v;
                }
            }
        }
        self.count += 1;
    }

    /// The normalized weighted second moment, `None` before any update.
    fn weighted_moment(&self) -> Option<DMatrix<f64>> {
        if self.count == 0 {
            return None;
        }
        Some(&self.sum * self.normalizer())
    }

    /// Consumes one return and emits the covariance prediction for the
    /// next day (available once the weighted moment is positive definite).
    pub fn step(&mut self, r: &DVector<f64>) -> Result<Option<CovEstimate>, EstimatorError> {
        if r.len() != self.dim() {
            return Err(EstimatorError::DimensionMismatch {
                expected: self.dim(),
                got: r.len(),
            });
        }
        self.update(r);
        Ok(self
            .weighted_moment()
            .and_then(|m| emit_if_pd(m, self.count())))
    }
}

/// Per-asset exponentially weighted mean of a vector stream, used for the
/// squared-return volatility estimates and the mean-return forecast.
#[derive(Debug, Clone)]
pub struct VectorEwma {
    beta: f64,
    count: u32,
    sum: DVector<f64>,
}

impl VectorEwma {
    pub fn new(n: usize, beta: f64) -> Result<Self, EstimatorError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(EstimatorError::InvalidBeta(beta));
        }
        Ok(Self {
            beta,
            count: 0,
            sum: DVector::zeros(n),
        })
    }

    pub fn with_half_life(n: usize, half_life: f64) -> Result<Self, EstimatorError> {
        Self::new(n, beta_from_half_life(half_life)?)
    }

    pub fn update(&mut self, x: &DVector<f64>) {
        self.sum *= self.beta;
        self.sum += x;
        self.count += 1;
    }

    /// Normalized weighted mean, `None` before any update.
    pub fn estimate(&self) -> Option<DVector<f64>> {
        if self.count == 0 {
            return None;
        }
        let alpha = (1.0 - self.beta) / (1.0 - self.beta.powi(self.count as i32));
        Some(&self.sum * alpha)
    }
}

// ---------------------------------------------------------------------------
// Rolling window
// ---------------------------------------------------------------------------

/// Rolling-window second-moment predictor: the average of the most recent
/// `memory` outer products (fewer while warming up).
#[derive(Debug, Clone)]
pub struct RollingWindowState {
    memory: usize,
    window: VecDeque<DVector<f64>>,
    sum: DMatrix<f64>,
    count: usize,
}

impl RollingWindowState {
    pub fn new(n: usize, memory: usize) -> Result<Self, EstimatorError> {
        if memory < 1 {
            return Err(EstimatorError::InvalidMemory);
        }
        Ok(Self {
            memory,
            window: VecDeque::with_capacity(memory + 1),
            sum: DMatrix::zeros(n, n),
            count: 0,
        })
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn dim(&self) -> usize {
        self.sum.nrows()
    }

    fn rank_outer(sum: &mut DMatrix<f64>, r: &DVector<f64>, sign: f64) {
        let n = sum.nrows();
        for i in 0..n {
            for j in 0..=i {
                let v = sign * r[i] * r[j];
                sum[(i, j)] += v;
                if i != j {
                    sum[(j, i)] += v;
                }
            }
        }
    }

    /// Consumes one return and emits the prediction for the next day.
    /// Unavailable (not an error) while the windowed average is singular.
    pub fn step(&mut self, r: &DVector<f64>) -> Result<Option<CovEstimate>, EstimatorError> {
        if r.len() != self.dim() {
            return Err(EstimatorError::DimensionMismatch {
                expected: self.dim(),
                got: r.len(),
            });
        }
        Self::rank_outer(&mut self.sum, r, 1.0);
        self.window.push_back(r.clone());
        if self.window.len() > self.memory {
            let old = self.window.pop_front().unwrap();
            Self::rank_outer(&mut self.sum, &old, -1.0);
        }
        self.count += 1;
        let denom = self.window.len() as f64;
        let est = &self.sum / denom;
        Ok(emit_if_pd(est, self.count))
    }
}

// ---------------------------------------------------------------------------
// Iterated EWMA
// ---------------------------------------------------------------------------

/// Iterated EWMA predictor: per-asset volatility EWMAs on squared returns
/// (half-life `h_vol`), then a matrix EWMA on the marginally standardized
/// returns (half-life `h_cor`), rescaled to a correlation matrix. The
/// prediction is `D R D`.
#[derive(Debug, Clone)]
pub struct IewmaState {
    vol: VectorEwma,
    cor: EwmaState,
    h_vol: f64,
    h_cor: f64,
    count: usize,
}

impl IewmaState {
    pub fn new(n: usize, h_vol: f64, h_cor: f64) -> Result<Self, EstimatorError> {
        if h_vol > h_cor {
            eprintln!(
                "warning: volatility half-life {h_vol} exceeds correlation half-life {h_cor}"
            );
        }
        Ok(Self {
            vol: VectorEwma::with_half_life(n, h_vol)?,
            cor: EwmaState::with_half_life(n, h_cor)?,
            h_vol,
            h_cor,
            count: 0,
        })
    }

    pub fn half_lives(&self) -> (f64, f64) {
        (self.h_vol, self.h_cor)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn dim(&self) -> usize {
        self.vol.sum.len()
    }

    /// Consumes one return and emits the prediction for the next day.
    ///
    /// The incoming return is standardized with the volatility estimate
    /// built from strictly earlier returns; the correlation stream only
    /// advances on days where every volatility estimate is positive.
    /// The emitted correlation matrix has unit diagonal exactly.
    pub fn step(&mut self, r: &DVector<f64>) -> Result<Option<CovEstimate>, EstimatorError> {
        let n = self.dim();
        if r.len() != n {
            return Err(EstimatorError::DimensionMismatch {
                expected: n,
                got: r.len(),
            });
        }
        if let Some(v) = self.vol.estimate() {
            if v.iter().all(|&x| x > 0.0) {
                let std = DVector::from_fn(n, |i, _| r[i] / v[i].sqrt());
                self.cor.update(&std);
            }
        }
        self.vol.update(&r.map(|x| x * x));
        self.count += 1;

        let v = match self.vol.estimate() {
            Some(v) => v,
            None => return Ok(None),
        };
        if !v.iter().all(|&x| x > 0.0) {
            return Ok(None);
        }
        let raw = match self.cor.weighted_moment() {
            Some(raw) => raw,
            None => return Ok(None),
        };
        let mut cor = raw.clone();
        let scale = DVector::from_fn(n, |i, _| raw[(i, i)].sqrt());
        if !scale.iter().all(|&x| x > 0.0) {
            return Ok(None);
        }
        for i in 0..n {
            for j in 0..n {
                cor[(i, j)] /= scale[i] * scale[j];
            }
            cor[(i, i)] = 1.0;
        }
        let d = v.map(f64::sqrt);
        let mut sigma = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let val = d[i] * cor[(i, j)] * d[j];
                sigma[(i, j)] = val;
                sigma[(j, i)] = val;
            }
        }
        Ok(emit_if_pd(sigma, self.count))
    }

    /// The current correlation-matrix prediction (unit diagonal), if the
    /// standardized stream has accumulated any weight.
    pub fn correlation(&self) -> Option<DMatrix<f64>> {
        let raw = self.cor.weighted_moment()?;
        let n = raw.nrows();
        let scale = DVector::from_fn(n, |i, _| raw[(i, i)].sqrt());
        if !scale.iter().all(|&x| x > 0.0) {
            return None;
        }
        let mut cor = raw;
        for i in 0..n {
            for j in 0..n {
                cor[(i, j)] /= scale[i] * scale[j];
            }
            cor[(i, i)] = 1.0;
        }
        Some(cor)
    }
}

// ---------------------------------------------------------------------------
// Prescient oracle and diagonal inflation
// ---------------------------------------------------------------------------

/// Relative ridge applied when a quarter's empirical second moment is
/// singular (possible when the quarter is barely longer than `n`).
const PRESCIENT_RIDGE: f64 = 1e-8;

/// Empirical second moment of a block of rows, shared by the prescient
/// predictor and the per-quarter log-likelihood optimum.
pub(crate) fn empirical_second_moment(
    returns: &ReturnsMatrix,
    range: std::ops::Range<usize>,
) -> DMatrix<f64> {
    let n = returns.assets_count();
    let len = range.len();
    let mut sum = DMatrix::zeros(n, n);
    for t in range {
        let r = returns.row(t);
        for i in 0..n {
            for j in 0..=i {
                let v = r[i] * r[j];
                sum[(i, j)] += v;
                if i != j {
                    sum[(j, i)] += v;
                }
            }
        }
    }
    sum / len as f64
}

/// Adds `PRESCIENT_RIDGE * (trace/n) * I` if the matrix fails to factor.
/// Returns the (possibly ridged) matrix and whether the ridge was applied.
pub(crate) fn ridge_if_singular(mut m: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if linalg::chol_lower(&m).is_some() {
        return (m, false);
    }
    let n = m.nrows();
    let ridge = PRESCIENT_RIDGE * m.trace() / n as f64;
    for i in 0..n {
        m[(i, i)] += ridge;
    }
    (m, true)
}

/// The non-implementable oracle: every day's estimate is the empirical
/// second moment of the calendar quarter the day falls in. Used as a
/// performance bound; it attains zero quarterly log-likelihood regret.
pub fn prescient_covariances(
    returns: &ReturnsMatrix,
    partition: &QuarterPartition,
) -> Vec<CovEstimate> {
    let mut out = Vec::with_capacity(returns.days());
    for (q, range) in partition.ranges() {
        let (sigma, ridged) = ridge_if_singular(empirical_second_moment(returns, range.clone()));
        if ridged {
            eprintln!("note: prescient covariance for {q} required a diagonal ridge");
        }
        for t in range.clone() {
            out.push(CovEstimate::new(sigma.clone(), t));
        }
    }
    out
}

/// Multiplies the diagonal entries by `1 + fraction`, leaving
/// off-diagonals unchanged. Positive definiteness is preserved.
pub fn inflate_diagonal(
    est: &CovEstimate,
    fraction: f64,
) -> Result<CovEstimate, EstimatorError> {
    if !(fraction >= 0.0) {
        return Err(EstimatorError::NegativeFraction(fraction));
    }
    let mut m = est.matrix().clone();
    for i in 0..m.nrows() {
        m[(i, i)] *= 1.0 + fraction;
    }
    Ok(CovEstimate::new(m, est.day_index()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{quarter_partition, parse_returns_csv};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    /// Direct-summation oracle for the rolling-window estimate.
    fn rw_direct(history: &[DVector<f64>], memory: usize) -> DMatrix<f64> {
        let m = history.len().min(memory);
        let n = history[0].len();
        let mut sum = DMatrix::zeros(n, n);
        for r in &history[history.len() - m..] {
            sum += r * r.transpose();
        }
        sum / m as f64
    }

    /// Direct-summation oracle for the EWMA estimate.
    fn ewma_direct(history: &[DVector<f64>], beta: f64) -> DMatrix<f64> {
        let m = history.len();
        let n = history[0].len();
        let mut sum = DMatrix::zeros(n, n);
        for (tau, r) in history.iter().enumerate() {
            sum += beta.powi((m - 1 - tau) as i32) * (r * r.transpose());
        }
        sum * (1.0 - beta) / (1.0 - beta.powi(m as i32))
    }

    #[test]
    fn rolling_window_scalar_examples() {
        let mut rw = RollingWindowState::new(1, 2).unwrap();
        let e1 = rw.step(&v(&[1.0])).unwrap().unwrap();
        assert_relative_eq!(e1.matrix()[(0, 0)], 1.0);
        let e2 = rw.step(&v(&[3.0])).unwrap().unwrap();
        assert_relative_eq!(e2.matrix()[(0, 0)], 5.0);
        let e3 = rw.step(&v(&[2.0])).unwrap().unwrap();
        assert_relative_eq!(e3.matrix()[(0, 0)], 6.5);
    }

    #[test]
    fn ewma_scalar_examples() {
        let mut ew = EwmaState::new(1, 0.5).unwrap();
        let e1 = ew.step(&v(&[1.0])).unwrap().unwrap();
        assert_relative_eq!(e1.matrix()[(0, 0)], 1.0); // alpha_2 = 1
        let e2 = ew.step(&v(&[3.0])).unwrap().unwrap();
        assert_relative_eq!(e2.matrix()[(0, 0)], 19.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn half_life_one_is_beta_half() {
        assert_eq!(beta_from_half_life(1.0).unwrap(), 0.5);
        let beta = beta_from_half_life(21.0).unwrap();
        assert_relative_eq!(beta.powf(21.0), 0.5, epsilon = 1e-14);
        assert_relative_eq!(half_life_from_beta(beta), 21.0, epsilon = 1e-10);
    }

    #[test]
    fn estimates_unavailable_before_full_rank() {
        let mut rw = RollingWindowState::new(3, 10).unwrap();
        assert!(rw.step(&v(&[1.0, 0.5, -0.2])).unwrap().is_none());
        assert!(rw.step(&v(&[0.3, -1.0, 0.8])).unwrap().is_none());
        // Third linearly independent return makes the average PD.
        assert!(rw.step(&v(&[0.2, 0.4, 1.5])).unwrap().is_some());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut ew = EwmaState::new(2, 0.9).unwrap();
        assert!(matches!(
            ew.step(&v(&[1.0])),
            Err(EstimatorError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn recursions_match_direct_sums() {
        // Acceptance-style equivalence on random streams, tighter scale here.
        let mut rng = StdRng::seed_from_u64(11);
        for trial in 0..20 {
            let n = 1 + (trial % 5);
            let t_max = 30 + (trial * 7) % 120;
            let memory = 1 + (trial % 9);
            let beta = 0.55 + 0.4 * (trial as f64 / 20.0);
            let mut rw = RollingWindowState::new(n, memory).unwrap();
            let mut ew = EwmaState::new(n, beta).unwrap();
            let mut history: Vec<DVector<f64>> = Vec::new();
            for _ in 0..t_max {
                let r = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                history.push(r.clone());
                let rw_est = rw.step(&r).unwrap();
                let ew_est = ew.step(&r).unwrap();
                let rw_oracle = rw_direct(&history, memory);
                let ew_oracle = ewma_direct(&history, beta);
                if let Some(e) = rw_est {
                    assert_relative_eq!(e.matrix(), &rw_oracle, epsilon = 1e-10);
                }
                if let Some(e) = ew_est {
                    assert_relative_eq!(e.matrix(), &ew_oracle, epsilon = 1e-10);
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn ewma_recursion_equals_direct_sum(
            stream in proptest::collection::vec(
                proptest::collection::vec(-2.0f64..2.0, 2),
                1..60,
            ),
            beta in 0.5f64..0.99,
        ) {
            let mut ew = EwmaState::new(2, beta).unwrap();
            let history: Vec<DVector<f64>> =
                stream.iter().map(|r| v(r)).collect();
            for (t, r) in history.iter().enumerate() {
                ew.step(r).unwrap();
                let oracle = ewma_direct(&history[..=t], beta);
                let got = ew.weighted_moment().unwrap();
                let scale = oracle.amax().max(1e-12);
                proptest::prop_assert!((got - oracle).amax() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn ewma_constant_input_reproduces_the_constant() {
        let r = v(&[0.3, -0.7]);
        let a = &r * r.transpose();
        let mut ew = EwmaState::new(2, 0.94).unwrap();
        for step in 0..50 {
            // Constant outer products: rank one, so never PD; check the
            // normalized moment directly.
            ew.step(&r).unwrap();
            let m = ew.weighted_moment().unwrap();
            let _ = step;
            assert_relative_eq!(&m, &a, epsilon = 1e-13);
        }
    }

    #[test]
    fn iewma_scalar_collapses_to_ewma_on_squares() {
        let mut ie = IewmaState::new(1, 5.0, 20.0).unwrap();
        let mut ew = EwmaState::with_half_life(1, 5.0).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        for step in 0..100 {
            let r = v(&[rng.sample::<f64, _>(StandardNormal)]);
            let a = ie.step(&r).unwrap();
            let b = ew.step(&r).unwrap();
            if step == 0 {
                // The correlation stage has no sample yet on the first day.
                assert!(a.is_none() && b.is_some());
                continue;
            }
            let (x, y) = (a.unwrap(), b.unwrap());
            assert_relative_eq!(x.matrix()[(0, 0)], y.matrix()[(0, 0)], max_relative = 1e-12);
        }
    }

    #[test]
    fn iewma_duplicate_coordinates_correlate_to_one() {
        let mut ie = IewmaState::new(2, 10.0, 40.0).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        let mut last = None;
        for _ in 0..500 {
            let x: f64 = rng.sample(StandardNormal);
            last = ie.step(&v(&[x, x])).unwrap();
        }
        // Perfectly correlated inputs leave the rescaled off-diagonal at 1
        // (the matrix itself is singular, so the estimate is unavailable).
        assert!(last.is_none());
        let cor = ie.correlation().unwrap();
        assert!((cor[(0, 1)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn iewma_correlation_diagonal_is_exactly_one() {
        let mut ie = IewmaState::new(3, 5.0, 15.0).unwrap();
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..40 {
            let r = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            if let Some(est) = ie.step(&r).unwrap() {
                let cor = est.correlations();
                for i in 0..3 {
                    assert_relative_eq!(cor[(i, i)], 1.0, epsilon = 1e-12);
                }
            }
        }
        let cor = ie.correlation().unwrap();
        for i in 0..3 {
            assert_eq!(cor[(i, i)], 1.0);
        }
    }

    #[test]
    fn iewma_scale_equivariance() {
        let c = 7.5;
        let mut plain = IewmaState::new(2, 4.0, 12.0).unwrap();
        let mut scaled = IewmaState::new(2, 4.0, 12.0).unwrap();
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..200 {
            let r = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut rs = r.clone();
            rs[0] *= c;
            let a = plain.step(&r).unwrap();
            let b = scaled.step(&rs).unwrap();
            if let (Some(x), Some(y)) = (a, b) {
                assert_relative_eq!(y.matrix()[(0, 0)], c * c * x.matrix()[(0, 0)], max_relative = 1e-12);
                assert_relative_eq!(y.matrix()[(0, 1)], c * x.matrix()[(0, 1)], max_relative = 1e-12);
                assert_relative_eq!(y.matrix()[(1, 1)], x.matrix()[(1, 1)], max_relative = 1e-12);
                assert_relative_eq!(y.correlations(), x.correlations(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn prescient_examples() {
        let csv = "date,A\n2020-01-02,2.0\n";
        let m = parse_returns_csv(csv, None, "test").unwrap();
        let p = quarter_partition(&m);
        let est = prescient_covariances(&m, &p);
        assert_eq!(est.len(), 1);
        assert_relative_eq!(est[0].matrix()[(0, 0)], 4.0);

        let csv = "date,A\n2020-01-02,1.0\n2020-01-03,3.0\n";
        let m = parse_returns_csv(csv, None, "test").unwrap();
        let p = quarter_partition(&m);
        let est = prescient_covariances(&m, &p);
        assert_relative_eq!(est[0].matrix()[(0, 0)], 5.0);
        assert_relative_eq!(est[1].matrix()[(0, 0)], 5.0);
    }

    #[test]
    fn inflate_diagonal_examples() {
        let base = CovEstimate::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            3,
        );
        let out = inflate_diagonal(&base, 0.05).unwrap();
        assert_relative_eq!(out.matrix()[(0, 0)], 1.05);
        assert_relative_eq!(out.matrix()[(0, 1)], 0.5);
        assert_relative_eq!(out.matrix()[(1, 1)], 1.05);
        assert!(linalg::chol_lower(out.matrix()).is_some());

        let same = inflate_diagonal(&base, 0.0).unwrap();
        assert_eq!(same.matrix(), base.matrix());

        let eye = CovEstimate::new(DMatrix::identity(3, 3), 0);
        let out = inflate_diagonal(&eye, 0.05).unwrap();
        assert_relative_eq!(out.matrix(), &(DMatrix::identity(3, 3) * 1.05), epsilon = 1e-15);

        assert!(inflate_diagonal(&base, -0.1).is_err());
    }
}
