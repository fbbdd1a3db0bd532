//! Dynamically weighted combination of covariance predictors.
//!
//! Expert predictions are combined in the space of Cholesky factors of
//! their precision matrices: the combined factor is the weighted sum of
//! the component factors, and the weights maximize the Gaussian
//! log-likelihood of the combined prediction over a trailing window of
//! realized returns. That objective is concave in the weights, so a
//! projected gradient ascent over the probability simplex solves it to
//! optimality.

use nalgebra::{DMatrix, DVector};
use std::collections::VecDeque;
use thiserror::Error;

use crate::convex_kit::project_simplex;
use crate::estimators::{inflate_diagonal, CovEstimate, IewmaState};
use crate::linalg;

#[derive(Debug, Error)]
pub enum CombinerError {
    #[error("estimate is not positive definite; upstream estimator bug")]
    NotPositiveDefinite,
    #[error("factor is not lower-triangular with positive diagonal")]
    MalformedFactor,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("factors disagree on day index")]
    DayMismatch,
    #[error("weight vector is not on the probability simplex")]
    BadWeights,
    #[error("weight window is empty")]
    EmptyWindow,
    #[error(transparent)]
    Estimator(#[from] crate::estimators::EstimatorError),
}

/// Lower-triangular Cholesky factor `L` of a precision matrix, with
/// `L L' = (covariance)^{-1}`. `component_id` identifies the expert that
/// produced the factor; combined factors carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionFactor {
    l: DMatrix<f64>,
    day_index: usize,
    component_id: Option<usize>,
}

impl PrecisionFactor {
    pub fn new(
        l: DMatrix<f64>,
        day_index: usize,
        component_id: Option<usize>,
    ) -> Result<Self, CombinerError> {
        let n = l.nrows();
        if l.ncols() != n {
            return Err(CombinerError::MalformedFactor);
        }
        for i in 0..n {
            if !(l[(i, i)] > 0.0) {
                return Err(CombinerError::MalformedFactor);
            }
            for j in (i + 1)..n {
                if l[(i, j)] != 0.0 {
                    return Err(CombinerError::MalformedFactor);
                }
            }
        }
        Ok(Self {
            l,
            day_index,
            component_id,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn day_index(&self) -> usize {
        self.day_index
    }

    pub fn component_id(&self) -> Option<usize> {
        self.component_id
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Diagonal of the factor, the per-coordinate precision scales.
    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.l[(i, i)])
    }
}

/// Nonnegative expert weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(DVector<f64>);

impl WeightVector {
    pub fn new(w: DVector<f64>) -> Result<Self, CombinerError> {
        if w.is_empty()
            || w.iter().any(|&x| !(x >= -1e-12) || !x.is_finite())
            || (w.sum() - 1.0).abs() > 1e-9
        {
            return Err(CombinerError::BadWeights);
        }
        Ok(Self(w.map(|x| x.max(0.0))))
    }

    pub fn uniform(k: usize) -> Self {
        Self(DVector::from_element(k, 1.0 / k as f64))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Cholesky factor of the precision matrix of a covariance estimate.
pub fn precision_cholesky(est: &CovEstimate) -> Result<PrecisionFactor, CombinerError> {
    precision_cholesky_tagged(est, None)
}

fn precision_cholesky_tagged(
    est: &CovEstimate,
    component_id: Option<usize>,
) -> Result<PrecisionFactor, CombinerError> {
    let c = linalg::chol_lower(est.matrix()).ok_or(CombinerError::NotPositiveDefinite)?;
    let precision = linalg::spd_inverse_from_chol(&c);
    let l = linalg::chol_lower(&precision).ok_or(CombinerError::NotPositiveDefinite)?;
    PrecisionFactor::new(l, est.day_index(), component_id)
}

/// Entrywise convex combination of precision factors. Lower-triangularity
/// and the positive diagonal survive any simplex-feasible weighting.
pub fn combine_factors(
    factors: &[PrecisionFactor],
    w: &WeightVector,
) -> Result<PrecisionFactor, CombinerError> {
    if factors.is_empty() || factors.len() != w.len() {
        return Err(CombinerError::Dimension(format!(
            "{} factors vs {} weights",
            factors.len(),
            w.len()
        )));
    }
    let n = factors[0].dim();
    let day = factors[0].day_index();
    for f in factors {
        if f.dim() != n {
            return Err(CombinerError::Dimension("factor dimensions differ".into()));
        }
        if f.day_index() != day {
            return Err(CombinerError::DayMismatch);
        }
    }
    let mut l = DMatrix::zeros(n, n);
    for (f, &wk) in factors.iter().zip(w.as_vector().iter()) {
        l += wk * f.matrix();
    }
    PrecisionFactor::new(l, day, None)
}

/// Recovers the covariance matrix `(L L')^{-1}` from a precision factor.
pub fn covariance_from_factor(f: &PrecisionFactor) -> CovEstimate {
    let sigma = linalg::spd_inverse_from_chol(f.matrix());
    CovEstimate::new(sigma, f.day_index())
}

// ---------------------------------------------------------------------------
// Weight selection
// ---------------------------------------------------------------------------

/// One day of the trailing weight-selection window, reduced to the pieces
/// the objective needs: each component factor's diagonal and `L' r`.
#[derive(Debug, Clone)]
pub struct WindowDay {
    diags: Vec<DVector<f64>>,
    lt_r: Vec<DVector<f64>>,
}

impl WindowDay {
    pub fn new(factors: &[PrecisionFactor], r: &DVector<f64>) -> Result<Self, CombinerError> {
        if factors.is_empty() {
            return Err(CombinerError::EmptyWindow);
        }
        let n = factors[0].dim();
        if r.len() != n {
            return Err(CombinerError::Dimension(format!(
                "return length {} vs factor dimension {n}",
                r.len()
            )));
        }
        let mut diags = Vec::with_capacity(factors.len());
        let mut lt_r = Vec::with_capacity(factors.len());
        for f in factors {
            if f.dim() != n {
                return Err(CombinerError::Dimension("factor dimensions differ".into()));
            }
            diags.push(f.diagonal());
            lt_r.push(f.matrix().transpose() * r);
        }
        Ok(Self { diags, lt_r })
    }

    pub fn components(&self) -> usize {
        self.diags.len()
    }
}

/// Log-likelihood objective of the combined factor over the window, up to
/// the constant `-(n/2) log(2 pi)` per day: for each day,
/// `sum_i log L_ii - (1/2) ||L' r||^2` with `L = sum_k w_k L_k`.
pub fn window_objective(window: &[WindowDay], w: &DVector<f64>) -> f64 {
    let k = w.len();
    let mut total = 0.0;
    for day in window {
        let n = day.diags[0].len();
        for i in 0..n {
            let mut d = 0.0;
            for c in 0..k {
                d += w[c] * day.diags[c][i];
            }
            total += d.ln();
        }
        let mut quad = 0.0;
        for i in 0..n {
            let mut u = 0.0;
            for c in 0..k {
                u += w[c] * day.lt_r[c][i];
            }
            quad += u * u;
        }
        total -= 0.5 * quad;
    }
    total
}

fn window_gradient(window: &[WindowDay], w: &DVector<f64>) -> DVector<f64> {
    let k = w.len();
    let mut grad = DVector::zeros(k);
    for day in window {
        let n = day.diags[0].len();
        for i in 0..n {
            let mut d = 0.0;
            for c in 0..k {
                d += w[c] * day.diags[c][i];
            }
            for c in 0..k {
                grad[c] += day.diags[c][i] / d;
            }
        }
        let mut u = DVector::zeros(n);
        for c in 0..k {
            u.axpy(w[c], &day.lt_r[c], 1.0);
        }
        for c in 0..k {
            grad[c] -= u.dot(&day.lt_r[c]);
        }
    }
    grad
}

/// Optional additions to the weight problem: a smoothness penalty pulling
/// toward the previous weights.
#[derive(Debug, Clone, Default)]
struct WeightPenalty {
    smooth: f64,
    previous: Option<DVector<f64>>,
}

impl WeightPenalty {
    fn objective(&self, w: &DVector<f64>) -> f64 {
        match (&self.previous, self.smooth) {
            (Some(prev), rho) if rho > 0.0 => -rho * (w - prev).norm_squared(),
            _ => 0.0,
        }
    }

    fn gradient(&self, w: &DVector<f64>, grad: &mut DVector<f64>) {
        if let (Some(prev), rho) = (&self.previous, self.smooth) {
            if rho > 0.0 {
                grad.axpy(-2.0 * rho, &(w - prev), 1.0);
            }
        }
    }
}

const WEIGHT_MAX_ITER: usize = 10_000;
const PROJ_GRAD_TOL: f64 = 1e-9;
const IMPROVEMENT_TOL: f64 = 1e-12;

/// Projected gradient ascent with backtracking from a given start point.
fn ascend(
    window: &[WindowDay],
    penalty: &WeightPenalty,
    start: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let objective = |w: &DVector<f64>| window_objective(window, w) + penalty.objective(w);
    let gradient = |w: &DVector<f64>| {
        let mut g = window_gradient(window, w);
        penalty.gradient(w, &mut g);
        g
    };
    let mut w = project_simplex(start);
    let mut f = objective(&w);
    let mut step = 1.0f64;
    for _ in 0..WEIGHT_MAX_ITER {
        let g = gradient(&w);
        // Unit-step gradient mapping as the stationarity measure.
        let mapped = project_simplex(&(&w + &g));
        if (&mapped - &w).norm() <= PROJ_GRAD_TOL {
            break;
        }
        // Backtracking line search on the projected step.
        let mut accepted = false;
        for _ in 0..60 {
            let cand = project_simplex(&(&w + step * &g));
            let dir = &cand - &w;
            let f_cand = objective(&cand);
            if f_cand >= f + 1e-4 * g.dot(&dir) - 1e-14 * (1.0 + f.abs()) {
                let improvement = f_cand - f;
                w = cand;
                f = f_cand;
                accepted = true;
                step *= 2.0;
                if improvement.abs() <= IMPROVEMENT_TOL {
                    return (w, f);
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (w, f)
}

/// Ascent plus a vertex guard: the returned weights dominate every
/// single-expert vertex. If a vertex scores higher than the ascent's
/// fixed point (possible only under early termination), the ascent is
/// restarted once from the best vertex and the better result wins.
fn solve_weights_inner(
    window: &[WindowDay],
    start: DVector<f64>,
    penalty: &WeightPenalty,
) -> DVector<f64> {
    let k = start.len();
    let objective = |w: &DVector<f64>| window_objective(window, w) + penalty.objective(w);
    let (w, f) = ascend(window, penalty, &start);
    let mut best_vertex: Option<(usize, f64)> = None;
    for c in 0..k {
        let mut e = DVector::zeros(k);
        e[c] = 1.0;
        let fe = objective(&e);
        if fe > f && best_vertex.is_none_or(|(_, fb)| fe > fb) {
            best_vertex = Some((c, fe));
        }
    }
    match best_vertex {
        None => w,
        Some((c, _)) => {
            let mut e = DVector::zeros(k);
            e[c] = 1.0;
            let (refined, f_refined) = ascend(window, penalty, &e);
            if f_refined >= f {
                refined
            } else {
                w
            }
        }
    }
}

/// Maximizes the trailing-window log-likelihood of the combined factor
/// over the probability simplex by projected gradient ascent with
/// backtracking. The returned weights dominate every single-expert
/// vertex of the simplex.
pub fn solve_weights(window: &[WindowDay]) -> Result<WeightVector, CombinerError> {
    if window.is_empty() {
        return Err(CombinerError::EmptyWindow);
    }
    let k = window[0].components();
    if window.iter().any(|d| d.components() != k) {
        return Err(CombinerError::Dimension(
            "window days disagree on expert count".into(),
        ));
    }
    let start = DVector::from_element(k, 1.0 / k as f64);
    let w = solve_weights_inner(window, start, &WeightPenalty::default());
    WeightVector::new(w)
}

// ---------------------------------------------------------------------------
// CM-IEWMA streaming state
// ---------------------------------------------------------------------------

/// Configuration of the combined multiple iterated EWMA predictor.
#[derive(Debug, Clone)]
pub struct CmIewmaConfig {
    /// Component half-life pairs `(h_vol, h_cor)`, one per expert.
    pub half_lives: Vec<(f64, f64)>,
    /// Trailing window length for the weight problem.
    pub lookback: usize,
    /// Diagonal inflation applied to the components in `inflate_set`.
    pub inflate_fraction: f64,
    /// Indices of the components whose estimates are inflated.
    pub inflate_set: Vec<usize>,
    /// Adds one diagonal expert built from the slowest component.
    pub diagonal_expert: bool,
    /// Smoothness penalty `rho ||w - w_prev||^2` on the weights (off at 0).
    pub smooth_weight_penalty: f64,
}

impl CmIewmaConfig {
    /// Components with the given half-life pairs, a 10-day lookback, and
    /// 5% inflation on the fastest pair.
    pub fn standard(half_lives: Vec<(f64, f64)>) -> Self {
        let fastest = fastest_component(&half_lives);
        Self {
            half_lives,
            lookback: 10,
            inflate_fraction: 0.05,
            inflate_set: vec![fastest],
            diagonal_expert: false,
            smooth_weight_penalty: 0.0,
        }
    }

    /// Number of experts including the optional diagonal expert.
    pub fn experts(&self) -> usize {
        self.half_lives.len() + usize::from(self.diagonal_expert)
    }
}

/// Index of the fastest (shortest correlation half-life) pair.
pub fn fastest_component(half_lives: &[(f64, f64)]) -> usize {
    let mut best = 0;
    for (i, hl) in half_lives.iter().enumerate() {
        let b = half_lives[best];
        if (hl.1, hl.0) < (b.1, b.0) {
            best = i;
        }
    }
    best
}

/// Streaming state of the combined predictor: the component IEWMAs, the
/// trailing window of fully populated days, and the last solved weights.
#[derive(Debug, Clone)]
pub struct CombinerState {
    components: Vec<IewmaState>,
    config: CmIewmaConfig,
    window: VecDeque<WindowDay>,
    last_w: WeightVector,
    /// Factors predicting the next incoming day, when every expert is
    /// available; they pair with that day's return to extend the window.
    pending: Option<Vec<PrecisionFactor>>,
    last_combined: Option<PrecisionFactor>,
}

/// Output of one combiner step: the prediction for the next day (when
/// every component is available) and the weights that produced it.
#[derive(Debug, Clone)]
pub struct CombinerStep {
    pub estimate: Option<CovEstimate>,
    pub weights: WeightVector,
}

impl CombinerState {
    pub fn new(n: usize, config: CmIewmaConfig) -> Result<Self, CombinerError> {
        if config.half_lives.is_empty() {
            return Err(CombinerError::Dimension("no component half-lives".into()));
        }
        if config.lookback == 0 {
            return Err(CombinerError::EmptyWindow);
        }
        for &idx in &config.inflate_set {
            if idx >= config.half_lives.len() {
                return Err(CombinerError::Dimension(format!(
                    "inflate index {idx} out of range"
                )));
            }
        }
        let components = config
            .half_lives
            .iter()
            .map(|&(hv, hc)| IewmaState::new(n, hv, hc))
            .collect::<Result<Vec<_>, _>>()?;
        let k = config.experts();
        Ok(Self {
            components,
            config,
            window: VecDeque::new(),
            last_w: WeightVector::uniform(k),
            pending: None,
            last_combined: None,
        })
    }

    pub fn config(&self) -> &CmIewmaConfig {
        &self.config
    }

    pub fn weights(&self) -> &WeightVector {
        &self.last_w
    }

    /// Combined precision factor of the most recent available estimate.
    pub fn last_combined_factor(&self) -> Option<&PrecisionFactor> {
        self.last_combined.as_ref()
    }

    /// Weight-averaged correlation half-life of the experts, the
    /// reactivity diagnostic. The diagonal expert inherits the slowest
    /// pair's half-life.
    pub fn effective_half_life(&self) -> f64 {
        let w = self.last_w.as_vector();
        let slowest = self
            .config
            .half_lives
            .iter()
            .map(|&(_, hc)| hc)
            .fold(f64::MIN, f64::max);
        let mut h = 0.0;
        for (k, &(_, hc)) in self.config.half_lives.iter().enumerate() {
            h += w[k] * hc;
        }
        if self.config.diagonal_expert {
            h += w[self.config.half_lives.len()] * slowest;
        }
        h
    }

    /// Consumes the return for the incoming day and emits the prediction
    /// for the following day. The estimate never uses the return of the
    /// day it predicts: the pending factors were built from strictly
    /// earlier data and only join the weight window together with the
    /// realized return that scores them.
    pub fn step(&mut self, r: &DVector<f64>) -> Result<CombinerStep, CombinerError> {
        if let Some(factors) = self.pending.take() {
            let day = WindowDay::new(&factors, r)?;
            self.window.push_back(day);
            while self.window.len() > self.config.lookback {
                self.window.pop_front();
            }
        }

        // Advance every expert with the realized return.
        let mut estimates: Vec<Option<CovEstimate>> = Vec::with_capacity(self.components.len());
        for (k, comp) in self.components.iter_mut().enumerate() {
            let est = comp.step(r)?;
            let est = match est {
                Some(e) if self.config.inflate_set.contains(&k) => {
                    Some(inflate_diagonal(&e, self.config.inflate_fraction)?)
                }
                other => other,
            };
            estimates.push(est);
        }

        // Weights for the prediction that follows this return.
        let penalty = WeightPenalty {
            smooth: self.config.smooth_weight_penalty,
            previous: Some(self.last_w.as_vector().clone()),
        };
        let weights = if self.window.is_empty() {
            WeightVector::uniform(self.config.experts())
        } else {
            let days: Vec<WindowDay> = self.window.iter().cloned().collect();
            let start = self.last_w.as_vector().clone();
            WeightVector::new(solve_weights_inner(&days, start, &penalty))?
        };
        self.last_w = weights.clone();

        let all_available = estimates.iter().all(Option::is_some);
        if !all_available {
            self.pending = None;
            self.last_combined = None;
            return Ok(CombinerStep {
                estimate: None,
                weights,
            });
        }

        let mut experts: Vec<CovEstimate> =
            estimates.into_iter().map(Option::unwrap).collect();
        if self.config.diagonal_expert {
            let slowest = self
                .config
                .half_lives
                .iter()
                .enumerate()
                .max_by(|a, b| (a.1 .1, a.1 .0).partial_cmp(&(b.1 .1, b.1 .0)).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            let base = &experts[slowest];
            let mut diag = DMatrix::zeros(base.dim(), base.dim());
            for i in 0..base.dim() {
                diag[(i, i)] = base.matrix()[(i, i)];
            }
            experts.push(CovEstimate::new(diag, base.day_index()));
        }

        let mut factors = Vec::with_capacity(experts.len());
        for (k, est) in experts.iter().enumerate() {
            factors.push(precision_cholesky_tagged(est, Some(k))?);
        }
        let combined = combine_factors(&factors, &weights)?;
        let estimate = covariance_from_factor(&combined);
        self.last_combined = Some(combined);
        self.pending = Some(factors);
        Ok(CombinerStep {
            estimate: Some(estimate),
            weights,
        })
    }
}
