//! Self-contained convex solvers for the weight-combination and portfolio
//! problems, each verified post hoc by an independent KKT-residual check.
//!
//! Problem sizes here are tiny (tens of variables), so the solvers favor
//! verifiability over generality: a dense interior-point method for the
//! linearly constrained QPs, a damped Newton method for the risk-parity
//! problem, and bisection on the risk multiplier for the mean-variance
//! portfolio.

pub mod qp;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;
pub use qp::{kkt_residual, QpProblem, QpSolution};

/// KKT residual accepted from a solver before it reports failure.
pub const KKT_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ConvexError {
    #[error("constraint set is infeasible: {0}")]
    Infeasible(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("solver failed to reach KKT tolerance: residual {0:.3e}")]
    KktViolation(f64),
    #[error("iteration limit reached")]
    MaxIterations,
    #[error(transparent)]
    Qp(#[from] qp::QpError),
}

// ---------------------------------------------------------------------------
// Simplex projection
// ---------------------------------------------------------------------------

/// Euclidean projection onto the probability simplex
/// `{ w : w >= 0, sum w = 1 }` via the sorted-threshold rule.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let k = v.len();
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    DVector::from_fn(k, |i, _| (v[i] - tau).max(0.0))
}

// ---------------------------------------------------------------------------
// Box + leverage constrained QP
// ---------------------------------------------------------------------------

/// Feasible set `{ w : 1'w = budget, ||w||_1 <= leverage_max,
/// w_min <= w <= w_max }` used by the minimum-variance and mean-variance
/// portfolios. Bounds are per asset; infinite bounds are allowed.
#[derive(Debug, Clone)]
pub struct BoxL1Constraints {
    pub leverage_max: f64,
    pub w_min: DVector<f64>,
    pub w_max: DVector<f64>,
    pub budget: f64,
}

impl BoxL1Constraints {
    /// Uniform bounds for `n` assets with budget one.
    pub fn uniform(n: usize, leverage_max: f64, w_min: f64, w_max: f64) -> Self {
        Self {
            leverage_max,
            w_min: DVector::from_element(n, w_min),
            w_max: DVector::from_element(n, w_max),
            budget: 1.0,
        }
    }

    /// Wide-open bounds: long-or-short anything within the leverage cap.
    pub fn loose(n: usize) -> Self {
        Self::uniform(n, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn dim(&self) -> usize {
        self.w_min.len()
    }

    /// Checks nonemptiness; `l1_subset` marks the coordinates the leverage
    /// constraint covers (all, when `None`).
    pub fn check_feasible(&self, l1_subset: Option<&[bool]>) -> Result<(), ConvexError> {
        let n = self.dim();
        if self.w_max.len() != n {
            return Err(ConvexError::Dimension("w_min/w_max length".into()));
        }
        for i in 0..n {
            if self.w_min[i] > self.w_max[i] {
                return Err(ConvexError::Infeasible(format!(
                    "w_min[{i}] = {} exceeds w_max[{i}] = {}",
                    self.w_min[i], self.w_max[i]
                )));
            }
        }
        let lo: f64 = self.w_min.iter().sum();
        let hi: f64 = self.w_max.iter().sum();
        if lo > self.budget || hi < self.budget {
            return Err(ConvexError::Infeasible(format!(
                "budget {} outside attainable range [{lo}, {hi}]",
                self.budget
            )));
        }
        if !(self.leverage_max >= self.budget.abs()) {
            return Err(ConvexError::Infeasible(format!(
                "leverage limit {} below |budget| = {}",
                self.leverage_max,
                self.budget.abs()
            )));
        }
        // Minimum attainable l1 mass on the covered coordinates, given the
        // box and the budget: clamp zero into each box, then absorb the
        // remaining budget in covered or uncovered coordinates.
        let covered = |i: usize| l1_subset.is_none_or(|s| s[i]);
        let clamped: Vec<f64> = (0..n)
            .map(|i| 0.0f64.clamp(self.w_min[i], self.w_max[i]))
            .collect();
        let base: f64 = clamped.iter().sum();
        let covered_l1: f64 = (0..n)
            .filter(|&i| covered(i))
            .map(|i| clamped[i].abs())
            .sum();
        let uncovered_headroom: f64 = (0..n)
            .filter(|&i| !covered(i))
            .map(|i| {
                if self.budget >= base {
                    self.w_max[i] - clamped[i]
                } else {
                    clamped[i] - self.w_min[i]
                }
            })
            .sum();
        let residual = (self.budget - base).abs() - uncovered_headroom;
        let min_l1 = covered_l1 + residual.max(0.0);
        if min_l1 > self.leverage_max + 1e-12 {
            return Err(ConvexError::Infeasible(format!(
                "leverage limit {} below minimum attainable {min_l1:.6}",
                self.leverage_max
            )));
        }
        Ok(())
    }
}

/// Builds the split-variable standard form of
/// `minimize w' S w + c' w` over a [`BoxL1Constraints`] set, with
/// `x = (pos, neg)`, `w = pos - neg`. The leverage row covers the
/// coordinates flagged in `l1_subset` (all when `None`).
pub fn build_box_l1_problem(
    sigma: &DMatrix<f64>,
    c: &DVector<f64>,
    cons: &BoxL1Constraints,
    l1_subset: Option<&[bool]>,
) -> QpProblem {
    let n = sigma.nrows();
    let two = 2.0 * sigma;
    let mut p = DMatrix::zeros(2 * n, 2 * n);
    p.view_mut((0, 0), (n, n)).copy_from(&two);
    p.view_mut((n, n), (n, n)).copy_from(&two);
    p.view_mut((0, n), (n, n)).copy_from(&(-&two));
    p.view_mut((n, 0), (n, n)).copy_from(&(-&two));
    let mut q = DVector::zeros(2 * n);
    q.rows_mut(0, n).copy_from(c);
    q.rows_mut(n, n).copy_from(&(-c));

    let mut a = DMatrix::zeros(1, 2 * n);
    for i in 0..n {
        a[(0, i)] = 1.0;
        a[(0, n + i)] = -1.0;
    }
    let b = DVector::from_element(1, cons.budget);

    let covered = |i: usize| l1_subset.is_none_or(|s| s[i]);
    let mut g_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    if cons.leverage_max.is_finite() {
        let mut row = Vec::new();
        for i in 0..n {
            if covered(i) {
                row.push((i, 1.0));
                row.push((n + i, 1.0));
            }
        }
        g_rows.push((row, cons.leverage_max));
    }
    for i in 0..n {
        if cons.w_max[i].is_finite() {
            g_rows.push((vec![(i, 1.0), (n + i, -1.0)], cons.w_max[i]));
        }
        if cons.w_min[i].is_finite() {
            g_rows.push((vec![(i, -1.0), (n + i, 1.0)], -cons.w_min[i]));
        }
    }
    for i in 0..(2 * n) {
        g_rows.push((vec![(i, -1.0)], 0.0));
    }
    let m = g_rows.len();
    let mut g = DMatrix::zeros(m, 2 * n);
    let mut h = DVector::zeros(m);
    for (r, (row, rhs)) in g_rows.iter().enumerate() {
        for &(col, val) in row {
            g[(r, col)] = val;
        }
        h[r] = *rhs;
    }
    QpProblem { p, q, a, b, g, h }
}

fn interior_box_start(cons: &BoxL1Constraints) -> DVector<f64> {
    let n = cons.dim();
    let even = cons.budget / n as f64;
    let mut x = DVector::zeros(2 * n);
    for i in 0..n {
        let w = even.clamp(cons.w_min[i], cons.w_max[i]);
        x[i] = w.max(0.0) + 0.1;
        x[n + i] = (-w).max(0.0) + 0.1;
    }
    x
}

/// Solves `minimize w' S w + c' w` subject to the budget, leverage, and
/// box constraints, via split variables and the interior-point method.
/// The returned weights carry a verified KKT residual of at most
/// [`KKT_TOL`] on the split-form problem.
pub fn solve_qp_box_l1(
    sigma: &DMatrix<f64>,
    c: &DVector<f64>,
    cons: &BoxL1Constraints,
) -> Result<DVector<f64>, ConvexError> {
    if linalg::chol_lower(sigma).is_none() {
        return Err(ConvexError::NotPositiveDefinite);
    }
    solve_box_l1_general(sigma, c, cons, None).map(|(w, _)| w)
}

/// General form used by both the public box-l1 solver and the
/// mean-variance bisection; returns the weights and the full primal/dual
/// solution of the split problem.
pub fn solve_box_l1_general(
    sigma: &DMatrix<f64>,
    c: &DVector<f64>,
    cons: &BoxL1Constraints,
    l1_subset: Option<&[bool]>,
) -> Result<(DVector<f64>, QpSolution), ConvexError> {
    let n = sigma.nrows();
    if c.len() != n || cons.dim() != n {
        return Err(ConvexError::Dimension(format!(
            "sigma is {n}x{n}, c has {} entries, constraints cover {}",
            c.len(),
            cons.dim()
        )));
    }
    cons.check_feasible(l1_subset)?;
    let problem = build_box_l1_problem(sigma, c, cons, l1_subset);
    let sol = qp::solve(&problem, Some(&interior_box_start(cons)))?;
    let res = kkt_residual(&problem, &sol.x, &sol.y, &sol.z);
    if res > KKT_TOL {
        return Err(ConvexError::KktViolation(res));
    }
    let w = DVector::from_fn(n, |i, _| sol.x[i] - sol.x[n + i]);
    Ok((w, sol))
}

// ---------------------------------------------------------------------------
// Nonnegative QP with one equality (maximum diversification core)
// ---------------------------------------------------------------------------

/// Standard form of the nonnegative equality-constrained QP
/// `minimize x' S x  subject to a' x = 1, x >= 0`.
pub fn build_nonneg_eq_problem(sigma: &DMatrix<f64>, a: &DVector<f64>) -> QpProblem {
    let n = sigma.nrows();
    QpProblem {
        p: 2.0 * sigma,
        q: DVector::zeros(n),
        a: DMatrix::from_fn(1, n, |_, j| a[j]),
        b: DVector::from_element(1, 1.0),
        g: -DMatrix::identity(n, n),
        h: DVector::zeros(n),
    }
}

/// Solves `minimize x' S x  subject to a' x = 1, x >= 0` for positive `a`.
pub fn solve_nonneg_qp_eq(
    sigma: &DMatrix<f64>,
    a: &DVector<f64>,
) -> Result<DVector<f64>, ConvexError> {
    solve_nonneg_qp_eq_full(sigma, a).map(|sol| sol.x)
}

/// As [`solve_nonneg_qp_eq`] but returning the primal/dual solution of
/// the standard-form problem for external KKT verification.
pub fn solve_nonneg_qp_eq_full(
    sigma: &DMatrix<f64>,
    a: &DVector<f64>,
) -> Result<QpSolution, ConvexError> {
    let n = sigma.nrows();
    if a.len() != n {
        return Err(ConvexError::Dimension("a length".into()));
    }
    if !a.iter().all(|&x| x > 0.0) {
        return Err(ConvexError::Infeasible("a must be entrywise positive".into()));
    }
    if linalg::chol_lower(sigma).is_none() {
        return Err(ConvexError::NotPositiveDefinite);
    }
    let problem = build_nonneg_eq_problem(sigma, a);
    // Start at the scaled uniform point a'x = 1.
    let denom: f64 = a.iter().sum();
    let start = DVector::from_fn(n, |_, _| 1.0 / denom);
    let sol = qp::solve(&problem, Some(&start))?;
    let res = kkt_residual(&problem, &sol.x, &sol.y, &sol.z);
    if res > KKT_TOL {
        return Err(ConvexError::KktViolation(res));
    }
    Ok(sol)
}

// ---------------------------------------------------------------------------
// Risk parity
// ---------------------------------------------------------------------------

/// Gradient of the risk-parity potential `(1/2) x'Sx - (1/n) sum log x_i`.
pub fn risk_parity_gradient(sigma: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    sigma * x - DVector::from_fn(n, |i, _| 1.0 / (n as f64 * x[i]))
}

/// Solves the unconstrained risk-parity problem
/// `minimize (1/2) x'Sx - (1/n) sum log x_i` by damped Newton iteration,
/// keeping every iterate strictly positive. The solution satisfies
/// `||grad||_inf <= 1e-10`.
pub fn solve_risk_parity(sigma: &DMatrix<f64>) -> Result<DVector<f64>, ConvexError> {
    let n = sigma.nrows();
    if linalg::chol_lower(sigma).is_none() {
        return Err(ConvexError::NotPositiveDefinite);
    }
    let nf = n as f64;
    let obj = |x: &DVector<f64>| -> f64 {
        0.5 * (sigma * x).dot(x) - x.iter().map(|v| v.ln()).sum::<f64>() / nf
    };
    // Exact for diagonal sigma; a good warm start otherwise.
    let mut x = DVector::from_fn(n, |i, _| 1.0 / (nf.sqrt() * sigma[(i, i)].sqrt()));
    for _ in 0..200 {
        let g = risk_parity_gradient(sigma, &x);
        if g.amax() <= 1e-10 {
            return Ok(x);
        }
        let mut hess = sigma.clone();
        for i in 0..n {
            hess[(i, i)] += 1.0 / (nf * x[i] * x[i]);
        }
        let l = linalg::chol_lower(&hess).ok_or(ConvexError::NotPositiveDefinite)?;
        let step = -linalg::solve_lower_transpose(&l, &linalg::solve_lower(&l, &g));
        // Stay strictly inside x > 0, then backtrack on the objective.
        let mut alpha_max = 1.0f64;
        for i in 0..n {
            if step[i] < 0.0 {
                alpha_max = alpha_max.min(-0.99 * x[i] / step[i]);
            }
        }
        let mut alpha = alpha_max.min(1.0);
        let f0 = obj(&x);
        let slope = g.dot(&step);
        // Floating-point slack keeps the search from stalling once the
        // decrease falls below the resolution of the objective itself.
        let slack = 1e-14 * (1.0 + f0.abs());
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &x + alpha * &step;
            if cand.iter().all(|&v| v > 0.0) && obj(&cand) <= f0 + 1e-4 * alpha * slope + slack {
                x = cand;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(ConvexError::MaxIterations);
        }
    }
    Err(ConvexError::MaxIterations)
}

// ---------------------------------------------------------------------------
// Mean-variance via bisection on the risk multiplier
// ---------------------------------------------------------------------------

/// Solution of the mean-variance problem: weights over `n_total` assets
/// (cash last by convention of the caller) plus the multiplier of the
/// risk constraint and the primal/dual solution of the inner split
/// problem at that multiplier, for KKT verification.
#[derive(Debug, Clone)]
pub struct MeanVarianceSolution {
    pub weights: DVector<f64>,
    /// Multiplier of the variance constraint `w' S w <= cap^2`.
    pub risk_multiplier: f64,
    /// Split-form solution of `min lambda w'Sw - r_hat'w` at the
    /// returned multiplier (verifies stationarity of the full problem
    /// together with the complementarity of the risk constraint).
    pub split: QpSolution,
}

/// Maximizes `r_hat' w` subject to `w' S w <= sigma_cap^2`, the budget,
/// a leverage limit over the coordinates flagged by `l1_subset`, and the
/// box bounds, where `S` may be positive semidefinite (a zero cash
/// row/column in the portfolio use).
///
/// Solved by bisection on the risk-constraint multiplier: each inner
/// problem is a box-l1 QP with objective `lambda w'Sw - r_hat'w`. When
/// the forecast is constant across assets the objective is flat on the
/// budget hyperplane and the minimum-variance feasible point is returned.
pub fn solve_mean_variance(
    sigma: &DMatrix<f64>,
    r_hat: &DVector<f64>,
    sigma_cap: f64,
    cons: &BoxL1Constraints,
    l1_subset: Option<&[bool]>,
) -> Result<MeanVarianceSolution, ConvexError> {
    let n = sigma.nrows();
    if r_hat.len() != n || cons.dim() != n {
        return Err(ConvexError::Dimension("mean-variance inputs".into()));
    }
    if !(sigma_cap > 0.0) {
        return Err(ConvexError::Infeasible("volatility cap must be positive".into()));
    }
    let cap2 = sigma_cap * sigma_cap;
    let risk = |w: &DVector<f64>| (sigma * w).dot(w);

    // Flat objective: r_hat constant on the budget hyperplane.
    let spread = r_hat.max() - r_hat.min();
    let scale = r_hat.amax().max(1.0);
    if spread <= 1e-14 * scale {
        let (w, split) = solve_box_l1_general(sigma, &DVector::zeros(n), cons, l1_subset)?;
        if risk(&w) > cap2 + 1e-9 {
            return Err(ConvexError::Infeasible(
                "volatility target unattainable: minimum variance exceeds the cap".into(),
            ));
        }
        return Ok(MeanVarianceSolution {
            weights: w,
            risk_multiplier: 0.0,
            split,
        });
    }

    let sigma_scale = sigma.amax().max(1e-300);
    let lambda_ref = r_hat.amax().max(1e-12) / sigma_scale;
    let inner = |lambda: f64| -> Result<(DVector<f64>, QpSolution), ConvexError> {
        let scaled = lambda * sigma;
        solve_box_l1_general(&scaled, &(-r_hat), cons, l1_subset)
    };

    // Risk is non-increasing in lambda. Establish the bracket.
    let mut lam_lo = 1e-10 * lambda_ref;
    let (w_lo, split_lo) = inner(lam_lo)?;
    if risk(&w_lo) <= cap2 {
        // Risk constraint slack at the return-maximizing end.
        return Ok(MeanVarianceSolution {
            weights: w_lo,
            risk_multiplier: lam_lo,
            split: split_lo,
        });
    }
    let mut lam_hi = lambda_ref.max(1e-12);
    let mut best = inner(lam_hi)?;
    let mut grow = 0;
    while risk(&best.0) > cap2 {
        lam_hi *= 10.0;
        grow += 1;
        if grow > 24 {
            // Even overwhelming risk aversion cannot reach the cap.
            return Err(ConvexError::Infeasible(
                "volatility target unattainable under the given constraints".into(),
            ));
        }
        best = inner(lam_hi)?;
    }

    // Geometric bisection until the variance pins the cap.
    let mut lam_best = lam_hi;
    for _ in 0..200 {
        let r_best = risk(&best.0);
        if (cap2 - r_best).abs() <= 1e-9 * cap2.max(1e-30) || (lam_hi - lam_lo) <= 1e-13 * lam_hi
        {
            break;
        }
        let mid = (lam_lo * lam_hi).sqrt();
        let cand = inner(mid)?;
        if risk(&cand.0) > cap2 {
            lam_lo = mid;
        } else {
            lam_hi = mid;
            lam_best = mid;
            best = cand;
        }
    }
    Ok(MeanVarianceSolution {
        weights: best.0,
        risk_multiplier: lam_best,
        split: best.1,
    })
}
