//! Dense primal-dual interior-point solver for small quadratic programs
//!
//! ```text
//! minimize    (1/2) x' P x + q' x
//! subject to  A x = b,   G x <= h
//! ```
//!
//! with P symmetric positive semidefinite. Problems here have at most a
//! few hundred variables, so every factorization is a dense Cholesky.
//! The solver is deterministic: identical inputs produce identical
//! iterates bit for bit.

use nalgebra::{DMatrix, DVector};

use crate::linalg;

/// Problem data in standard form.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

/// Primal/dual solution returned by [`solve`].
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers for the equality constraints.
    pub y: DVector<f64>,
    /// Multipliers for the inequality constraints (nonnegative).
    pub z: DVector<f64>,
    pub iterations: usize,
}

/// Infinity-norm Karush-Kuhn-Tucker residual of a candidate primal/dual
/// triple, recomputed from the problem data alone. This is the
/// verification path for every solver in the crate and is intentionally
/// independent of the solver's own stopping statistics.
pub fn kkt_residual(p: &QpProblem, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> f64 {
    let stat = (&p.p * x + &p.q + p.a.transpose() * y + p.g.transpose() * z)
        .amax();
    let pri_eq = if p.b.is_empty() {
        0.0
    } else {
        (&p.a * x - &p.b).amax()
    };
    let slack = &p.h - &p.g * x;
    let pri_ineq = slack.iter().fold(0.0f64, |m, &s| m.max(-s));
    let dual = z.iter().fold(0.0f64, |m, &zi| m.max(-zi));
    let comp = slack
        .iter()
        .zip(z.iter())
        .fold(0.0f64, |m, (&s, &zi)| m.max((s * zi).abs()));
    stat.max(pri_eq).max(pri_ineq).max(dual).max(comp)
}

#[derive(Debug, thiserror::Error)]
pub enum QpError {
    #[error("interior-point iteration limit reached (best KKT residual {residual:.3e})")]
    MaxIterations { residual: f64 },
    #[error("KKT system factorization failed")]
    Factorization,
}

const MAX_ITER: usize = 200;
const TOL: f64 = 1e-11;

/// Mehrotra predictor-corrector interior-point method.
///
/// `x_start` seeds the primal iterate; slacks and inequality multipliers
/// start at one, and infeasible starts are handled through the residuals.
pub fn solve(problem: &QpProblem, x_start: Option<&DVector<f64>>) -> Result<QpSolution, QpError> {
    let n = problem.p.nrows();
    let m = problem.g.nrows();
    let p_eq = problem.a.nrows();
    debug_assert!(m > 0, "interior-point form requires inequality rows");

    let mut x = x_start.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut y = DVector::zeros(p_eq);
    let mut s = DVector::from_element(m, 1.0);
    let mut z = DVector::from_element(m, 1.0);

    // Residual scale references for the stopping rule.
    let q_scale = 1.0 + problem.q.amax() + problem.p.amax();
    let b_scale = 1.0
        + if p_eq > 0 { problem.b.amax() } else { 0.0 }
        + problem.h.amax();
    let reg = 1e-12 * (1.0 + problem.p.trace().abs() / n as f64);

    let mut best: Option<(f64, QpSolution)> = None;
    for iter in 0..MAX_ITER {
        let rd = &problem.p * &x + &problem.q + problem.a.transpose() * &y
            + problem.g.transpose() * &z;
        let rp = &problem.a * &x - &problem.b;
        let rg = &problem.g * &x + &s - &problem.h;
        let mu = s.dot(&z) / m as f64;

        let sol = QpSolution {
            x: x.clone(),
            y: y.clone(),
            z: z.clone(),
            iterations: iter,
        };
        let res = kkt_residual(problem, &sol.x, &sol.y, &sol.z);
        if best.as_ref().is_none_or(|(r, _)| res < *r) {
            best = Some((res, sol));
        }

        if std::env::var("COVCAST_IPM_TRACE").is_ok() {
            eprintln!(
                "iter {iter}: rd={:.2e} rp={:.2e} rg={:.2e} mu={:.2e} smin={:.2e} zmin={:.2e} res={res:.2e}",
                rd.amax(),
                if p_eq > 0 { rp.amax() } else { 0.0 },
                rg.amax(),
                mu,
                s.min(),
                z.min()
            );
        }
        let rp_norm = if p_eq > 0 { rp.amax() } else { 0.0 };
        if rd.amax() <= TOL * q_scale && rp_norm <= TOL * b_scale && mu <= TOL * q_scale {
            let (_, sol) = best.unwrap();
            return Ok(sol);
        }

        // K = P + G' W G with W = diag(z/s), capped to keep the normal
        // equations finite when active slacks collapse.
        let w: Vec<f64> = (0..m).map(|i| (z[i] / s[i]).min(1e14)).collect();
        let mut k = problem.p.clone();
        for i in 0..n {
            k[(i, i)] += reg;
        }
        for (row, &wr) in w.iter().enumerate() {
            for i in 0..n {
                let gi = problem.g[(row, i)];
                if gi == 0.0 {
                    continue;
                }
                for j in 0..=i {
                    let gj = problem.g[(row, j)];
                    if gj != 0.0 {
                        k[(i, j)] += wr * gi * gj;
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                k[(j, i)] = k[(i, j)];
            }
        }
        // Cancellation can break the factorization right at convergence;
        // fall back to the best iterate when it is already accurate.
        let l_k = match linalg::chol_lower_raw(&k) {
            Some(l) => l,
            None => break,
        };

        let solve_kkt = |rc: &DVector<f64>, l_k: &DMatrix<f64>| -> (DVector<f64>, DVector<f64>) {
            // f = -rd - G' (W .* rg - rc ./ s)
            let mut gterm = DVector::zeros(m);
            for i in 0..m {
                gterm[i] = w[i] * rg[i] - rc[i] / s[i];
            }
            let f = -&rd - problem.g.transpose() * gterm;
            let kinv = |v: &DVector<f64>| {
                linalg::solve_lower_transpose(l_k, &linalg::solve_lower(l_k, v))
            };
            if p_eq == 0 {
                return (kinv(&f), DVector::zeros(0));
            }
            // Schur complement on the equality block.
            let mut kinv_at = DMatrix::zeros(n, p_eq);
            for c in 0..p_eq {
                let col = kinv(&problem.a.row(c).transpose());
                kinv_at.set_column(c, &col);
            }
            let m_schur = &problem.a * &kinv_at;
            let rhs = &problem.a * kinv(&f) + &rp;
            let dy = m_schur
                .clone()
                .lu()
                .solve(&rhs)
                .unwrap_or_else(|| DVector::zeros(p_eq));
            let dx = kinv(&(&f - problem.a.transpose() * &dy));
            (dx, dy)
        };

        // Predictor (affine) direction.
        let rc_aff = DVector::from_fn(m, |i, _| s[i] * z[i]);
        let (dx_aff, _dy_aff) = solve_kkt(&rc_aff, &l_k);
        let gdx_aff = &problem.g * &dx_aff;
        let ds_aff = -&rg - &gdx_aff;
        let dz_aff = DVector::from_fn(m, |i, _| w[i] * (gdx_aff[i] + rg[i]) - rc_aff[i] / s[i]);

        let step_to_boundary = |v: &DVector<f64>, dv: &DVector<f64>| -> f64 {
            let mut alpha = 1.0f64;
            for i in 0..v.len() {
                if dv[i] < 0.0 {
                    alpha = alpha.min(-v[i] / dv[i]);
                }
            }
            alpha
        };
        let alpha_aff = step_to_boundary(&s, &ds_aff).min(step_to_boundary(&z, &dz_aff));
        let mu_aff = (0..m)
            .map(|i| (s[i] + alpha_aff * ds_aff[i]) * (z[i] + alpha_aff * dz_aff[i]))
            .sum::<f64>()
            / m as f64;
        let sigma = if mu > 0.0 {
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // Corrector direction.
        let rc = DVector::from_fn(m, |i, _| s[i] * z[i] + ds_aff[i] * dz_aff[i] - sigma * mu);
        let (dx, dy) = solve_kkt(&rc, &l_k);
        let ds = -&rg - &problem.g * &dx;
        let gdx = &problem.g * &dx;
        let dz = DVector::from_fn(m, |i, _| w[i] * (gdx[i] + rg[i]) - rc[i] / s[i]);

        let alpha = 0.99 * step_to_boundary(&s, &ds).min(step_to_boundary(&z, &dz));
        let alpha = alpha.min(1.0);
        x += alpha * &dx;
        y += alpha * &dy;
        s += alpha * &ds;
        z += alpha * &dz;
    }

    let (res, sol) = best.unwrap();
    if res <= 1e-8 {
        return Ok(sol);
    }
    Err(QpError::MaxIterations { residual: res })
}
