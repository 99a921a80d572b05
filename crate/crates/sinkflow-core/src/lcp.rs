//! Linear complementarity problems `m >= 0, w = M m + q >= 0, m^T w = 0`.
//!
//! The solver warms up with projected Gauss-Seidel sweeps, then runs a
//! principal pivoting (active-set Newton) iteration on `min(m, M m + q) = 0`:
//! the free set is solved exactly and single indices are exchanged, largest
//! violation first and by least index once a cycle budget is spent. The best
//! clamped iterate seen is kept, so a noisy pivot never degrades the answer.
//! If pivoting stalls, an interior point solve supplies a fresh active set.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LcpProblem<T: Scalar> {
    pub m: DMatrix<T>,
    pub q: DVector<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcpConfig {
    /// Target residual relative to `|q|_inf`.
    pub tol: f64,
    /// Residual (relative to `|q|_inf`) still accepted, with a warning, when
    /// `tol` is below what the conditioning of `M` allows.
    pub accept_tol: f64,
    /// Pivot budget as a multiple of the dimension.
    pub max_pivots_per_dim: usize,
    pub pgs_sweeps: usize,
    /// Iteration cap of the interior point fallback.
    pub ipm_iterations: usize,
    /// Over-relaxation factor of the Gauss-Seidel sweeps.
    pub omega: f64,
}

impl Default for LcpConfig {
    fn default() -> Self {
        Self { tol: 1e-10, accept_tol: 1e-6, max_pivots_per_dim: 4, pgs_sweeps: 10, ipm_iterations: 80, omega: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcpSolution<T: Scalar> {
    pub m: DVector<T>,
    pub w: DVector<T>,
    /// `|min(m, w)|_inf`.
    pub residual: T,
    pub iterations: usize,
    /// Residual met `tol`; otherwise it met only `accept_tol`.
    pub converged: bool,
}

/// `|min(m, M m + q)|_inf`.
pub fn complementarity_residual<T: Scalar>(prob: &LcpProblem<T>, m: &DVector<T>) -> T {
    let w = &prob.m * m + &prob.q;
    m.iter().zip(w.iter()).fold(T::zero(), |r, (&a, &b)| r.max(a.min(b).abs()))
}

fn pgs<T: Scalar>(prob: &LcpProblem<T>, m: &mut DVector<T>, sweeps: usize, omega: T) {
    let n = prob.q.len();
    for _ in 0..sweeps {
        for i in 0..n {
            let d = prob.m[(i, i)];
            if !(d > T::zero()) {
                continue;
            }
            let r = prob.q[i] + prob.m.row(i).transpose().dot(m);
            m[i] = (m[i] - omega * r / d).max(T::zero());
        }
    }
}

fn solve_free<T: Scalar>(prob: &LcpProblem<T>, free: &[bool]) -> Option<DVector<T>> {
    let idx: Vec<usize> = (0..free.len()).filter(|&i| free[i]).collect();
    let n = free.len();
    let mut out = DVector::zeros(n);
    if idx.is_empty() {
        return Some(out);
    }
    let k = idx.len();
    let a = DMatrix::from_fn(k, k, |r, c| prob.m[(idx[r], idx[c])]);
    let rhs = DVector::from_fn(k, |r, _| -prob.q[idx[r]]);
    let x = a.lu().solve(&rhs)?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    for (r, &i) in idx.iter().enumerate() {
        out[i] = x[r];
    }
    Some(out)
}

/// Single-index principal pivoting from the free set `free`; updates `best`
/// whenever the clamped iterate improves. Returns the number of pivots.
fn pivot<T: Scalar>(
    prob: &LcpProblem<T>,
    mut free: Vec<bool>,
    budget: usize,
    tol: T,
    best: &mut DVector<T>,
    best_res: &mut T,
) -> usize {
    let n = free.len();
    let greedy = n + 5;
    for k in 0..budget {
        let Some(x) = solve_free(prob, &free) else { return k };
        let w = &prob.m * &x + &prob.q;
        let clamped = x.map(|v| v.max(T::zero()));
        let r = complementarity_residual(prob, &clamped);
        if r < *best_res {
            *best_res = r;
            *best = clamped;
        }
        if *best_res <= tol {
            return k + 1;
        }
        let mtol = T::lit(1e-10) * x.amax().max(T::lit(f64::MIN_POSITIVE));
        let neg = |i: usize| free[i] && x[i] < -mtol;
        let viol = |i: usize| !free[i] && w[i] < -tol;
        let flip = if k < greedy {
            let worst_neg = (0..n).filter(|&i| neg(i)).min_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
            worst_neg.or_else(|| (0..n).filter(|&i| viol(i)).min_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap()))
        } else {
            (0..n).find(|&i| neg(i) || viol(i))
        };
        match flip {
            Some(i) => free[i] = !free[i],
            None => return k + 1,
        }
    }
    budget
}

/// Mehrotra predictor-corrector on `w = M m + q`, `m w = 0`, for monotone
/// `M`. Returns the last strictly positive pair and the iteration count.
fn interior_point<T: Scalar>(prob: &LcpProblem<T>, max_iter: usize) -> (DVector<T>, DVector<T>, usize) {
    let n = prob.q.len();
    let one = T::one();
    let scale = prob.q.amax().max(T::lit(f64::MIN_POSITIVE));
    let mut x = DVector::from_element(n, one);
    let mut w = (&prob.m * &x + &prob.q).map(|v| v.max(one));
    let max_step = |d: &DVector<T>, v: &DVector<T>| {
        d.iter().zip(v.iter()).filter(|(&di, _)| di < T::zero()).fold(one, |a, (&di, &vi)| a.min(-vi / di))
    };
    for it in 0..max_iter {
        let r = &prob.m * &x + &prob.q - &w;
        let gap = x.dot(&w) / T::lit(n as f64);
        if gap < T::lit(1e-15) * scale && r.amax() < T::lit(1e-13) * scale {
            return (x, w, it);
        }
        let mut a = prob.m.clone();
        for i in 0..n {
            a[(i, i)] += w[i] / x[i];
        }
        let lu = a.lu();
        // M dx - dw = -r, W dx + X dw = rc
        let solve = |rc: &DVector<T>| -> Option<(DVector<T>, DVector<T>)> {
            let rhs = DVector::from_fn(n, |i, _| -r[i] + rc[i] / x[i]);
            let dx = lu.solve(&rhs)?;
            let dw = DVector::from_fn(n, |i, _| (rc[i] - w[i] * dx[i]) / x[i]);
            Some((dx, dw))
        };
        let rc = DVector::from_fn(n, |i, _| -x[i] * w[i]);
        let Some((dx, dw)) = solve(&rc) else { break };
        let alpha = max_step(&dx, &x).min(max_step(&dw, &w));
        let gap_aff = (&x + &dx * alpha).dot(&(&w + &dw * alpha)) / T::lit(n as f64);
        let sigma = (gap_aff / gap).powi(3);
        let rc = DVector::from_fn(n, |i, _| -x[i] * w[i] - dx[i] * dw[i] + sigma * gap);
        let Some((dx, dw)) = solve(&rc) else { break };
        let alpha = T::lit(0.99) * max_step(&dx, &x).min(max_step(&dw, &w));
        if !(alpha > T::zero()) || dx.iter().chain(dw.iter()).any(|v| !v.is_finite()) {
            break;
        }
        x += dx * alpha;
        w += dw * alpha;
    }
    (x, w, max_iter)
}

/// Solves the LCP, optionally warm-started from `start`.
pub fn solve_lcp<T: Scalar>(prob: &LcpProblem<T>, cfg: &LcpConfig, start: Option<&DVector<T>>) -> Result<LcpSolution<T>> {
    let n = prob.q.len();
    if prob.m.nrows() != n || prob.m.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: prob.m.nrows() });
    }
    let scale = prob.q.amax();
    let tol = T::lit(cfg.tol) * scale;
    let accept = T::lit(cfg.accept_tol) * scale;
    if prob.q.iter().all(|&v| v >= T::zero()) {
        let m = DVector::zeros(n);
        return Ok(LcpSolution { w: prob.q.clone(), m, residual: T::zero(), iterations: 0, converged: true });
    }

    let mut m = match start {
        Some(s) if s.len() == n => s.map(|v| v.max(T::zero())),
        _ => DVector::zeros(n),
    };
    let mut best_res = complementarity_residual(prob, &m);
    let mut best = m.clone();
    let mut iterations = 0;

    if best_res > tol {
        pgs(prob, &mut m, cfg.pgs_sweeps, T::lit(cfg.omega));
        iterations += cfg.pgs_sweeps;
        let r = complementarity_residual(prob, &m);
        if r < best_res {
            best_res = r;
            best = m.clone();
        }
    }

    if best_res > tol {
        let mut free: Vec<bool> = m.iter().map(|&v| v > T::zero()).collect();
        if !free.iter().any(|&f| f) {
            free = prob.q.iter().map(|&v| v < T::zero()).collect();
        }
        let budget = cfg.max_pivots_per_dim.max(1) * n + 10;
        iterations += pivot(prob, free, budget, tol, &mut best, &mut best_res);
    }

    // Pivoting can cycle when the symmetric part of `M` is numerically
    // singular. The interior point path is insensitive to that and its limit
    // exposes the active set, from which pivoting usually needs no exchange.
    if best_res > tol {
        let (x, w, its) = interior_point(prob, cfg.ipm_iterations);
        iterations += its;
        let clamped = x.map(|v| v.max(T::zero()));
        let r = complementarity_residual(prob, &clamped);
        if r < best_res {
            best_res = r;
            best = clamped;
        }
        if best_res > tol {
            let free: Vec<bool> = x.iter().zip(w.iter()).map(|(&a, &b)| a > b).collect();
            iterations += pivot(prob, free, n + 10, tol, &mut best, &mut best_res);
        }
    }

    if best_res > tol {
        let mut polished = best.clone();
        pgs(prob, &mut polished, 20 * cfg.pgs_sweeps.max(1), T::lit(cfg.omega));
        iterations += 20 * cfg.pgs_sweeps.max(1);
        let r = complementarity_residual(prob, &polished);
        if r < best_res {
            best_res = r;
            best = polished;
        }
    }

    let converged = best_res <= tol;
    if !converged {
        if best_res <= accept {
            log::warn!(
                "complementarity residual {:.3e} above target {:.3e}, within acceptance bound",
                best_res.to_f64_lossy(),
                tol.to_f64_lossy()
            );
        } else {
            return Err(Error::LcpNotConverged { iterations, residual: best_res.to_f64_lossy() });
        }
    }
    let w = &prob.m * &best + &prob.q;
    Ok(LcpSolution { m: best, w, residual: best_res, iterations, converged })
}
