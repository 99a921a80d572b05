//! Entropic optimal transport between discrete measures.
//!
//! All potentials are stored on the supports of their measures (including
//! zero-weight points, where they are still well defined through the Sinkhorn
//! mapping). Exponentials are only taken after costs have been subtracted, in
//! max-shifted log-sum-exp form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::measure::{cost_between, DiscreteMeasure, Mode};
use crate::scalar::{by_precision, Scalar};
use crate::space::{squared_euclidean_between, PointCloud};

/// Stopping rule and warm start for the Sinkhorn iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornConfig<T: Scalar> {
    /// Sup-norm bound on successive potential updates. `None` uses
    /// `1e-9 * max(1, |c|_inf)` (looser in single precision).
    pub tolerance: Option<T>,
    pub max_iter: usize,
    pub warm_start: Option<DualPotentials<T>>,
}

impl<T: Scalar> Default for SinkhornConfig<T> {
    fn default() -> Self {
        Self { tolerance: None, max_iter: 100_000, warm_start: None }
    }
}

impl<T: Scalar> SinkhornConfig<T> {
    pub fn with_tolerance(tol: T) -> Self {
        Self { tolerance: Some(tol), ..Self::default() }
    }

    pub fn warm(&self, start: DualPotentials<T>) -> Self {
        Self { warm_start: Some(start), ..self.clone() }
    }

    pub(crate) fn tol_for(&self, cost_sup: T) -> T {
        self.tolerance.unwrap_or_else(|| by_precision::<T>(1e-9, 1e-4) * cost_sup.max(T::one()))
    }
}

/// Schrödinger potentials `(f, g)`; `f` lives on the first measure's support.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials<T: Scalar> {
    pub f: DVector<T>,
    pub g: DVector<T>,
    /// `<mu, f> = <nu, g>` has been enforced.
    pub normalized: bool,
    pub converged: bool,
    pub iterations: usize,
    /// Last sup-norm potential update.
    pub residual: T,
}

impl<T: Scalar> DualPotentials<T> {
    /// Turns a flagged non-converged result into an error.
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxIterExceeded { iterations: self.iterations, residual: self.residual.to_f64_lossy() })
        }
    }
}

/// Positive-weight indices and their log weights.
struct LogWeights<T> {
    idx: Vec<usize>,
    la: Vec<T>,
}

impl<T: Scalar> LogWeights<T> {
    fn new(w: &DVector<T>) -> Result<Self> {
        let mut idx = Vec::new();
        let mut la = Vec::new();
        for (i, &a) in w.iter().enumerate() {
            if a > T::zero() {
                idx.push(i);
                la.push(a.ln());
            }
        }
        if idx.is_empty() {
            return Err(Error::EmptySupport);
        }
        Ok(Self { idx, la })
    }
}

/// `out_j = -eps log sum_i a_i exp((h_i - c_ij)/eps)` over column `j` of `c`.
fn softmin_cols<T: Scalar>(c: &DMatrix<T>, lw: &LogWeights<T>, h: &DVector<T>, eps: T, out: &mut DVector<T>, z: &mut Vec<T>) {
    let inv = T::one() / eps;
    z.resize(lw.idx.len(), T::zero());
    for j in 0..c.ncols() {
        let col = c.column(j);
        let mut mx = T::min_value().unwrap();
        for (k, &i) in lw.idx.iter().enumerate() {
            let v = lw.la[k] + (h[i] - col[i]) * inv;
            z[k] = v;
            if v > mx {
                mx = v;
            }
        }
        let mut s = T::zero();
        for &v in z.iter() {
            s += (v - mx).exp();
        }
        out[j] = -eps * (mx + s.ln());
    }
}

fn sup_diff<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

fn check_eps<T: Scalar>(eps: T) -> Result<()> {
    if eps > T::zero() && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveEpsilon(eps.to_f64_lossy()))
    }
}

/// `T_eps(f, mu)(y) = -eps log sum_i a_i exp((f_i - c(x_i, y))/eps)` at each target `y`.
pub fn sinkhorn_map<T: Scalar>(f: &DVector<T>, mu: &DiscreteMeasure<T>, epsilon: T, targets: &PointCloud<T>) -> Result<DVector<T>> {
    check_eps(epsilon)?;
    if f.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), got: f.len() });
    }
    let c = squared_euclidean_between(mu.points(), targets)?;
    let lw = LogWeights::new(mu.weights())?;
    let mut out = DVector::zeros(targets.len());
    softmin_cols(&c, &lw, f, epsilon, &mut out, &mut Vec::new());
    Ok(out)
}

/// Sinkhorn iterations on an explicit cost (rows: `a`, columns: `b`).
pub(crate) fn schrodinger_with_cost<T: Scalar>(
    c: &DMatrix<T>,
    a: &DVector<T>,
    b: &DVector<T>,
    eps: T,
    cfg: &SinkhornConfig<T>,
) -> Result<DualPotentials<T>> {
    check_eps(eps)?;
    let (n, m) = (c.nrows(), c.ncols());
    if a.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.len() });
    }
    if b.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: b.len() });
    }
    let la = LogWeights::new(a)?;
    let lb = LogWeights::new(b)?;
    let ct = c.transpose();
    let sup = c.iter().fold(T::zero(), |s, &v| s.max(v));
    let tol = cfg.tol_for(sup);
    let mut z = Vec::new();

    let mut f = match &cfg.warm_start {
        Some(w) if w.f.len() == n && w.g.len() == m => w.f.clone(),
        _ => DVector::zeros(n),
    };
    let mut g = DVector::zeros(m);
    softmin_cols(c, &la, &f, eps, &mut g, &mut z);
    let mut f_new = DVector::zeros(n);
    let mut g_new = DVector::zeros(m);
    let mut residual = T::max_value().unwrap();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        softmin_cols(&ct, &lb, &g, eps, &mut f_new, &mut z);
        softmin_cols(c, &la, &f_new, eps, &mut g_new, &mut z);
        residual = sup_diff(&f_new, &f).max(sup_diff(&g_new, &g));
        std::mem::swap(&mut f, &mut f_new);
        std::mem::swap(&mut g, &mut g_new);
        if residual <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "Sinkhorn stopped after {iterations} iterations, update {:.3e} > {:.3e}",
            residual.to_f64_lossy(),
            tol.to_f64_lossy()
        );
    }
    let lambda = (b.dot(&g) - a.dot(&f)) * T::lit(0.5);
    f.add_scalar_mut(lambda);
    g.add_scalar_mut(-lambda);
    Ok(DualPotentials { f, g, normalized: true, converged, iterations, residual })
}

/// Solves the Schrödinger system between `mu` and `nu` and normalizes the
/// potentials so that `<mu, f> = <nu, g>`.
pub fn solve_schrodinger<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    epsilon: T,
    cfg: &SinkhornConfig<T>,
) -> Result<DualPotentials<T>> {
    let c = cost_between(mu, nu)?;
    schrodinger_with_cost(&c, mu.weights(), nu.weights(), epsilon, cfg)
}

/// Averaged fixed-point iteration `f <- (f + T(f, a)) / 2` on a square cost.
pub(crate) fn self_potential_with_cost<T: Scalar>(
    c: &DMatrix<T>,
    a: &DVector<T>,
    eps: T,
    cfg: &SinkhornConfig<T>,
) -> Result<DualPotentials<T>> {
    check_eps(eps)?;
    let n = c.nrows();
    if a.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.len() });
    }
    let la = LogWeights::new(a)?;
    let sup = c.iter().fold(T::zero(), |s, &v| s.max(v));
    let tol = cfg.tol_for(sup);
    let half = T::lit(0.5);
    let mut z = Vec::new();
    let mut f = match &cfg.warm_start {
        Some(w) if w.f.len() == n => w.f.clone(),
        _ => DVector::zeros(n),
    };
    let mut t = DVector::zeros(n);
    let mut residual = T::max_value().unwrap();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        softmin_cols(c, &la, &f, eps, &mut t, &mut z);
        residual = T::zero();
        for i in 0..n {
            let next = half * (f[i] + t[i]);
            residual = residual.max((next - f[i]).abs());
            f[i] = next;
        }
        if residual <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "self-potential iteration stopped after {iterations} iterations, update {:.3e}",
            residual.to_f64_lossy()
        );
    }
    Ok(DualPotentials { g: f.clone(), f, normalized: true, converged, iterations, residual })
}

/// The symmetric potential `f_mu` of `OT_eps(mu, mu)`, returned as `f = g`.
pub fn solve_self_potential<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    epsilon: T,
    cfg: &SinkhornConfig<T>,
) -> Result<DualPotentials<T>> {
    let c = cost_between(mu, mu)?;
    self_potential_with_cost(&c, mu.weights(), epsilon, cfg)
}

/// `sum_ij a_i b_j exp((f_i + g_j - c_ij)/eps)`.
pub(crate) fn plan_mass<T: Scalar>(c: &DMatrix<T>, a: &DVector<T>, b: &DVector<T>, f: &DVector<T>, g: &DVector<T>, eps: T) -> T {
    let inv = T::one() / eps;
    let mut total = T::zero();
    for j in 0..c.ncols() {
        if b[j] == T::zero() {
            continue;
        }
        let mut col = T::zero();
        for i in 0..c.nrows() {
            if a[i] > T::zero() {
                col += a[i] * ((f[i] + g[j] - c[(i, j)]) * inv).exp();
            }
        }
        total += b[j] * col;
    }
    total
}

/// Value of the entropic transport dual at given potentials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtValue<T> {
    /// `<a,f> + <b,g> - eps (<a x b, exp((f+g-c)/eps)> - 1)`.
    pub value: T,
    /// `<a,f> + <b,g>`.
    pub simplified: T,
    /// `value - simplified`; vanishes at exact convergence.
    pub gap: T,
}

pub(crate) fn dual_value<T: Scalar>(c: &DMatrix<T>, a: &DVector<T>, b: &DVector<T>, f: &DVector<T>, g: &DVector<T>, eps: T) -> OtValue<T> {
    let simplified = a.dot(f) + b.dot(g);
    let gap = -eps * (plan_mass(c, a, b, f, g, eps) - T::one());
    OtValue { value: simplified + gap, simplified, gap }
}

/// `OT_eps(mu, nu)` through its dual, together with the solved potentials.
pub fn ot_eps<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    epsilon: T,
    cfg: &SinkhornConfig<T>,
) -> Result<(OtValue<T>, DualPotentials<T>)> {
    let c = cost_between(mu, nu)?;
    let pot = schrodinger_with_cost(&c, mu.weights(), nu.weights(), epsilon, cfg)?;
    let v = dual_value(&c, mu.weights(), nu.weights(), &pot.f, &pot.g, epsilon);
    Ok((v, pot))
}

/// `OT_eps(mu, mu)` from the self potential.
pub fn ot_eps_self<T: Scalar>(mu: &DiscreteMeasure<T>, epsilon: T, cfg: &SinkhornConfig<T>) -> Result<(OtValue<T>, DualPotentials<T>)> {
    let c = cost_between(mu, mu)?;
    let pot = self_potential_with_cost(&c, mu.weights(), epsilon, cfg)?;
    let v = dual_value(&c, mu.weights(), mu.weights(), &pot.f, &pot.f, epsilon);
    Ok((v, pot))
}

/// Debiased divergence with the potentials it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceParts<T: Scalar> {
    pub value: T,
    pub cross: DualPotentials<T>,
    pub self_mu: DualPotentials<T>,
    pub self_nu: DualPotentials<T>,
}

impl<T: Scalar> DivergenceParts<T> {
    pub fn converged(&self) -> bool {
        self.cross.converged && self.self_mu.converged && self.self_nu.converged
    }
}

/// Warm starts for the three solves of a divergence evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceWarm<T: Scalar> {
    pub cross: Option<DualPotentials<T>>,
    pub self_mu: Option<DualPotentials<T>>,
    pub self_nu: Option<DualPotentials<T>>,
}

impl<T: Scalar> Default for DivergenceWarm<T> {
    fn default() -> Self {
        Self { cross: None, self_mu: None, self_nu: None }
    }
}

pub fn sinkhorn_divergence_parts<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    epsilon: T,
    cfg: &SinkhornConfig<T>,
    warm: &DivergenceWarm<T>,
) -> Result<DivergenceParts<T>> {
    let pick = |w: &Option<DualPotentials<T>>| match w {
        Some(p) => cfg.warm(p.clone()),
        None => cfg.clone(),
    };
    let (xy, cross) = ot_eps(mu, nu, epsilon, &pick(&warm.cross))?;
    let (xx, self_mu) = ot_eps_self(mu, epsilon, &pick(&warm.self_mu))?;
    let (yy, self_nu) = ot_eps_self(nu, epsilon, &pick(&warm.self_nu))?;
    let half = T::lit(0.5);
    let value = xy.value - half * xx.value - half * yy.value;
    Ok(DivergenceParts { value, cross, self_mu, self_nu })
}

/// `S_eps(mu, nu) = OT(mu, nu) - OT(mu, mu)/2 - OT(nu, nu)/2`.
pub fn sinkhorn_divergence<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    epsilon: T,
    cfg: &SinkhornConfig<T>,
) -> Result<T> {
    Ok(sinkhorn_divergence_parts(mu, nu, epsilon, cfg, &DivergenceWarm::default())?.value)
}

/// First variation `f_{mu,nu} - f_mu` of `S_eps(., nu)` at `mu`.
pub fn grad_seps_weights<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    epsilon: T,
    cfg: &SinkhornConfig<T>,
) -> Result<DVector<T>> {
    if mu.mode() != Mode::Eulerian {
        return Err(Error::InvalidMeasure("weight gradients need an Eulerian measure".into()));
    }
    let cross = solve_schrodinger(mu, nu, epsilon, cfg)?;
    let own = solve_self_potential(mu, epsilon, cfg)?;
    Ok(cross.f - own.f)
}

/// `out_i += scale * sum_j pi_ij * 2 (x_i - y_j)` for the plan of `(f, g)`.
#[allow(clippy::too_many_arguments)]
fn accumulate_plan_gradient<T: Scalar>(
    xs: &PointCloud<T>,
    ys: &PointCloud<T>,
    c: &DMatrix<T>,
    a: &DVector<T>,
    b: &DVector<T>,
    f: &DVector<T>,
    g: &DVector<T>,
    eps: T,
    scale: T,
    out: &mut DMatrix<T>,
) {
    let inv = T::one() / eps;
    let two = T::lit(2.0);
    for i in 0..xs.len() {
        if a[i] == T::zero() {
            continue;
        }
        let xi = xs.point(i);
        for j in 0..ys.len() {
            if b[j] == T::zero() {
                continue;
            }
            let pij = a[i] * b[j] * ((f[i] + g[j] - c[(i, j)]) * inv).exp();
            let yj = ys.point(j);
            for k in 0..xs.dim() {
                out[(i, k)] += scale * pij * two * (xi[k] - yj[k]);
            }
        }
    }
}

/// Gradient of `x -> S_eps(mu(x), nu)` in the particle positions given
/// converged potentials (envelope theorem on the dual).
pub(crate) fn position_gradient_from_parts<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    epsilon: T,
    parts: &DivergenceParts<T>,
) -> Result<DMatrix<T>> {
    let xs = mu.points();
    let mut grad = DMatrix::zeros(xs.len(), xs.dim());
    let c_xy = cost_between(mu, nu)?;
    accumulate_plan_gradient(xs, nu.points(), &c_xy, mu.weights(), nu.weights(), &parts.cross.f, &parts.cross.g, epsilon, T::one(), &mut grad);
    let c_xx = cost_between(mu, mu)?;
    let f = &parts.self_mu.f;
    accumulate_plan_gradient(xs, xs, &c_xx, mu.weights(), mu.weights(), f, f, epsilon, -T::one(), &mut grad);
    Ok(grad)
}

/// Per-particle gradients (rows) of `x -> S_eps(mu(x), nu)`.
pub fn grad_seps_positions<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    epsilon: T,
    cfg: &SinkhornConfig<T>,
) -> Result<DMatrix<T>> {
    if mu.mode() != Mode::Lagrangian {
        return Err(Error::InvalidMeasure("position gradients need a Lagrangian measure".into()));
    }
    if mu.points().dim() != nu.points().dim() {
        return Err(Error::DimensionMismatch { expected: mu.points().dim(), got: nu.points().dim() });
    }
    let parts = sinkhorn_divergence_parts(mu, nu, epsilon, cfg, &DivergenceWarm::default())?;
    position_gradient_from_parts(mu, nu, epsilon, &parts)
}

/// Sup-norm residuals `(|f - T(g, nu)|, |g - T(f, mu)|)` of the Schrödinger system.
pub fn schrodinger_residual<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    epsilon: T,
    pot: &DualPotentials<T>,
) -> Result<(T, T)> {
    let tf = sinkhorn_map(&pot.g, nu, epsilon, mu.points())?;
    let tg = sinkhorn_map(&pot.f, mu, epsilon, nu.points())?;
    Ok((sup_diff(&pot.f, &tf), sup_diff(&pot.g, &tg)))
}
