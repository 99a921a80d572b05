//! Minimizing-movement steps `mu_{k+1} in argmin 2 tau <mu, V> + S_eps(mu, mu_k)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::eot::{
    dual_value, position_gradient_from_parts, schrodinger_with_cost, self_potential_with_cost, sinkhorn_divergence,
    sinkhorn_divergence_parts, DivergenceWarm, DualPotentials, SinkhornConfig,
};
use crate::error::{Error, Result};
use crate::flow::{run_flow, step_count, FlowConfig, FlowTrajectory};
use crate::geometry::{embed, KernelSpace, PotentialOperator, PressureVector, SphereEmbedding};
use crate::lcp::LcpConfig;
use crate::measure::{support_mask, DiscreteMeasure, Mode};
use crate::potential::Potential;
use crate::scalar::Scalar;
use crate::space::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Eulerian,
    Lagrangian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SjkoConfig<T: Scalar> {
    pub tau: T,
    /// Eulerian: bound on `-(g - <mu, g>)`. Lagrangian: bound on the
    /// sup-norm of the position gradient.
    pub inner_tol: T,
    pub inner_max_iter: usize,
    pub scheme: Scheme,
    pub accel: bool,
    pub sinkhorn: SinkhornConfig<T>,
}

impl<T: Scalar> SjkoConfig<T> {
    pub fn new(tau: T, scheme: Scheme) -> Self {
        let inner_tol = match scheme {
            Scheme::Eulerian => T::lit(1e-6),
            Scheme::Lagrangian => T::lit(1e-10),
        };
        Self {
            tau,
            inner_tol,
            inner_max_iter: 20_000,
            scheme,
            accel: true,
            sinkhorn: SinkhornConfig::with_tolerance(T::lit(1e-12)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics<T> {
    pub iterations: usize,
    pub converged: bool,
    /// Final objective `2 tau <mu, V> + S_eps(mu, mu_prev)`.
    pub objective: T,
    /// Eulerian: `min_i (g_i - <mu, g>)`. Lagrangian: position-gradient sup-norm.
    pub optimality: T,
    /// Largest positive part removed when recovering the pressure.
    pub pressure_clip: T,
    pub restarts: usize,
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn simplex_project<T: Scalar>(v: &DVector<T>) -> DVector<T> {
    let n = v.len();
    if n == 0 {
        return v.clone();
    }
    let mut u: Vec<T> = v.iter().copied().collect();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut css = T::zero();
    let mut theta = T::zero();
    for (k, &uk) in u.iter().enumerate() {
        css += uk;
        let t = (css - T::one()) / T::lit((k + 1) as f64);
        if uk - t > T::zero() {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(T::zero()))
}

fn mean_potential<T: Scalar>(pts: &PointCloud<T>, v: &dyn Potential<T>) -> T {
    pts.iter().fold(T::zero(), |s, p| s + v.value(p)) / T::lit(pts.len() as f64)
}

/// `2 tau <mu, V> + S_eps(mu, mu_prev)`.
pub fn sjko_objective<T: Scalar>(
    candidate: &DiscreteMeasure<T>,
    prev: &DiscreteMeasure<T>,
    v: &dyn Potential<T>,
    tau: T,
    epsilon: T,
    cfg: &SinkhornConfig<T>,
) -> Result<T> {
    let energy = match candidate.mode() {
        Mode::Eulerian => candidate.integrate(&v.values_on(candidate.points())),
        Mode::Lagrangian => mean_potential(candidate.points(), v),
    };
    Ok(T::lit(2.0) * tau * energy + sinkhorn_divergence(candidate, prev, epsilon, cfg)?)
}

/// Objective and gradient in the weights for a fixed previous measure.
struct EulerianModel<'a, T: Scalar> {
    cost: &'a DMatrix<T>,
    prev: &'a DVector<T>,
    v: &'a DVector<T>,
    tau: T,
    eps: T,
    ot_prev: T,
    cfg: SinkhornConfig<T>,
    warm_cross: Option<DualPotentials<T>>,
    warm_self: Option<DualPotentials<T>>,
    evals: usize,
}

struct Eval<T: Scalar> {
    value: T,
    grad: DVector<T>,
}

impl<'a, T: Scalar> EulerianModel<'a, T> {
    fn eval(&mut self, a: &DVector<T>) -> Result<Eval<T>> {
        self.evals += 1;
        let cfg_c = match &self.warm_cross {
            Some(w) => self.cfg.warm(w.clone()),
            None => self.cfg.clone(),
        };
        let cross = schrodinger_with_cost(self.cost, a, self.prev, self.eps, &cfg_c)?;
        let cfg_s = match &self.warm_self {
            Some(w) => self.cfg.warm(w.clone()),
            None => self.cfg.clone(),
        };
        let own = self_potential_with_cost(self.cost, a, self.eps, &cfg_s)?;
        let xy = dual_value(self.cost, a, self.prev, &cross.f, &cross.g, self.eps).value;
        let xx = dual_value(self.cost, a, a, &own.f, &own.f, self.eps).value;
        let half = T::lit(0.5);
        let two_tau = T::lit(2.0) * self.tau;
        let value = two_tau * a.dot(self.v) + xy - half * xx - half * self.ot_prev;
        let grad = self.v * two_tau + &cross.f - &own.f;
        self.warm_cross = Some(cross);
        self.warm_self = Some(own);
        Ok(Eval { value, grad })
    }
}

/// `min_i (g_i - <a, g>)` for `g = grad / (2 tau)`.
fn optimality<T: Scalar>(a: &DVector<T>, grad: &DVector<T>, tau: T) -> T {
    let g = grad / (T::lit(2.0) * tau);
    let mean = a.dot(&g);
    g.iter().fold(T::max_value().unwrap(), |m, &x| m.min(x - mean))
}

/// Largest `beta <= beta0` keeping `a + beta (a - a_old) >= 0`.
fn feasible_momentum<T: Scalar>(a: &DVector<T>, a_old: &DVector<T>, beta0: T) -> T {
    let mut beta = beta0;
    for i in 0..a.len() {
        let d = a[i] - a_old[i];
        if d < T::zero() {
            beta = beta.min(a[i] / -d);
        }
    }
    beta.max(T::zero())
}

/// Result of an Eulerian step.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerianStep<T: Scalar> {
    pub measure: DiscreteMeasure<T>,
    pub pressure: PressureVector<T>,
    pub diagnostics: StepDiagnostics<T>,
    /// Final cross potentials `(f_{mu', mu_prev}, f_{mu_prev, mu'})`.
    pub cross: DualPotentials<T>,
}

/// One Eulerian step by accelerated projected gradient descent on the simplex.
pub fn sjko_step_eulerian<T: Scalar>(
    prev: &DiscreteMeasure<T>,
    v: &DVector<T>,
    epsilon: T,
    cfg: &SjkoConfig<T>,
) -> Result<EulerianStep<T>> {
    let space = prev.space().ok_or_else(|| Error::InvalidMeasure("Eulerian step needs an Eulerian measure".into()))?;
    if v.len() != prev.len() {
        return Err(Error::DimensionMismatch { expected: prev.len(), got: v.len() });
    }
    if !(cfg.tau > T::zero()) {
        return Err(Error::InvalidMeasure("time step must be positive".into()));
    }
    let cost = space.cost().entries();
    let a_prev = prev.weights();
    let own_prev = self_potential_with_cost(cost, a_prev, epsilon, &cfg.sinkhorn)?;
    let ot_prev = dual_value(cost, a_prev, a_prev, &own_prev.f, &own_prev.f, epsilon).value;
    let mut model = EulerianModel {
        cost,
        prev: a_prev,
        v,
        tau: cfg.tau,
        eps: epsilon,
        ot_prev,
        cfg: cfg.sinkhorn.clone(),
        warm_cross: None,
        warm_self: Some(own_prev),
        evals: 0,
    };

    let mut a = a_prev.clone();
    let mut fa = model.eval(&a)?;
    let mut step = initial_step(&mut model, &a, &fa)?;
    let mut y = a.clone();
    let mut fy = Eval { value: fa.value, grad: fa.grad.clone() };
    let mut t = T::one();
    let mut restarts = 0;
    let mut iterations = 0;
    let mut opt = optimality(&a, &fa.grad, cfg.tau);
    let slack = T::lit(1e-13) * (T::one() + fa.value.abs());
    let tiny = T::lit(1e-30);

    while opt < -cfg.inner_tol && iterations < cfg.inner_max_iter {
        iterations += 1;
        // backtracking on the quadratic upper model at y
        let (an, fan) = loop {
            let cand = simplex_project(&(&y - &fy.grad * step));
            let fc = model.eval(&cand)?;
            let d = &cand - &y;
            if fc.value <= fy.value + fy.grad.dot(&d) + d.norm_squared() / (T::lit(2.0) * step) + slack || step < tiny {
                break (cand, fc);
            }
            step *= T::lit(0.5);
        };
        if fan.value > fa.value + slack {
            // momentum overshoot: restart from the current iterate
            restarts += 1;
            t = T::one();
            if y == a {
                // a plain projected step failed to decrease; keep shrinking
                step *= T::lit(0.5);
                if step < tiny {
                    break;
                }
            }
            y = a.clone();
            fy = Eval { value: fa.value, grad: fa.grad.clone() };
            continue;
        }
        let a_old = std::mem::replace(&mut a, an);
        fa = fan;
        opt = optimality(&a, &fa.grad, cfg.tau);
        if cfg.accel {
            let tn = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) * T::lit(0.5);
            let beta = feasible_momentum(&a, &a_old, (t - T::one()) / tn);
            t = tn;
            if beta > T::zero() {
                y = &a + (&a - &a_old) * beta;
                fy = model.eval(&y)?;
            } else {
                y = a.clone();
                fy = Eval { value: fa.value, grad: fa.grad.clone() };
            }
        } else {
            y = a.clone();
            fy = Eval { value: fa.value, grad: fa.grad.clone() };
        }
        step *= T::lit(1.5);
    }

    let converged = opt >= -cfg.inner_tol;
    if !converged {
        log::warn!(
            "Eulerian step stopped after {iterations} iterations with optimality {:.3e}",
            opt.to_f64_lossy()
        );
    }
    let g = &fa.grad / (T::lit(2.0) * cfg.tau);
    let mean = a.dot(&g);
    let support = support_mask(&a);
    let mut clip = T::zero();
    let p = DVector::from_fn(a.len(), |i, _| {
        let raw = mean - g[i];
        if support[i] {
            clip = clip.max(raw.abs());
            T::zero()
        } else {
            clip = clip.max(raw.max(T::zero()));
            raw.min(T::zero())
        }
    });
    let cross = model.warm_cross.take().expect("evaluated at least once");
    // the last evaluation may have been at the extrapolated point
    let cross = if y == a { cross } else { schrodinger_with_cost(cost, &a, a_prev, epsilon, &cfg.sinkhorn.warm(cross))? };
    let measure = DiscreteMeasure::eulerian(space.clone(), a)?;
    Ok(EulerianStep {
        measure,
        pressure: PressureVector { p, support },
        diagnostics: StepDiagnostics { iterations, converged, objective: fa.value, optimality: opt, pressure_clip: clip, restarts },
        cross,
    })
}

/// `1/L` with `L` from a few power iterations on finite-difference
/// Hessian-vector products along mass-zero directions inside the support.
fn initial_step<T: Scalar>(model: &mut EulerianModel<'_, T>, a: &DVector<T>, fa: &Eval<T>) -> Result<T> {
    let support = support_mask(a);
    let k = support.iter().filter(|&&s| s).count();
    if k < 2 {
        return Ok(T::one());
    }
    let mut v = DVector::from_fn(a.len(), |i, _| if support[i] { T::lit(((i * 7919) % 13) as f64 - 6.0) } else { T::zero() });
    let mut lambda = T::one();
    for _ in 0..6 {
        center_on(&mut v, &support);
        let nv = v.norm();
        if !(nv > T::zero()) {
            break;
        }
        v /= nv;
        let amin = (0..a.len()).filter(|&i| support[i]).fold(T::max_value().unwrap(), |m, i| m.min(a[i]));
        let h = amin * T::lit(1e-3);
        let probe = a + &v * h;
        let fp = model.eval(&probe)?;
        let mut hv = (&fp.grad - &fa.grad) / h;
        center_on(&mut hv, &support);
        lambda = hv.norm();
        v = hv;
    }
    Ok(T::one() / lambda.max(T::lit(1e-12)))
}

fn center_on<T: Scalar>(v: &mut DVector<T>, mask: &[bool]) {
    let k = mask.iter().filter(|&&s| s).count();
    let mean = (0..v.len()).filter(|&i| mask[i]).fold(T::zero(), |s, i| s + v[i]) / T::lit(k as f64);
    for i in 0..v.len() {
        v[i] = if mask[i] { v[i] - mean } else { T::zero() };
    }
}

/// Result of a Lagrangian step.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianStep<T: Scalar> {
    pub measure: DiscreteMeasure<T>,
    pub diagnostics: StepDiagnostics<T>,
}

struct LagrangianEval<T: Scalar> {
    value: T,
    grad: DMatrix<T>,
    warm: DivergenceWarm<T>,
}

fn lagrangian_eval<T: Scalar>(
    x: &DiscreteMeasure<T>,
    prev: &DiscreteMeasure<T>,
    v: &dyn Potential<T>,
    eps: T,
    cfg: &SjkoConfig<T>,
    warm: &DivergenceWarm<T>,
) -> Result<LagrangianEval<T>> {
    let parts = sinkhorn_divergence_parts(x, prev, eps, &cfg.sinkhorn, warm)?;
    let mut grad = position_gradient_from_parts(x, prev, eps, &parts)?;
    let pts = x.points();
    let n = T::lit(pts.len() as f64);
    let coef = T::lit(2.0) * cfg.tau / n;
    let mut gv = vec![T::zero(); pts.dim()];
    for i in 0..pts.len() {
        v.gradient(pts.point(i), &mut gv);
        for k in 0..pts.dim() {
            grad[(i, k)] += coef * gv[k];
        }
    }
    let value = T::lit(2.0) * cfg.tau * mean_potential(pts, v) + parts.value;
    let warm = DivergenceWarm { cross: Some(parts.cross), self_mu: Some(parts.self_mu), self_nu: Some(parts.self_nu) };
    Ok(LagrangianEval { value, grad, warm })
}

fn shifted<T: Scalar>(pts: &PointCloud<T>, dir: &DMatrix<T>, s: T) -> PointCloud<T> {
    let mut out = pts.clone();
    for i in 0..pts.len() {
        let p = out.point_mut(i);
        for k in 0..p.len() {
            p[k] -= s * dir[(i, k)];
        }
    }
    out
}

fn extrapolated<T: Scalar>(x: &PointCloud<T>, x_old: &PointCloud<T>, beta: T) -> PointCloud<T> {
    let coords = x.coords().iter().zip(x_old.coords()).map(|(&a, &b)| a + beta * (a - b)).collect();
    PointCloud::new(x.dim(), coords).expect("same shape")
}

/// One Lagrangian step by Nesterov-accelerated gradient descent on positions
/// with backtracking and monotone restarts.
pub fn sjko_step_lagrangian<T: Scalar>(
    prev: &DiscreteMeasure<T>,
    v: &dyn Potential<T>,
    epsilon: T,
    cfg: &SjkoConfig<T>,
) -> Result<LagrangianStep<T>> {
    if prev.mode() != Mode::Lagrangian {
        return Err(Error::InvalidMeasure("Lagrangian step needs a Lagrangian measure".into()));
    }
    let n = prev.len();
    let mut x = prev.clone();
    let mut fx = lagrangian_eval(&x, prev, v, epsilon, cfg, &DivergenceWarm::default())?;
    let mut y = x.clone();
    let mut fy = LagrangianEval { value: fx.value, grad: fx.grad.clone(), warm: fx.warm.clone() };
    let mut step = T::lit(n as f64) * T::lit(0.5);
    let mut t = T::one();
    let mut restarts = 0;
    let mut iterations = 0;
    let mut gnorm = fx.grad.amax();
    let slack = T::lit(1e-14) * (T::one() + fx.value.abs());
    let tiny = T::lit(1e-30);
    while gnorm > cfg.inner_tol && iterations < cfg.inner_max_iter {
        iterations += 1;
        let g2 = fy.grad.norm_squared();
        let (xn, fxn) = loop {
            let cand = y.with_positions(shifted(y.points(), &fy.grad, step))?;
            let fc = lagrangian_eval(&cand, prev, v, epsilon, cfg, &fy.warm)?;
            if fc.value <= fy.value - step * T::lit(0.5) * g2 + slack || step < tiny {
                break (cand, fc);
            }
            step *= T::lit(0.5);
        };
        if fxn.value > fx.value + slack {
            restarts += 1;
            t = T::one();
            let at_x = y.points() == x.points();
            y = x.clone();
            fy = LagrangianEval { value: fx.value, grad: fx.grad.clone(), warm: fx.warm.clone() };
            if at_x {
                step *= T::lit(0.5);
                if step < tiny {
                    break;
                }
            }
            continue;
        }
        let x_old = std::mem::replace(&mut x, xn);
        fx = fxn;
        gnorm = fx.grad.amax();
        if cfg.accel {
            let tn = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) * T::lit(0.5);
            let beta = (t - T::one()) / tn;
            t = tn;
            y = x.with_positions(extrapolated(x.points(), x_old.points(), beta))?;
            fy = lagrangian_eval(&y, prev, v, epsilon, cfg, &fx.warm)?;
        } else {
            y = x.clone();
            fy = LagrangianEval { value: fx.value, grad: fx.grad.clone(), warm: fx.warm.clone() };
        }
        step *= T::lit(1.5);
    }
    let converged = gnorm <= cfg.inner_tol;
    if !converged {
        log::warn!("Lagrangian step stopped after {iterations} iterations, gradient {:.3e}", gnorm.to_f64_lossy());
    }
    Ok(LagrangianStep {
        measure: x,
        diagnostics: StepDiagnostics { iterations, converged, objective: fx.value, optimality: gnorm, pressure_clip: T::zero(), restarts },
    })
}

/// Runs `ceil(T / tau)` steps. Eulerian runs record embeddings when `ks` is given.
pub fn run_sjko<T: Scalar>(
    mu0: &DiscreteMeasure<T>,
    v: &dyn Potential<T>,
    epsilon: T,
    cfg: &SjkoConfig<T>,
    horizon: T,
    ks: Option<&Arc<KernelSpace<T>>>,
) -> Result<FlowTrajectory<T>> {
    let steps = step_count(cfg.tau, horizon);
    let mut traj = FlowTrajectory::empty();
    match cfg.scheme {
        Scheme::Eulerian => {
            let vv = v.values_on(mu0.points());
            let embed_cfg = SinkhornConfig::default();
            let mut mu = mu0.clone();
            let mut emb = match ks {
                Some(k) => Some(embed(&mu, k, &embed_cfg)?),
                None => None,
            };
            let push = |traj: &mut FlowTrajectory<T>, t: T, mu: &DiscreteMeasure<T>, e: &Option<SphereEmbedding<T>>, p: PressureVector<T>| {
                traj.times.push(t);
                traj.energies.push(mu.integrate(&vv));
                traj.step_energies.push(mu.integrate(&vv));
                traj.measures.push(mu.clone());
                if let Some(e) = e {
                    traj.states.push(e.clone());
                }
                traj.pressures.push(p);
            };
            push(&mut traj, T::zero(), &mu, &emb, PressureVector::zeros(mu.len()));
            for k in 1..=steps {
                let out = sjko_step_eulerian(&mu, &vv, epsilon, cfg)?;
                if !out.diagnostics.converged {
                    traj.unconverged_steps.push(k);
                }
                mu = out.measure;
                let next = match ks {
                    Some(kk) => Some(embed(&mu, kk, &embed_cfg)?),
                    None => None,
                };
                if let (Some(a), Some(b)) = (&emb, &next) {
                    traj.speed_norms.push(a.hc_distance(b) / cfg.tau);
                }
                emb = next;
                push(&mut traj, cfg.tau * T::lit(k as f64), &mu, &emb, out.pressure);
            }
        }
        Scheme::Lagrangian => {
            let mut mu = mu0.clone();
            let push = |traj: &mut FlowTrajectory<T>, t: T, mu: &DiscreteMeasure<T>| {
                let e = mean_potential(mu.points(), v);
                traj.times.push(t);
                traj.energies.push(e);
                traj.step_energies.push(e);
                traj.measures.push(mu.clone());
            };
            push(&mut traj, T::zero(), &mu);
            for k in 1..=steps {
                let out = sjko_step_lagrangian(&mu, v, epsilon, cfg)?;
                if !out.diagnostics.converged {
                    traj.unconverged_steps.push(k);
                }
                mu = out.measure;
                push(&mut traj, cfg.tau * T::lit(k as f64), &mu);
            }
        }
    }
    Ok(traj)
}

/// `tau -> sup_{t <= T} |b^tau(t) - b^ref(t)|_{H_c}` with `b^tau` the
/// piecewise-constant interpolation of the Eulerian scheme and `b^ref` the
/// implicit flow at `reference_tau`.
#[allow(clippy::too_many_arguments)]
pub fn compare_sjko_to_flow<T: Scalar>(
    mu0: &DiscreteMeasure<T>,
    v: &dyn Potential<T>,
    ks: &Arc<KernelSpace<T>>,
    taus: &[T],
    horizon: T,
    reference_tau: T,
    template: &SjkoConfig<T>,
    lcp: &LcpConfig,
) -> Result<Vec<(T, T)>> {
    let vv = v.values_on(mu0.points());
    let op = PotentialOperator::new(ks, vv)?;
    let b0 = embed(mu0, ks, &SinkhornConfig::default())?;
    let mut fcfg = FlowConfig::new(reference_tau, horizon);
    fcfg.lcp = *lcp;
    let reference = run_flow(&b0, &op, &fcfg)?;
    let mut table = Vec::with_capacity(taus.len());
    for &tau in taus {
        let cfg = SjkoConfig { tau, scheme: Scheme::Eulerian, ..template.clone() };
        let traj = run_sjko(mu0, v, ks.epsilon(), &cfg, horizon, Some(ks))?;
        let mut sup = T::zero();
        for (j, t) in reference.times.iter().enumerate() {
            let k = (t.to_f64_lossy() / tau.to_f64_lossy() + 1e-9).floor() as usize;
            let k = k.min(traj.states.len() - 1);
            sup = sup.max(traj.states[k].hc_distance(&reference.states[j]));
        }
        table.push((tau, sup));
    }
    Ok(table)
}
