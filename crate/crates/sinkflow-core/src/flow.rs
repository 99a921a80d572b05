//! Implicit Euler integration of `b' + W b + P~ b = 0` on the unit sphere.
//!
//! One step solves `b - b_prev + tau (W b + p) = 0` with `b = K m`, `m >= 0`,
//! `p <= 0` and `m p = 0`. Eliminating `p` gives the complementarity problem
//! `m >= 0`, `(K + tau W K) m - b_prev >= 0`, complementary, in the preimage
//! `m`, which only needs products with `K`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{unembed, KernelSpace, PotentialOperator, PressureVector, SphereEmbedding};
use crate::lcp::{solve_lcp, LcpConfig, LcpProblem};
use crate::measure::{support_mask, DiscreteMeasure};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig<T> {
    pub tau: T,
    pub horizon: T,
    pub lcp: LcpConfig,
    /// Keep every `record_every`-th state (diagnostics are kept for all steps).
    pub record_every: usize,
}

impl<T: Scalar> FlowConfig<T> {
    pub fn new(tau: T, horizon: T) -> Self {
        Self { tau, horizon, lcp: LcpConfig::default(), record_every: 1 }
    }

    pub fn steps(&self) -> usize {
        step_count(self.tau, self.horizon)
    }
}

/// `ceil(T / tau)`, robust to `T` being a float multiple of `tau`.
pub fn step_count<T: Scalar>(tau: T, horizon: T) -> usize {
    let r = (horizon / tau).to_f64_lossy();
    let k = r.round();
    if (r - k).abs() < 1e-9 * r.max(1.0) {
        k as usize
    } else {
        r.ceil() as usize
    }
}

/// Precomputed resolvent data for a fixed potential and step.
#[derive(Debug, Clone)]
pub struct Resolvent<T: Scalar> {
    op: PotentialOperator<T>,
    tau: T,
    matrix: DMatrix<T>,
}

impl<T: Scalar> Resolvent<T> {
    pub fn new(op: &PotentialOperator<T>, tau: T) -> Result<Self> {
        if !(tau > T::zero()) {
            return Err(Error::InvalidMeasure("time step must be positive".into()));
        }
        Ok(Self { op: op.clone(), tau, matrix: op.resolvent_matrix(tau) })
    }

    pub fn operator(&self) -> &PotentialOperator<T> {
        &self.op
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn step(&self, prev: &SphereEmbedding<T>, cfg: &LcpConfig) -> Result<StepOutcome<T>> {
        let prob = LcpProblem { m: self.matrix.clone(), q: -prev.values() };
        let sol = solve_lcp(&prob, cfg, Some(prev.preimage()))?;
        let ks = prev.kernel_space();
        let b = ks.kernel().matrix() * &sol.m;
        let norm = sol.m.dot(&b).max(T::zero()).sqrt();
        if !(norm > T::zero()) {
            return Err(Error::EmbeddingInvariantViolated { invariant: "unit norm", residual: 1.0 });
        }
        let mut p = sol.w.map(|w| -w / self.tau);
        let inside: Vec<bool> = sol.m.iter().map(|&v| v > T::zero()).collect();
        for (i, &s) in inside.iter().enumerate() {
            if s || p[i] > T::zero() {
                p[i] = T::zero();
            }
        }
        let inv = T::one() / norm;
        let state = SphereEmbedding::from_parts(ks.clone(), b * inv, sol.m * inv);
        let support = support_mask(&state.weights());
        Ok(StepOutcome {
            state,
            pressure: PressureVector { p, support },
            pre_norm: norm,
            lcp_residual: sol.residual,
            lcp_converged: sol.converged,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T: Scalar> {
    pub state: SphereEmbedding<T>,
    pub pressure: PressureVector<T>,
    /// `|b|_{H_c}` before renormalization.
    pub pre_norm: T,
    pub lcp_residual: T,
    pub lcp_converged: bool,
}

/// One implicit Euler step from `b_prev`.
pub fn resolvent_step<T: Scalar>(
    b_prev: &SphereEmbedding<T>,
    op: &PotentialOperator<T>,
    tau: T,
    cfg: &LcpConfig,
) -> Result<StepOutcome<T>> {
    Resolvent::new(op, tau)?.step(b_prev, cfg)
}

/// Time series of a flow or a scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory<T: Scalar> {
    pub times: Vec<T>,
    pub measures: Vec<DiscreteMeasure<T>>,
    /// Embeddings (empty for Lagrangian runs).
    pub states: Vec<SphereEmbedding<T>>,
    pub energies: Vec<T>,
    /// One pressure per recorded frame (empty for Lagrangian runs).
    pub pressures: Vec<PressureVector<T>>,
    /// `|b_{k+1} - b_k|_{H_c} / tau` for every step.
    pub speed_norms: Vec<T>,
    /// Energy after every step, index 0 is the initial energy.
    pub step_energies: Vec<T>,
    /// Steps whose inner solver only met the relaxed bound.
    pub unconverged_steps: Vec<usize>,
}

impl<T: Scalar> FlowTrajectory<T> {
    pub(crate) fn empty() -> Self {
        Self {
            times: Vec::new(),
            measures: Vec::new(),
            states: Vec::new(),
            energies: Vec::new(),
            pressures: Vec::new(),
            speed_norms: Vec::new(),
            step_energies: Vec::new(),
            unconverged_steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn converged(&self) -> bool {
        self.unconverged_steps.is_empty()
    }
}

/// Integrates the flow from `b0` over `[0, horizon]`.
pub fn run_flow<T: Scalar>(b0: &SphereEmbedding<T>, op: &PotentialOperator<T>, cfg: &FlowConfig<T>) -> Result<FlowTrajectory<T>> {
    let res = Resolvent::new(op, cfg.tau)?;
    let steps = cfg.steps();
    let every = cfg.record_every.max(1);
    let mut traj = FlowTrajectory::empty();
    let record = |traj: &mut FlowTrajectory<T>, t: T, s: &SphereEmbedding<T>, p: PressureVector<T>| -> Result<()> {
        traj.times.push(t);
        traj.measures.push(unembed(s)?);
        traj.energies.push(op.energy(s));
        traj.states.push(s.clone());
        traj.pressures.push(p);
        Ok(())
    };
    let mut state = b0.clone();
    traj.step_energies.push(op.energy(&state));
    record(&mut traj, T::zero(), &state, PressureVector { p: DVector::zeros(state.len()), support: support_mask(&state.weights()) })?;
    for k in 1..=steps {
        let out = res.step(&state, &cfg.lcp)?;
        if !out.lcp_converged {
            traj.unconverged_steps.push(k);
        }
        traj.speed_norms.push(out.state.hc_distance(&state) / cfg.tau);
        traj.step_energies.push(op.energy(&out.state));
        state = out.state;
        if k % every == 0 || k == steps {
            record(&mut traj, cfg.tau * T::lit(k as f64), &state, out.pressure)?;
        }
    }
    Ok(traj)
}

/// `t -> |b_t^a - b_t^b|_{H_c}` for two flows driven by the same potential.
pub fn nonexpansiveness_check<T: Scalar>(
    a: &SphereEmbedding<T>,
    b: &SphereEmbedding<T>,
    op: &PotentialOperator<T>,
    tau: T,
    horizon: T,
    cfg: &LcpConfig,
) -> Result<Vec<T>> {
    if !same_space(a.kernel_space(), b.kernel_space()) {
        return Err(Error::InvalidMeasure("flows must share the kernel space".into()));
    }
    let res = Resolvent::new(op, tau)?;
    let mut x = a.clone();
    let mut y = b.clone();
    let mut out = vec![x.hc_distance(&y)];
    for _ in 0..step_count(tau, horizon) {
        x = res.step(&x, cfg)?.state;
        y = res.step(&y, cfg)?.state;
        out.push(x.hc_distance(&y));
    }
    Ok(out)
}

/// Checks that two embeddings live on the same kernel space.
fn same_space<T: Scalar>(a: &Arc<KernelSpace<T>>, b: &Arc<KernelSpace<T>>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}
