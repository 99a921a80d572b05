//! The embedding `b = exp(-f_mu / eps)` of measures into the kernel Hilbert
//! space, and the operators built on it.
//!
//! An embedding always carries its preimage `m = K^{-1} b`. For an embedded
//! measure this is known exactly, `m = mu / b`, because the self potential
//! solves `b = K (mu / b)`; carrying it avoids solving with `K`, which is
//! numerically singular for small `eps` on fine grids.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::eot::{self_potential_with_cost, solve_schrodinger, SinkhornConfig};
use crate::error::{Error, Result};
use crate::measure::{cost_between, support_mask, DiscreteMeasure};
use crate::scalar::{by_precision, Scalar};
use crate::space::{gibbs_kernel, DiscreteSpace, GibbsKernel};

/// A space together with its Gibbs kernel at a fixed `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpace<T: Scalar> {
    space: Arc<DiscreteSpace<T>>,
    kernel: GibbsKernel<T>,
}

impl<T: Scalar> KernelSpace<T> {
    pub fn new(space: Arc<DiscreteSpace<T>>, epsilon: T) -> Result<Arc<Self>> {
        let kernel = gibbs_kernel(space.cost(), epsilon)?;
        Ok(Arc::new(Self { space, kernel }))
    }

    pub fn space(&self) -> &Arc<DiscreteSpace<T>> {
        &self.space
    }

    pub fn kernel(&self) -> &GibbsKernel<T> {
        &self.kernel
    }

    pub fn epsilon(&self) -> T {
        self.kernel.epsilon()
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    fn owns(&self, mu: &DiscreteMeasure<T>) -> bool {
        match mu.space() {
            Some(s) => Arc::ptr_eq(s, &self.space) || s.points() == self.space.points(),
            None => false,
        }
    }
}

/// Point `b = B(mu)` on the unit sphere of the kernel Hilbert space, with its
/// nonnegative preimage `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereEmbedding<T: Scalar> {
    ks: Arc<KernelSpace<T>>,
    b: DVector<T>,
    m: DVector<T>,
}

fn norm_tol<T: Scalar>() -> T {
    by_precision(1e-8, 1e-3)
}

/// Embeds an Eulerian measure.
pub fn embed<T: Scalar>(mu: &DiscreteMeasure<T>, ks: &Arc<KernelSpace<T>>, cfg: &SinkhornConfig<T>) -> Result<SphereEmbedding<T>> {
    if !ks.owns(mu) {
        return Err(Error::InvalidMeasure("measure does not live on the kernel's space".into()));
    }
    let eps = ks.epsilon();
    let mut cfg = cfg.clone();
    if cfg.tolerance.is_none() {
        cfg.tolerance = Some(by_precision::<T>(1e-11, 1e-5) * eps.min(T::one()));
    }
    let pot = self_potential_with_cost(ks.space.cost().entries(), mu.weights(), eps, &cfg)?;
    let b = pot.f.map(|f| (-f / eps).exp());
    if b.iter().any(|&x| !(x > T::zero())) {
        return Err(Error::EmbeddingInvariantViolated { invariant: "positivity", residual: 0.0 });
    }
    let m = mu.weights().component_div(&b);
    let emb = SphereEmbedding { ks: ks.clone(), b, m };
    let residual = (ks.kernel.preimage_norm_sq(&emb.m).sqrt() - T::one()).abs();
    if residual > norm_tol() {
        return Err(Error::EmbeddingInvariantViolated { invariant: "unit norm", residual: residual.to_f64_lossy() });
    }
    Ok(emb)
}

/// `B^{-1}(b) = b * K^{-1} b`.
pub fn unembed<T: Scalar>(emb: &SphereEmbedding<T>) -> Result<DiscreteMeasure<T>> {
    let min = emb.m.min();
    if min < -T::lit(1e-6) {
        return Err(Error::NotInCone { min_entry: min.to_f64_lossy() });
    }
    let w = emb.b.component_mul(&emb.m.map(|x| x.max(T::zero())));
    let total = w.sum();
    let drift = (total - T::one()).abs();
    if drift > by_precision::<T>(1e-8, 1e-3) {
        return Err(Error::EmbeddingInvariantViolated { invariant: "unit mass", residual: drift.to_f64_lossy() });
    }
    DiscreteMeasure::eulerian(emb.ks.space.clone(), w / total)
}

impl<T: Scalar> SphereEmbedding<T> {
    /// Builds an embedding from kernel values by solving `K m = b`. Only
    /// meaningful when `K` is well conditioned.
    pub fn from_values(ks: &Arc<KernelSpace<T>>, b: DVector<T>) -> Result<Self> {
        let m = ks.kernel.hc_solve(&b)?;
        Self::checked(ks, b, m)
    }

    /// Builds an embedding from a preimage, `b = K m`.
    pub fn from_preimage(ks: &Arc<KernelSpace<T>>, m: DVector<T>) -> Result<Self> {
        let b = ks.kernel.hc_apply(&m)?;
        Self::checked(ks, b, m)
    }

    fn checked(ks: &Arc<KernelSpace<T>>, b: DVector<T>, m: DVector<T>) -> Result<Self> {
        let min = m.min();
        if min < -T::lit(1e-6) {
            return Err(Error::NotInCone { min_entry: min.to_f64_lossy() });
        }
        let residual = (m.dot(&b).max(T::zero()).sqrt() - T::one()).abs();
        if residual > norm_tol() {
            return Err(Error::EmbeddingInvariantViolated { invariant: "unit norm", residual: residual.to_f64_lossy() });
        }
        if b.iter().any(|&x| !(x > T::zero())) {
            return Err(Error::EmbeddingInvariantViolated { invariant: "positivity", residual: 0.0 });
        }
        Ok(Self { ks: ks.clone(), b, m })
    }

    /// Trusted constructor for solver output.
    pub(crate) fn from_parts(ks: Arc<KernelSpace<T>>, b: DVector<T>, m: DVector<T>) -> Self {
        Self { ks, b, m }
    }

    pub fn values(&self) -> &DVector<T> {
        &self.b
    }

    /// `m = K^{-1} b`.
    pub fn preimage(&self) -> &DVector<T> {
        &self.m
    }

    pub fn kernel_space(&self) -> &Arc<KernelSpace<T>> {
        &self.ks
    }

    pub fn epsilon(&self) -> T {
        self.ks.epsilon()
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// `b * m`, the weights of the embedded measure (not renormalized).
    pub fn weights(&self) -> DVector<T> {
        self.b.component_mul(&self.m)
    }

    /// `|b|_{H_c}`.
    pub fn hc_norm(&self) -> T {
        self.m.dot(&self.b).max(T::zero()).sqrt()
    }

    /// `|b - b'|_{H_c}`, from the preimages.
    pub fn hc_distance(&self, other: &Self) -> T {
        let d = &self.m - &other.m;
        self.ks.kernel.preimage_norm_sq(&d).sqrt()
    }

    /// `<<b, psi>> = m^T psi`.
    pub fn pairing(&self, psi: &DVector<T>) -> T {
        self.m.dot(psi)
    }

    /// `K_mu = diag(b)^{-1} K diag(m)`.
    pub fn k_mu_matrix(&self) -> DMatrix<T> {
        let k = self.ks.kernel.matrix();
        DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)] * self.m[j] / self.b[i])
    }

    /// `H_mu[sigma] = b^{-1} K (b^{-1} sigma)`.
    pub fn h_mu_apply(&self, sigma: &DVector<T>) -> Result<DVector<T>> {
        let s = sigma.component_div(&self.b);
        Ok(self.ks.kernel.hc_apply(&s)?.component_div(&self.b))
    }

    /// `g_mu(sigma, sigma) = eps/2 <sigma, (Id - K_mu^2)^{-1} H_mu[sigma]>`.
    pub fn metric_g_mu(&self, sigma: &DVector<T>) -> Result<T> {
        check_len(sigma, self.len())?;
        check_mass_zero(sigma)?;
        let h = self.h_mu_apply(sigma)?;
        let k = self.k_mu_matrix();
        let a = DMatrix::identity(self.len(), self.len()) - &k * &k;
        let u = solve_mod_constants(a, &self.weights(), h)?;
        Ok(self.epsilon() * T::lit(0.5) * sigma.dot(&u))
    }

    /// `b_dot = b (Id + K_mu)^{-1} H_mu[mu_dot]`.
    pub fn bdot_from_mudot(&self, mudot: &DVector<T>) -> Result<DVector<T>> {
        check_len(mudot, self.len())?;
        let h = self.h_mu_apply(mudot)?;
        let a = DMatrix::identity(self.len(), self.len()) + self.k_mu_matrix();
        let u = a.lu().solve(&h).ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
        Ok(u.component_mul(&self.b))
    }

    /// `g~_b(bd, bd) = eps/2 (|bd|^2 + 2 <b^{-1} bd, (Id - K_mu)^{-1} b^{-1} bd>_{L2(mu)})`.
    /// The Hilbert norm of `bd` is computed with a kernel solve.
    pub fn metric_g_tilde(&self, bdot: &DVector<T>) -> Result<T> {
        check_len(bdot, self.len())?;
        let pairing = self.pairing(bdot);
        let scale = bdot.amax().max(T::one());
        if pairing.abs() > by_precision::<T>(1e-8, 1e-3) * scale {
            return Err(Error::NotTangent { pairing: pairing.to_f64_lossy() });
        }
        let flat = self.ks.kernel.hc_inner(bdot, bdot)?;
        let r = bdot.component_div(&self.b);
        let w = self.weights();
        let a = DMatrix::identity(self.len(), self.len()) - self.k_mu_matrix();
        let z = solve_mod_constants(a, &w, r.clone())?;
        let inner = r.component_mul(&z).dot(&w);
        Ok(self.epsilon() * T::lit(0.5) * (flat + T::lit(2.0) * inner))
    }
}

fn check_len<T: Scalar>(v: &DVector<T>, n: usize) -> Result<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: n, got: v.len() })
    }
}

fn check_mass_zero<T: Scalar>(sigma: &DVector<T>) -> Result<()> {
    let mass = sigma.sum();
    let scale = sigma.iter().fold(T::zero(), |s, x| s + x.abs()).max(T::one());
    if mass.abs() > by_precision::<T>(1e-12, 1e-5) * scale {
        return Err(Error::NotMassZero { mass: mass.to_f64_lossy() });
    }
    Ok(())
}

/// Solves `a u = r` where `a` kills constants and `w^T a = 0` (`w` a
/// probability vector): the right-hand side is projected onto `w`-mean zero,
/// the rank-one deflation `a + 1 w^T` is inverted, and the result has
/// `w`-mean zero.
fn solve_mod_constants<T: Scalar>(mut a: DMatrix<T>, w: &DVector<T>, mut r: DVector<T>) -> Result<DVector<T>> {
    let n = a.nrows();
    let wr = w.dot(&r) / w.sum();
    r.add_scalar_mut(-wr);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] += w[j];
        }
    }
    let mut u = a.lu().solve(&r).ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    let wu = w.dot(&u) / w.sum();
    u.add_scalar_mut(-wu);
    Ok(u)
}

/// Nonpositive multiplier vanishing on the support.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureVector<T: Scalar> {
    pub p: DVector<T>,
    pub support: Vec<bool>,
}

impl<T: Scalar> PressureVector<T> {
    pub fn zeros(n: usize) -> Self {
        Self { p: DVector::zeros(n), support: vec![true; n] }
    }

    pub fn min(&self) -> T {
        self.p.min()
    }
}

/// Multiplication by a potential and the skew operator `W = 2/eps (V - V*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOperator<T: Scalar> {
    ks: Arc<KernelSpace<T>>,
    v: DVector<T>,
}

impl<T: Scalar> PotentialOperator<T> {
    pub fn new(ks: &Arc<KernelSpace<T>>, v: DVector<T>) -> Result<Self> {
        check_len(&v, ks.len())?;
        Ok(Self { ks: ks.clone(), v })
    }

    pub fn values(&self) -> &DVector<T> {
        &self.v
    }

    pub fn kernel_space(&self) -> &Arc<KernelSpace<T>> {
        &self.ks
    }

    /// `W phi = 2/eps (V phi - K (V K^{-1} phi))`, with a kernel solve.
    pub fn w_apply(&self, phi: &DVector<T>) -> Result<DVector<T>> {
        let alpha = self.ks.kernel.hc_solve(phi)?;
        self.w_apply_preimage(&alpha)
    }

    /// `W (K alpha)` without solving: `2/eps (V (K alpha) - K (V alpha))`.
    pub fn w_apply_preimage(&self, alpha: &DVector<T>) -> Result<DVector<T>> {
        check_len(alpha, self.ks.len())?;
        let k = self.ks.kernel.matrix();
        let phi = k * alpha;
        let va = self.v.component_mul(alpha);
        let s = T::lit(2.0) / self.ks.epsilon();
        Ok((self.v.component_mul(&phi) - k * va) * s)
    }

    /// `E(b) = <<b, V b>> = m^T (V b)`.
    pub fn energy(&self, emb: &SphereEmbedding<T>) -> T {
        emb.m.dot(&self.v.component_mul(&emb.b))
    }

    /// Distance of `0` from `W b + P~ b`: `|(W b)_i|` on the support and the
    /// negative part of `(W b)_i` off it.
    pub fn criticality_residual(&self, emb: &SphereEmbedding<T>) -> Result<T> {
        let wb = self.w_apply_preimage(&emb.m)?;
        let mask = support_mask(&emb.weights());
        let mut r = T::zero();
        for (i, &inside) in mask.iter().enumerate() {
            let e = if inside { wb[i].abs() } else { (-wb[i]).max(T::zero()) };
            r = r.max(e);
        }
        Ok(r)
    }

    /// `V (K alpha) - K (V alpha)` scaled by `2 tau / eps` and added to `K`:
    /// the matrix `K + tau W K` of the resolvent problem.
    pub fn resolvent_matrix(&self, tau: T) -> DMatrix<T> {
        let k = self.ks.kernel.matrix();
        let s = T::lit(2.0) * tau / self.ks.epsilon();
        DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)] + s * (self.v[i] - self.v[j]) * k[(i, j)])
    }
}

/// Derivative of `s -> f_{mu, nu + s nudot}` at `s = 0`, as a function on the
/// support of `mu` with zero `mu`-mean:
/// `-eps (Id - K_{mu,nu} K_{nu,mu})^{-1} H_{mu,nu}[nudot]`.
pub fn schrodinger_derivative<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    nudot: &DVector<T>,
    epsilon: T,
    cfg: &SinkhornConfig<T>,
) -> Result<DVector<T>> {
    check_len(nudot, nu.len())?;
    check_mass_zero(nudot)?;
    let pot = solve_schrodinger(mu, nu, epsilon, cfg)?;
    let c = cost_between(mu, nu)?;
    let (n, m) = (mu.len(), nu.len());
    let kmn = DMatrix::from_fn(n, m, |i, j| ((pot.f[i] + pot.g[j] - c[(i, j)]) / epsilon).exp());
    let a = mu.weights();
    let b = nu.weights();
    // K_{mu,nu}[phi] = kmn (phi * b), K_{nu,mu}[psi] = kmn^T (psi * a)
    let k_mn = DMatrix::from_fn(n, m, |i, j| kmn[(i, j)] * b[j]);
    let k_nm = DMatrix::from_fn(m, n, |j, i| kmn[(i, j)] * a[i]);
    let op = DMatrix::identity(n, n) - &k_mn * &k_nm;
    let h = &kmn * nudot;
    let u = solve_mod_constants(op, a, h)?;
    Ok(u * (-epsilon))
}

/// The `mu = nu` specialization, `-eps (Id - K_mu^2)^{-1} H_mu[nudot]`, from an embedding.
pub fn self_schrodinger_derivative<T: Scalar>(emb: &SphereEmbedding<T>, nudot: &DVector<T>) -> Result<DVector<T>> {
    check_mass_zero(nudot)?;
    let h = emb.h_mu_apply(nudot)?;
    let k = emb.k_mu_matrix();
    let a = DMatrix::identity(emb.len(), emb.len()) - &k * &k;
    Ok(solve_mod_constants(a, &emb.weights(), h)? * (-emb.epsilon()))
}
