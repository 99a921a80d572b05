//! Point clouds, the squared-Euclidean cost and the Gibbs kernel with its
//! Hilbert-space linear algebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major list of `len` points in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    dim: usize,
    coords: Vec<T>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(dim: usize, coords: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSpace("dimension must be at least 1".into()));
        }
        if coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim * (coords.len() / dim + 1),
                got: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidSpace("non-finite coordinate".into()));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(points: &[Vec<T>]) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(1);
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    /// `n` equispaced points on `[a, b]`.
    pub fn grid_1d(a: T, b: T, n: usize) -> Self {
        let coords = if n == 1 {
            vec![a]
        } else {
            let h = (b - a) / T::lit((n - 1) as f64);
            (0..n).map(|i| a + h * T::lit(i as f64)).collect()
        };
        Self { dim: 1, coords }
    }

    /// Tensor grid of `nx * ny` points on `[lo.0, hi.0] x [lo.1, hi.1]`, x fastest.
    pub fn grid_2d(lo: (T, T), hi: (T, T), nx: usize, ny: usize) -> Self {
        let xs = Self::grid_1d(lo.0, hi.0, nx);
        let ys = Self::grid_1d(lo.1, hi.1, ny);
        let mut coords = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                coords.push(xs.coords[i]);
                coords.push(ys.coords[j]);
            }
        }
        Self { dim: 2, coords }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn point_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.coords.chunks_exact(self.dim)
    }
}

#[inline]
pub(crate) fn sq_dist<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| {
        let d = a - b;
        acc + d * d
    })
}

/// Cost matrix between two clouds, rows indexed by `xs`.
pub fn squared_euclidean_between<T: Scalar>(xs: &PointCloud<T>, ys: &PointCloud<T>) -> Result<DMatrix<T>> {
    if xs.dim() != ys.dim() {
        return Err(Error::DimensionMismatch { expected: xs.dim(), got: ys.dim() });
    }
    Ok(DMatrix::from_fn(xs.len(), ys.len(), |i, j| sq_dist(xs.point(i), ys.point(j))))
}

/// Symmetric, nonnegative cost with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T: Scalar> {
    entries: DMatrix<T>,
    sup: T,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn entries(&self) -> &DMatrix<T> {
        &self.entries
    }

    /// `max_ij C_ij`.
    pub fn sup_norm(&self) -> T {
        self.sup
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A finite base space: pairwise distinct points with their cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSpace<T: Scalar> {
    points: PointCloud<T>,
    cost: CostMatrix<T>,
}

impl<T: Scalar> DiscreteSpace<T> {
    pub fn new(points: PointCloud<T>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidSpace("space needs at least one point".into()));
        }
        let cost = build_squared_euclidean_cost(&points);
        let n = points.len();
        for j in 0..n {
            for i in 0..j {
                if cost.entries[(i, j)] == T::zero() {
                    return Err(Error::InvalidSpace(format!("points {i} and {j} coincide")));
                }
            }
        }
        Ok(Self { points, cost })
    }

    pub fn points(&self) -> &PointCloud<T> {
        &self.points
    }

    pub fn cost(&self) -> &CostMatrix<T> {
        &self.cost
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }
}

/// `C_ij = |x_i - x_j|^2`.
pub fn build_squared_euclidean_cost<T: Scalar>(points: &PointCloud<T>) -> CostMatrix<T> {
    let n = points.len();
    let mut entries = DMatrix::zeros(n, n);
    let mut sup = T::zero();
    for j in 0..n {
        for i in 0..j {
            let c = sq_dist(points.point(i), points.point(j));
            entries[(i, j)] = c;
            entries[(j, i)] = c;
            if c > sup {
                sup = c;
            }
        }
    }
    CostMatrix { entries, sup }
}

/// Settings for factorizations of the kernel matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorConfig {
    /// Largest accepted condition-number estimate.
    pub max_condition: f64,
    /// Diagonal jitter, relative to `trace(K)/n`, tried once when Cholesky fails.
    pub jitter: f64,
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self { max_condition: 1e14, jitter: 1e-12 }
    }
}

impl FactorConfig {
    fn threshold<T: Scalar>(&self) -> f64 {
        if T::is_double() {
            self.max_condition
        } else {
            self.max_condition.min(1e5)
        }
    }
}

/// `K_ij = exp(-C_ij / eps)` together with `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsKernel<T: Scalar> {
    k: DMatrix<T>,
    cost: CostMatrix<T>,
    epsilon: T,
}

/// Builds the Gibbs kernel of `cost` at regularization `epsilon`.
pub fn gibbs_kernel<T: Scalar>(cost: &CostMatrix<T>, epsilon: T) -> Result<GibbsKernel<T>> {
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::NonPositiveEpsilon(epsilon.to_f64_lossy()));
    }
    let k = cost.entries.map(|c| (-c / epsilon).exp());
    Ok(GibbsKernel { k, cost: cost.clone(), epsilon })
}

impl<T: Scalar> GibbsKernel<T> {
    pub fn on_space(space: &DiscreteSpace<T>, epsilon: T) -> Result<Self> {
        gibbs_kernel(space.cost(), epsilon)
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.k
    }

    pub fn cost(&self) -> &CostMatrix<T> {
        &self.cost
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    fn check_len(&self, v: &DVector<T>) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: v.len() });
        }
        Ok(())
    }

    /// `K sigma`: the kernel image of a signed measure.
    pub fn hc_apply(&self, sigma: &DVector<T>) -> Result<DVector<T>> {
        self.check_len(sigma)?;
        Ok(&self.k * sigma)
    }

    /// Cholesky factor of `K`, with a single jittered retry.
    pub fn factorize(&self, cfg: &FactorConfig) -> Result<KernelFactor<T>> {
        let n = self.len();
        let chol = match Cholesky::new(self.k.clone()) {
            Some(c) => c,
            None => {
                let shift = T::lit(cfg.jitter) * self.k.trace() / T::lit(n as f64);
                log::warn!(
                    "Cholesky of the Gibbs kernel failed; retrying with diagonal jitter {:.3e}",
                    shift.to_f64_lossy()
                );
                let mut shifted = self.k.clone();
                for i in 0..n {
                    shifted[(i, i)] += shift;
                }
                Cholesky::new(shifted).ok_or(Error::IllConditioned { condition: f64::INFINITY })?
            }
        };
        let condition = condition_estimate(&self.k, &chol);
        if !(condition <= cfg.threshold::<T>()) {
            return Err(Error::IllConditioned { condition });
        }
        Ok(KernelFactor { chol, condition })
    }

    /// Solves `K m = phi`.
    pub fn hc_solve(&self, phi: &DVector<T>) -> Result<DVector<T>> {
        self.check_len(phi)?;
        Ok(self.factorize(&FactorConfig::default())?.solve(phi))
    }

    /// `<phi, psi>_{H_c} = phi^T K^{-1} psi`.
    pub fn hc_inner(&self, phi: &DVector<T>, psi: &DVector<T>) -> Result<T> {
        self.check_len(psi)?;
        Ok(self.hc_solve(phi)?.dot(psi))
    }

    /// Symmetric `S` with `S K S = Id`.
    pub fn hc_inv_sqrt(&self, cfg: &FactorConfig) -> Result<DMatrix<T>> {
        let eig = self.k.clone().symmetric_eigen();
        let hi = eig.eigenvalues.max();
        let lo = eig.eigenvalues.min();
        if !(lo > T::zero()) || !((hi / lo).to_f64_lossy() <= cfg.threshold::<T>()) {
            let condition = if lo > T::zero() { (hi / lo).to_f64_lossy() } else { f64::INFINITY };
            return Err(Error::IllConditioned { condition });
        }
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| T::one() / l.sqrt()));
        let u = &eig.eigenvectors;
        let s = u * d * u.transpose();
        Ok((&s + s.transpose()) * T::lit(0.5))
    }

    /// Squared Hilbert norm of `K alpha`, computed from the preimage `alpha`.
    pub fn preimage_norm_sq(&self, alpha: &DVector<T>) -> T {
        let ka = &self.k * alpha;
        alpha.dot(&ka).max(T::zero())
    }
}

/// `lambda_max / lambda_min` from power iteration on `K` and inverse
/// iteration through the factor.
fn condition_estimate<T: Scalar>(k: &DMatrix<T>, chol: &Cholesky<T, Dyn>) -> f64 {
    let n = k.nrows();
    let start = DVector::from_fn(n, |i, _| T::one() + T::lit(((i * 7919) % 17) as f64 / 17.0));
    let (mut hi, mut v) = (T::zero(), start.clone());
    let (mut inv_lo, mut u) = (T::zero(), start);
    for _ in 0..30 {
        let nv = v.norm();
        v /= nv;
        let kv = k * &v;
        hi = v.dot(&kv);
        v = kv;
        let nu = u.norm();
        u /= nu;
        let su = chol.solve(&u);
        inv_lo = u.dot(&su);
        u = su;
    }
    let c = (hi * inv_lo).to_f64_lossy();
    if c.is_finite() && c > 0.0 {
        c
    } else {
        f64::INFINITY
    }
}

/// Reusable Cholesky factor of the kernel matrix.
#[derive(Debug, Clone)]
pub struct KernelFactor<T: Scalar> {
    chol: Cholesky<T, Dyn>,
    condition: f64,
}

impl<T: Scalar> KernelFactor<T> {
    pub fn solve(&self, phi: &DVector<T>) -> DVector<T> {
        self.chol.solve(phi)
    }

    /// Estimated spectral condition number of the factored matrix.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }
}
