//! Discrete probability measures in Eulerian (weights on a fixed space) and
//! Lagrangian (uniform weights on moving particles) form.

use std::borrow::Cow;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::{squared_euclidean_between, DiscreteSpace, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eulerian,
    Lagrangian,
}

#[derive(Debug, Clone, PartialEq)]
enum Support<T: Scalar> {
    Grid(Arc<DiscreteSpace<T>>),
    Particles(PointCloud<T>),
}

/// Probability measure `sum_i a_i delta_{x_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure<T: Scalar> {
    support: Support<T>,
    weights: DVector<T>,
}

fn mass_tolerance<T: Scalar>(n: usize) -> T {
    if T::is_double() {
        T::lit(1e-9)
    } else {
        T::lit(1e-4 * (n.max(1) as f64).sqrt())
    }
}

impl<T: Scalar> DiscreteMeasure<T> {
    /// Weights on a shared space. Total mass must be 1 up to a small drift,
    /// which is removed by rescaling.
    pub fn eulerian(space: Arc<DiscreteSpace<T>>, weights: DVector<T>) -> Result<Self> {
        if weights.len() != space.len() {
            return Err(Error::DimensionMismatch { expected: space.len(), got: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let total = weights.sum();
        if total == T::zero() {
            return Err(Error::EmptySupport);
        }
        if (total - T::one()).abs() > mass_tolerance::<T>(weights.len()) {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {}, expected 1",
                total.to_f64_lossy()
            )));
        }
        Ok(Self { support: Support::Grid(space), weights: weights / total })
    }

    /// Normalizes arbitrary nonnegative weights to unit mass.
    pub fn eulerian_normalized(space: Arc<DiscreteSpace<T>>, weights: DVector<T>) -> Result<Self> {
        let total = weights.sum();
        if !(total > T::zero()) {
            return Err(Error::EmptySupport);
        }
        Self::eulerian(space, weights / total)
    }

    pub fn dirac(space: Arc<DiscreteSpace<T>>, index: usize) -> Result<Self> {
        let n = space.len();
        if index >= n {
            return Err(Error::DimensionMismatch { expected: n, got: index + 1 });
        }
        let mut w = DVector::zeros(n);
        w[index] = T::one();
        Ok(Self { support: Support::Grid(space), weights: w })
    }

    pub fn uniform(space: Arc<DiscreteSpace<T>>) -> Self {
        let n = space.len();
        let w = DVector::from_element(n, T::one() / T::lit(n as f64));
        Self { support: Support::Grid(space), weights: w }
    }

    /// Equal-mass particles; particles may coincide.
    pub fn lagrangian(particles: PointCloud<T>) -> Result<Self> {
        let n = particles.len();
        if n == 0 {
            return Err(Error::EmptySupport);
        }
        let w = DVector::from_element(n, T::one() / T::lit(n as f64));
        Ok(Self { support: Support::Particles(particles), weights: w })
    }

    pub fn mode(&self) -> Mode {
        match self.support {
            Support::Grid(_) => Mode::Eulerian,
            Support::Particles(_) => Mode::Lagrangian,
        }
    }

    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }

    pub fn points(&self) -> &PointCloud<T> {
        match &self.support {
            Support::Grid(s) => s.points(),
            Support::Particles(p) => p,
        }
    }

    /// The shared space of an Eulerian measure.
    pub fn space(&self) -> Option<&Arc<DiscreteSpace<T>>> {
        match &self.support {
            Support::Grid(s) => Some(s),
            Support::Particles(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Same support, new weights.
    pub fn with_weights(&self, weights: DVector<T>) -> Result<Self> {
        match &self.support {
            Support::Grid(s) => Self::eulerian(s.clone(), weights),
            Support::Particles(_) => Err(Error::InvalidMeasure("Lagrangian weights are fixed".into())),
        }
    }

    /// Same weights, new particle positions.
    pub fn with_positions(&self, particles: PointCloud<T>) -> Result<Self> {
        match &self.support {
            Support::Particles(p) if p.len() == particles.len() && p.dim() == particles.dim() => {
                Ok(Self { support: Support::Particles(particles), weights: self.weights.clone() })
            }
            Support::Particles(p) => Err(Error::DimensionMismatch { expected: p.len(), got: particles.len() }),
            Support::Grid(_) => Err(Error::InvalidMeasure("Eulerian positions are fixed".into())),
        }
    }

    /// `<mu, phi>`.
    pub fn integrate(&self, phi: &DVector<T>) -> T {
        self.weights.dot(phi)
    }

    /// Indices carrying weight above `1e-12 * max weight`.
    pub fn support_mask(&self) -> Vec<bool> {
        support_mask(&self.weights)
    }
}

pub(crate) fn support_mask<T: Scalar>(weights: &DVector<T>) -> Vec<bool> {
    let cut = weights.max() * T::lit(1e-12);
    weights.iter().map(|&w| w > cut && w > T::zero()).collect()
}

/// Cost between the supports of `mu` (rows) and `nu` (columns); borrowed when
/// both live on the same shared space.
pub(crate) fn cost_between<'a, T: Scalar>(
    mu: &'a DiscreteMeasure<T>,
    nu: &'a DiscreteMeasure<T>,
) -> Result<Cow<'a, DMatrix<T>>> {
    if let (Some(a), Some(b)) = (mu.space(), nu.space()) {
        if Arc::ptr_eq(a, b) || a.points() == b.points() {
            return Ok(Cow::Borrowed(a.cost().entries()));
        }
    }
    Ok(Cow::Owned(squared_euclidean_between(mu.points(), nu.points())?))
}
