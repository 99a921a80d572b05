//! External potentials `V` for the energy `E(mu) = <mu, V>`.

use std::fmt::Debug;

use nalgebra::DVector;

use crate::scalar::Scalar;
use crate::space::PointCloud;

pub trait Potential<T: Scalar>: Debug + Send + Sync {
    fn value(&self, x: &[T]) -> T;

    /// Central differences with step `1e-6` unless overridden.
    fn gradient(&self, x: &[T], out: &mut [T]) {
        let h = T::lit(1e-6);
        let mut y = x.to_vec();
        for k in 0..x.len() {
            y[k] = x[k] + h;
            let up = self.value(&y);
            y[k] = x[k] - h;
            let down = self.value(&y);
            y[k] = x[k];
            out[k] = (up - down) / (h + h);
        }
    }

    fn values_on(&self, points: &PointCloud<T>) -> DVector<T> {
        DVector::from_iterator(points.len(), points.iter().map(|p| self.value(p)))
    }
}

/// `V(x) = |x - center|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic<T> {
    pub center: Vec<T>,
}

impl<T: Scalar> Quadratic<T> {
    pub fn origin(dim: usize) -> Self {
        Self { center: vec![T::zero(); dim] }
    }
}

impl<T: Scalar> Potential<T> for Quadratic<T> {
    fn value(&self, x: &[T]) -> T {
        x.iter().zip(self.center.iter().chain(std::iter::repeat(&T::zero()))).fold(T::zero(), |s, (&a, &c)| {
            let d = a - c;
            s + d * d
        })
    }

    fn gradient(&self, x: &[T], out: &mut [T]) {
        for (k, o) in out.iter_mut().enumerate() {
            let c = self.center.get(k).copied().unwrap_or(T::zero());
            *o = T::lit(2.0) * (x[k] - c);
        }
    }
}

/// One-dimensional tilted double well
/// `V(x) = height ((x - left)(x - right))^2 - tilt x`, acting on the first
/// coordinate. With `tilt > 0` the well near `right` is the deeper one.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleWell<T> {
    pub height: T,
    pub left: T,
    pub right: T,
    pub tilt: T,
}

impl<T: Scalar> Default for DoubleWell<T> {
    fn default() -> Self {
        Self { height: T::lit(40.0), left: T::lit(0.3), right: T::lit(0.7), tilt: T::lit(0.3) }
    }
}

impl<T: Scalar> Potential<T> for DoubleWell<T> {
    fn value(&self, x: &[T]) -> T {
        let q = (x[0] - self.left) * (x[0] - self.right);
        self.height * q * q - self.tilt * x[0]
    }

    fn gradient(&self, x: &[T], out: &mut [T]) {
        let (a, b) = (x[0] - self.left, x[0] - self.right);
        out.iter_mut().for_each(|o| *o = T::zero());
        out[0] = T::lit(2.0) * self.height * a * b * (a + b) - self.tilt;
    }
}

/// Values given on a fixed point set; evaluated at the nearest tabulated point.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated<T: Scalar> {
    pub points: PointCloud<T>,
    pub values: DVector<T>,
}

impl<T: Scalar> Potential<T> for Tabulated<T> {
    fn value(&self, x: &[T]) -> T {
        let mut best = (T::max_value().unwrap(), 0);
        for (i, p) in self.points.iter().enumerate() {
            let d = crate::space::sq_dist(p, x);
            if d < best.0 {
                best = (d, i);
            }
        }
        self.values[best.1]
    }

    fn values_on(&self, points: &PointCloud<T>) -> DVector<T> {
        if points == &self.points {
            return self.values.clone();
        }
        DVector::from_iterator(points.len(), points.iter().map(|p| self.value(p)))
    }
}
