#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sinkflow_core::{DiscreteMeasure, DiscreteSpace, PointCloud};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` distinct random points in `[0, 1]^dim`.
pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PointCloud<f64> {
    loop {
        let coords: Vec<f64> = (0..n * dim).map(|_| rng.gen::<f64>()).collect();
        let pc = PointCloud::new(dim, coords).unwrap();
        if DiscreteSpace::new(pc.clone()).is_ok() {
            return pc;
        }
    }
}

pub fn random_space(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Arc<DiscreteSpace<f64>> {
    Arc::new(DiscreteSpace::new(random_cloud(rng, n, dim)).unwrap())
}

pub fn grid(n: usize) -> Arc<DiscreteSpace<f64>> {
    Arc::new(DiscreteSpace::new(PointCloud::grid_1d(0.0, 1.0, n)).unwrap())
}

/// Strictly positive random weights bounded away from zero.
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let w = DVector::from_fn(n, |_, _| 0.2 + rng.gen::<f64>());
    w / (0.2 * n as f64 + n as f64)
}

pub fn random_measure(rng: &mut ChaCha8Rng, space: &Arc<DiscreteSpace<f64>>) -> DiscreteMeasure<f64> {
    DiscreteMeasure::eulerian_normalized(space.clone(), random_weights(rng, space.len())).unwrap()
}

/// Random mass-zero direction with unit sup norm.
pub fn random_tangent(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
    let mean = v.mean();
    let v = v.map(|x| x - mean);
    let s = v.amax();
    v / s
}

pub fn gaussian(space: &Arc<DiscreteSpace<f64>>, mean: f64, sd: f64) -> DiscreteMeasure<f64> {
    let w = DVector::from_iterator(
        space.len(),
        space.points().iter().map(|p| (-(p[0] - mean).powi(2) / (2.0 * sd * sd)).exp()),
    );
    DiscreteMeasure::eulerian_normalized(space.clone(), w).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn sup(v: &DVector<f64>) -> f64 {
    v.amax()
}

pub fn centered(v: &DVector<f64>) -> DVector<f64> {
    let m = v.mean();
    v.map(|x| x - m)
}
