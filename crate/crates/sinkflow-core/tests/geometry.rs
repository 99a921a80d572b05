mod common;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sinkflow_core::{
    embed, schrodinger_derivative, self_schrodinger_derivative, sinkhorn_divergence, solve_schrodinger, unembed,
    DiscreteMeasure, DiscreteSpace, Error, KernelSpace, PointCloud, PotentialOperator, SinkhornConfig, SphereEmbedding,
};

fn tight() -> SinkhornConfig<f64> {
    SinkhornConfig::with_tolerance(1e-13)
}

/// Grid on which the kernel stays well conditioned (`h^2 / eps = 1/2`).
fn friendly(n: usize) -> Arc<KernelSpace<f64>> {
    let h = 1.0 / (n - 1) as f64;
    KernelSpace::new(common::grid(n), 2.0 * h * h).unwrap()
}

fn random_embedding(seed: u64, n: usize, eps: f64) -> (Arc<KernelSpace<f64>>, DiscreteMeasure<f64>, SphereEmbedding<f64>) {
    let mut rng = common::rng(seed);
    let space = common::random_space(&mut rng, n, 1);
    let ks = KernelSpace::new(space.clone(), eps).unwrap();
    let mu = common::random_measure(&mut rng, &space);
    let b = embed(&mu, &ks, &SinkhornConfig::default()).unwrap();
    (ks, mu, b)
}

/// Eigenvalues of `K_mu` through the symmetric similar matrix
/// `diag(sqrt a / b) K diag(sqrt a / b)`.
fn k_mu_spectrum(b: &SphereEmbedding<f64>) -> Vec<f64> {
    let a = b.weights();
    let d = DVector::from_fn(a.len(), |i, _| a[i].sqrt() / b.values()[i]);
    let k = b.kernel_space().kernel().matrix();
    let s = DMatrix::from_fn(a.len(), a.len(), |i, j| d[i] * k[(i, j)] * d[j]);
    let mut ev: Vec<f64> = s.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

#[test]
fn embed_dirac_is_kernel_column() {
    let ks = KernelSpace::new(common::grid(12), 0.05).unwrap();
    for i in [0, 5, 11] {
        let mu = DiscreteMeasure::dirac(ks.space().clone(), i).unwrap();
        let b = embed(&mu, &ks, &SinkhornConfig::default()).unwrap();
        let col = ks.kernel().matrix().column(i).into_owned();
        assert!((b.values() - &col).amax() < 1e-10);
        let back = unembed(&SphereEmbedding::from_preimage(&ks, DVector::from_fn(12, |j, _| if j == i { 1.0 } else { 0.0 })).unwrap()).unwrap();
        assert!((back.weights() - mu.weights()).amax() < 1e-12);
    }
}

#[test]
fn embed_symmetric_pair() {
    let space = Arc::new(DiscreteSpace::new(PointCloud::from_points(&[vec![-0.5], vec![0.5]]).unwrap()).unwrap());
    let ks = KernelSpace::new(space.clone(), 0.3f64).unwrap();
    let b = embed(&DiscreteMeasure::uniform(space), &ks, &SinkhornConfig::default()).unwrap();
    assert!((b.values()[0] - b.values()[1]).abs() < 1e-12);
    assert!((b.hc_norm() - 1.0).abs() < 1e-12);
}

#[test]
fn embed_rejects_foreign_measure() {
    let ks = KernelSpace::new(common::grid(5), 0.1).unwrap();
    let other = common::grid(5);
    let mu = DiscreteMeasure::uniform(other);
    // equal point sets are accepted, different ones are not
    assert!(embed(&mu, &ks, &SinkhornConfig::default()).is_ok());
    let mu = DiscreteMeasure::uniform(common::grid(6));
    assert!(matches!(embed(&mu, &ks, &SinkhornConfig::default()), Err(Error::InvalidMeasure(_))));
}

#[test]
fn unembed_outside_cone() {
    let ks = friendly(6);
    let m = DVector::from_vec(vec![0.5, -0.2, 0.4, 0.3, 0.1, 0.2]);
    assert!(matches!(SphereEmbedding::from_preimage(&ks, m), Err(Error::NotInCone { .. })));
}

#[test]
fn k_mu_dirac_is_rank_one() {
    let ks = KernelSpace::new(common::grid(7), 0.1).unwrap();
    let mu = DiscreteMeasure::dirac(ks.space().clone(), 2).unwrap();
    let b = embed(&mu, &ks, &SinkhornConfig::default()).unwrap();
    let km = b.k_mu_matrix();
    let phi = DVector::from_fn(7, |i, _| (i as f64).sin());
    let out = &km * &phi;
    assert!(out.iter().all(|&v| (v - phi[2]).abs() < 1e-9));
}

#[test]
fn potential_operator_examples() {
    let ks = friendly(8);
    let n = 8;
    let op = PotentialOperator::new(&ks, DVector::from_element(n, 2.5)).unwrap();
    let phi = DVector::from_fn(n, |i, _| (i as f64 * 0.7).cos());
    assert!(op.w_apply(&phi).unwrap().amax() < 1e-9);
    let mu = common::gaussian(ks.space(), 0.4, 0.2);
    let b = embed(&mu, &ks, &SinkhornConfig::default()).unwrap();
    assert!((op.energy(&b) - 2.5).abs() < 1e-9);
    assert!(op.criticality_residual(&b).unwrap() <= 1e-12);

    // convex V with unique minimizer at grid index 3
    let xs: Vec<f64> = ks.space().points().iter().map(|p| p[0]).collect();
    let v = DVector::from_fn(n, |i, _| (xs[i] - xs[3]).powi(2));
    let op = PotentialOperator::new(&ks, v.clone()).unwrap();
    for i in 0..n {
        let d = embed(&DiscreteMeasure::dirac(ks.space().clone(), i).unwrap(), &ks, &SinkhornConfig::default()).unwrap();
        assert!((op.energy(&d) - v[i]).abs() < 1e-12);
        let wb = op.w_apply_preimage(d.preimage()).unwrap();
        let r = op.criticality_residual(&d).unwrap();
        if i == 3 {
            assert!(wb[3].abs() < 1e-12);
            assert!(wb.iter().all(|&x| -x <= 1e-12));
            assert!(r <= 1e-6);
        } else {
            assert!(r > 1e-3, "index {i}: {r}");
        }
    }
}

#[test]
fn skewness() {
    let ks = friendly(10);
    let mut rng = common::rng(11);
    let v = common::random_weights(&mut rng, 10) * 10.0;
    let op = PotentialOperator::new(&ks, v).unwrap();
    let k = ks.kernel();
    for _ in 0..20 {
        let phi = k.hc_apply(&common::random_tangent(&mut rng, 10)).unwrap();
        let psi = k.hc_apply(&common::random_weights(&mut rng, 10)).unwrap();
        let a = k.hc_inner(&phi, &op.w_apply(&psi).unwrap()).unwrap();
        let b = k.hc_inner(&psi, &op.w_apply(&phi).unwrap()).unwrap();
        assert!((a + b).abs() <= 1e-9, "{a} {b}");
        assert!(k.hc_inner(&phi, &op.w_apply(&phi).unwrap()).unwrap().abs() <= 1e-9);
    }
}

#[test]
fn metric_examples() {
    let (_, _, b) = random_embedding(12, 8, 0.2);
    assert_eq!(b.metric_g_mu(&DVector::zeros(8)).unwrap(), 0.0);
    assert_eq!(b.metric_g_tilde(&DVector::zeros(8)).unwrap(), 0.0);
    let bad = DVector::from_element(8, 0.1);
    assert!(matches!(b.metric_g_mu(&bad), Err(Error::NotMassZero { .. })));
    assert!(matches!(b.metric_g_tilde(b.values()), Err(Error::NotTangent { .. })));
}

#[test]
fn hessian_expansion_richardson() {
    let mut rng = common::rng(13);
    for _ in 0..20 {
        let n = 3 + (rand::Rng::gen::<u32>(&mut rng) % 6) as usize;
        let space = common::random_space(&mut rng, n, 1);
        let eps = 0.1 + rand::Rng::gen::<f64>(&mut rng);
        let ks = KernelSpace::new(space.clone(), eps).unwrap();
        let mu = common::random_measure(&mut rng, &space);
        let sigma = common::random_tangent(&mut rng, n) * mu.weights().min();
        let b = embed(&mu, &ks, &tight()).unwrap();
        let g = b.metric_g_mu(&sigma).unwrap();
        assert!(g > 0.0);
        let q = |t: f64| {
            let nu = mu.with_weights(mu.weights() + &sigma * t).unwrap();
            sinkhorn_divergence(&mu, &nu, eps, &tight()).unwrap() / (t * t)
        };
        let (t1, t2) = (1e-2, 1e-3);
        let rich = (t1 * q(t2) - t2 * q(t1)) / (t1 - t2);
        assert!(common::rel_err(rich, g) <= 1e-3, "richardson {rich} metric {g}");
    }
}

#[test]
fn schrodinger_derivative_self_case() {
    let (ks, mu, b) = random_embedding(14, 6, 0.3);
    let _ = ks;
    let zero = schrodinger_derivative(&mu, &mu, &DVector::zeros(6), 0.3, &tight()).unwrap();
    assert!(zero.amax() < 1e-14);
    let mut rng = common::rng(15);
    let nd = common::random_tangent(&mut rng, 6);
    let general = schrodinger_derivative(&mu, &mu, &nd, 0.3, &tight()).unwrap();
    let special = self_schrodinger_derivative(&b, &nd).unwrap();
    assert!((general - &special).amax() < 1e-8);
    // the metric is the pairing of the same solve: g = -1/2 <sigma, d f>
    let g = b.metric_g_mu(&nd).unwrap();
    assert!((g + 0.5 * nd.dot(&special)).abs() < 1e-10);
}

#[test]
fn hc_distance_bounded_by_divergence() {
    let mut rng = common::rng(16);
    for _ in 0..50 {
        let n = 2 + (rand::Rng::gen::<u32>(&mut rng) % 20) as usize;
        let space = common::random_space(&mut rng, n, 2);
        let eps = 0.05 + rand::Rng::gen::<f64>(&mut rng);
        let ks = KernelSpace::new(space.clone(), eps).unwrap();
        let mu = common::random_measure(&mut rng, &space);
        let nu = common::random_measure(&mut rng, &space);
        let (bm, bn) = (embed(&mu, &ks, &tight()).unwrap(), embed(&nu, &ks, &tight()).unwrap());
        let d2 = bm.hc_distance(&bn).powi(2);
        let s = sinkhorn_divergence(&mu, &nu, eps, &tight()).unwrap();
        assert!(d2 <= 2.0 / eps * s + 1e-8, "{d2} > {}", 2.0 / eps * s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_trips(seed in 0u64..100_000, n in 1usize..50, eps in 0.02f64..1.0) {
        let (ks, mu, b) = random_embedding(seed, n, eps);
        prop_assert!((b.hc_norm() - 1.0).abs() <= 1e-8);
        prop_assert!(b.values().iter().all(|&x| x > 0.0));
        prop_assert!(b.preimage().min() >= -1e-10);
        let back = unembed(&b).unwrap();
        prop_assert!((back.weights() - mu.weights()).amax() <= 1e-6);
        prop_assert!((back.weights().sum() - 1.0).abs() <= 1e-12);
        let again = embed(&back, &ks, &SinkhornConfig::default()).unwrap();
        prop_assert!(again.hc_distance(&b) <= 1e-6);
    }

    #[test]
    fn k_mu_spectrum_and_constants(seed in 0u64..100_000, n in 2usize..30, eps in 0.05f64..2.0) {
        let (ks, _, b) = random_embedding(seed, n, eps);
        let km = b.k_mu_matrix();
        let ones = DVector::from_element(n, 1.0);
        prop_assert!((&km * &ones - &ones).amax() <= 1e-8);
        let ev = k_mu_spectrum(&b);
        prop_assert!((ev[0] - 1.0).abs() <= 1e-8);
        prop_assert!(ev.iter().all(|&l| l >= -1e-10 && l <= 1.0 + 1e-10));
        let bound = 1.0 - (-4.0 * ks.kernel().cost().sup_norm() / eps).exp();
        prop_assert!(ev[1] <= bound + 1e-6, "second eigenvalue {} bound {}", ev[1], bound);
    }

    #[test]
    fn energy_and_pairing_agree(seed in 0u64..100_000, n in 2usize..12) {
        let h = 1.0 / (n - 1) as f64;
        let ks = KernelSpace::new(common::grid(n), 2.0 * h * h).unwrap();
        let mut rng = common::rng(seed);
        let mu = common::random_measure(&mut rng, ks.space());
        let b = embed(&mu, &ks, &SinkhornConfig::default()).unwrap();
        let v = common::random_weights(&mut rng, n) * 5.0;
        let op = PotentialOperator::new(&ks, v.clone()).unwrap();
        prop_assert!((op.energy(&b) - unembed(&b).unwrap().integrate(&v)).abs() <= 1e-8);
        let psi = common::random_tangent(&mut rng, n);
        let direct = ks.kernel().hc_inner(b.values(), &psi).unwrap();
        prop_assert!((b.pairing(&psi) - direct).abs() <= 1e-10 * (1.0 + direct.abs()) * n as f64);
    }

    #[test]
    fn metric_bounds_and_consistency(seed in 0u64..100_000, n in 2usize..10, s in 0.25f64..1.0) {
        // flat norms need kernel solves, so stay on well-conditioned grids
        let h = 1.0 / (n - 1) as f64;
        let eps = 2.0 * h * h * s;
        let ks = KernelSpace::new(common::grid(n), eps).unwrap();
        let mut rng = common::rng(seed);
        let mu = common::random_measure(&mut rng, ks.space());
        let b = embed(&mu, &ks, &tight()).unwrap();
        let mudot = common::random_tangent(&mut rng, n) * mu.weights().min();
        let bdot = b.bdot_from_mudot(&mudot).unwrap();
        let gt = b.metric_g_tilde(&bdot).unwrap();
        let gm = b.metric_g_mu(&mudot).unwrap();
        prop_assert!((gt - gm).abs() <= 1e-6 * gm.max(1e-12).max(1.0), "g~ {} g {}", gt, gm);
        let flat = ks.kernel().hc_inner(&bdot, &bdot).unwrap();
        let c = ks.kernel().cost().sup_norm();
        prop_assert!(gt >= eps / 2.0 * flat - 1e-9);
        prop_assert!(gt <= eps / 2.0 * (1.0 + 2.0 * (11.0 * c / (2.0 * eps)).exp()) * flat + 1e-9);
    }

    #[test]
    fn schrodinger_derivative_matches_differences(seed in 0u64..100_000, n in 2usize..11, m in 2usize..11) {
        let mut rng = common::rng(seed);
        let xs = common::random_cloud(&mut rng, n, 1);
        let ys = common::random_cloud(&mut rng, m, 1);
        let eps = 0.1 + rand::Rng::gen::<f64>(&mut rng);
        let mu = DiscreteMeasure::lagrangian(xs).unwrap();
        // weighted second measure: a Lagrangian cloud with an Eulerian twin
        let space = Arc::new(DiscreteSpace::new(ys).unwrap());
        let nu = common::random_measure(&mut rng, &space);
        let nd = common::random_tangent(&mut rng, m) * nu.weights().min() * 0.5;
        let d = schrodinger_derivative(&mu, &nu, &nd, eps, &tight()).unwrap();
        let t = 1e-4;
        let fp = solve_schrodinger(&mu, &nu.with_weights(nu.weights() + &nd * t).unwrap(), eps, &tight()).unwrap().f;
        let fm = solve_schrodinger(&mu, &nu.with_weights(nu.weights() - &nd * t).unwrap(), eps, &tight()).unwrap().f;
        let fd = (fp - fm) / (2.0 * t);
        let fd = &fd - DVector::from_element(n, mu.integrate(&fd));
        prop_assert!((mu.integrate(&d)).abs() <= 1e-10);
        prop_assert!((&d - &fd).amax() <= 1e-3 * d.amax().max(1e-6), "analytic {:?} fd {:?}", d, fd);
    }
}
