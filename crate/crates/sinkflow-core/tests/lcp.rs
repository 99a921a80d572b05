mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use sinkflow_core::{complementarity_residual, solve_lcp, Error, LcpConfig, LcpProblem};

/// Positive definite symmetric part plus a skew part.
fn monotone(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
    let s = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1 + (&s - s.transpose()) * 2.0
}

/// Solution by trying every active set.
fn enumerate(prob: &LcpProblem<f64>) -> Option<DVector<f64>> {
    let n = prob.q.len();
    for mask in 0u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let mut m = DVector::zeros(n);
        if !idx.is_empty() {
            let a = DMatrix::from_fn(idx.len(), idx.len(), |r, c| prob.m[(idx[r], idx[c])]);
            let rhs = DVector::from_fn(idx.len(), |r, _| -prob.q[idx[r]]);
            let Some(x) = a.lu().solve(&rhs) else { continue };
            for (r, &i) in idx.iter().enumerate() {
                m[i] = x[r];
            }
        }
        let w = &prob.m * &m + &prob.q;
        if m.iter().all(|&v| v >= -1e-12) && w.iter().all(|&v| v >= -1e-12) {
            return Some(m);
        }
    }
    None
}

#[test]
fn nonnegative_q_gives_zero() {
    let prob = LcpProblem { m: DMatrix::identity(3, 3), q: DVector::from_vec(vec![0.0, 1.0, 2.0]) };
    let sol = solve_lcp(&prob, &LcpConfig::default(), None).unwrap();
    assert_eq!(sol.m, DVector::zeros(3));
    assert!(sol.converged);
}

#[test]
fn scalar() {
    let prob = LcpProblem { m: DMatrix::from_element(1, 1, 4.0f64), q: DVector::from_element(1, -3.0) };
    let sol = solve_lcp(&prob, &LcpConfig::default(), None).unwrap();
    assert!((sol.m[0] - 0.75).abs() < 1e-14);
    assert!(sol.w[0].abs() < 1e-14);
}

#[test]
fn infeasible_reports_failure() {
    let prob = LcpProblem { m: DMatrix::from_element(1, 1, -1.0), q: DVector::from_element(1, -1.0) };
    assert!(matches!(solve_lcp(&prob, &LcpConfig::default(), None), Err(Error::LcpNotConverged { .. })));
}

#[test]
fn dimension_checked() {
    let prob = LcpProblem { m: DMatrix::identity(2, 2), q: DVector::from_element(3, -1.0) };
    assert!(matches!(solve_lcp(&prob, &LcpConfig::default(), None), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn matches_active_set_enumeration() {
    let mut rng = common::rng(21);
    for trial in 0..200 {
        let n = 1 + trial % 4;
        let prob = LcpProblem { m: monotone(&mut rng, n), q: DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.6) };
        let oracle = enumerate(&prob).expect("monotone LCPs are solvable");
        let sol = solve_lcp(&prob, &LcpConfig::default(), None).unwrap();
        assert!((&sol.m - &oracle).amax() <= 1e-9 * (1.0 + oracle.amax()), "trial {trial}: {} vs {}", sol.m, oracle);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn residual_within_tolerance(seed in 0u64..100_000, n in 1usize..30, warm in any::<bool>()) {
        let mut rng = common::rng(seed);
        let prob = LcpProblem { m: monotone(&mut rng, n), q: DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5) };
        let start = DVector::from_fn(n, |_, _| rng.gen::<f64>());
        let cfg = LcpConfig::default();
        let sol = solve_lcp(&prob, &cfg, if warm { Some(&start) } else { None }).unwrap();
        let scale = prob.q.amax();
        prop_assert!(sol.m.iter().all(|&v| v >= 0.0));
        prop_assert_eq!(sol.residual, complementarity_residual(&prob, &sol.m));
        prop_assert!(sol.residual <= cfg.accept_tol * scale);
        if sol.converged {
            prop_assert!(sol.residual <= cfg.tol * scale);
        }
    }
}

// Resolvent problems along flows from rough starts have a numerically
// singular symmetric part; plain pivoting used to cycle on some of them.
#[test]
fn resolvent_problems_from_rough_starts_converge() {
    use sinkflow_core::{embed, DoubleWell, KernelSpace, Potential, PotentialOperator, SinkhornConfig};
    let cfg = LcpConfig::default();
    let ks = KernelSpace::new(common::grid(30), 0.04).unwrap();
    let op = PotentialOperator::new(&ks, DoubleWell::default().values_on(ks.space().points())).unwrap();
    let m = op.resolvent_matrix(5e-3);
    for seed in 0..40u64 {
        let mut rng = common::rng(seed);
        let mu = sinkflow_core::DiscreteMeasure::eulerian_normalized(
            ks.space().clone(),
            DVector::from_fn(30, |_, _| 0.2 + rng.gen::<f64>()),
        )
        .unwrap();
        let mut b = embed(&mu, &ks, &SinkhornConfig::default()).unwrap();
        for k in 0..50 {
            let prob = LcpProblem { m: m.clone(), q: -b.values() };
            let sol = solve_lcp(&prob, &cfg, Some(b.preimage()));
            assert!(sol.is_ok(), "seed {seed} step {k}: {:?}", sol.err());
            let sol = sol.unwrap();
            let bm = ks.kernel().matrix() * &sol.m;
            let norm = sol.m.dot(&bm).sqrt();
            b = sinkflow_core::SphereEmbedding::from_preimage(&ks, sol.m / norm).unwrap();
        }
    }
}
