mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use copos::dual::{
    eval_discrete_dual, eval_gaussian_dual, eval_gaussian_dual_nonlinear, solve_dual, solve_omega, ConstraintKind,
    DualProblem,
};
use copos::policy::{FeatureMap, NaturalGaussianPolicy, PrecisionStorage};

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn one_d(lam: f64, u: f64) -> NaturalGaussianPolicy {
    NaturalGaussianPolicy::new(FeatureMap::identity(1), scalar(u), scalar(lam), PrecisionStorage::Dense).unwrap()
}

#[test]
fn gaussian_dual_matches_quadrature() {
    let (lam, u, waa, wsa) = (1.7, 0.4, 0.3, 0.25);
    let policy = one_d(lam, u);
    let phis: Vec<DVector<f64>> = [0.8, -0.5, 1.3].iter().map(|&x| DVector::from_element(1, x)).collect();
    let p = DualProblem::gaussian(
        &policy,
        &phis,
        &scalar(waa),
        &scalar(wsa),
        None,
        0.05,
        0.1,
        ConstraintKind::EqualityEntropy,
    )
    .unwrap();
    for (eta, omega) in [(2.0, 0.5), (3.0, 0.0), (1.0, 1.0), (3.0, -0.5), (0.4, 2.0)] {
        let terms: Vec<f64> = phis
            .iter()
            .map(|phi| {
                let term = GaussianTerm {
                    mean: DVector::from_element(1, u * phi[0] / lam),
                    precision: scalar(lam),
                    w_aa: scalar(waa),
                    r: DVector::from_element(1, wsa * phi[0]),
                };
                term.quadrature_1d(eta, omega)
            })
            .collect();
        let quad = dual_from_terms(eta, omega, 0.05, 0.1, mvn_entropy(&scalar(lam)), &terms);
        let closed = eval_gaussian_dual(&p, eta, omega).unwrap();
        assert!(rel_err(closed, quad) < 1e-9, "eta {eta} omega {omega}: {closed} vs {quad}");
    }
}

#[test]
fn one_d_dual_matches_monte_carlo() {
    // k = 1, Sigma = 1, K = 1, phi(s) = 1, W_aa = 0.5, W_sa = 0.3
    let policy = one_d(1.0, 1.0);
    let phis = vec![DVector::from_element(1, 1.0)];
    let p =
        DualProblem::gaussian(&policy, &phis, &scalar(0.5), &scalar(0.3), None, 0.01, 0.0, ConstraintKind::Inequality)
            .unwrap();
    let term = GaussianTerm {
        mean: DVector::from_element(1, 1.0),
        precision: scalar(1.0),
        w_aa: scalar(0.5),
        r: DVector::from_element(1, 0.3),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (eta, omega) in [(1.0, 0.0), (2.5, 0.7)] {
        let mc = dual_from_terms(
            eta,
            omega,
            0.01,
            0.0,
            mvn_entropy(&scalar(1.0)),
            &[term.monte_carlo(eta, omega, 1_000_000, &mut rng)],
        );
        assert!(rel_err(p.value(eta, omega), mc) < 1e-3);
    }
}

#[test]
fn nonlinear_with_zero_offsets_reduces_to_loglinear() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = 2;
    let u = DMatrix::from_fn(3, k, |_, _| rng.random_range(-0.5..0.5));
    let policy =
        NaturalGaussianPolicy::new(FeatureMap::identity(3), u, random_spd(k, &mut rng), PrecisionStorage::Dense)
            .unwrap();
    let phis: Vec<DVector<f64>> = (0..4).map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0))).collect();
    let w_aa = random_sym(k, 0.4, &mut rng);
    let w_sa = DMatrix::from_fn(3, k, |_, _| rng.random_range(-0.4..0.4));
    let zeros = vec![DVector::zeros(k); phis.len()];
    let kind = ConstraintKind::EqualityEntropy;
    let lin = DualProblem::gaussian(&policy, &phis, &w_aa, &w_sa, None, 0.02, 0.01, kind).unwrap();
    let nl = DualProblem::gaussian(&policy, &phis, &w_aa, &w_sa, Some(&zeros), 0.02, 0.01, kind).unwrap();
    for (eta, omega) in [(1.5, 0.2), (4.0, -1.0), (0.9, 3.0)] {
        let a = eval_gaussian_dual(&lin, eta, omega).unwrap();
        let b = eval_gaussian_dual_nonlinear(&nl, eta, omega).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert!(eval_discrete_dual(&lin, 1.0, 0.0).is_err());
}

#[test]
fn zero_advantage_dual_grows_as_eta_epsilon() {
    let policy = one_d(2.0, 0.5);
    let phis = vec![DVector::from_element(1, 1.0), DVector::from_element(1, -2.0)];
    let epsilon = 0.03;
    let p =
        DualProblem::gaussian(&policy, &phis, &scalar(0.0), &scalar(0.0), None, epsilon, 0.0, ConstraintKind::KlOnly)
            .unwrap();
    for eta in [1.0, 10.0, 1000.0] {
        let slope = (p.value(2.0 * eta, 0.0) - p.value(eta, 0.0)) / eta;
        assert!((slope - epsilon).abs() < 1e-9, "slope {slope}");
    }
}

#[test]
fn discrete_dual_is_convex_along_random_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logp: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            softmax(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0]).iter().map(|p| p.ln()).collect()
        })
        .collect();
    let g: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let p = DualProblem::discrete(logp, g, 0.05, 0.05, ConstraintKind::EqualityEntropy).unwrap();
    for _ in 0..200 {
        let a = (rng.random_range(0.1..5.0), rng.random_range(-0.05..2.0));
        let b = (rng.random_range(0.1..5.0), rng.random_range(-0.05..2.0));
        let mid = p.value(0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1));
        assert!(mid <= 0.5 * (p.value(a.0, a.1) + p.value(b.0, b.1)) + 1e-12);
    }
}

#[test]
fn two_action_minimum_matches_grid_search() {
    // one state, pi_old = (0.7, 0.3), the rarer action is better; with one
    // degree of freedom only one constraint can bind, here the KL bound
    let logp = vec![vec![0.7f64.ln(), 0.3f64.ln()]];
    let g = vec![vec![-0.4, 0.6]];
    let p = DualProblem::discrete(logp, g, 0.02, 0.01, ConstraintKind::Inequality).unwrap();
    let sol = solve_dual(&p).unwrap();
    assert!(sol.converged && sol.kl_active);

    let n = 200;
    let (eta_hi, omega_hi) = (3.0 * sol.eta, 2.0 * sol.eta);
    let (de, dw) = (eta_hi / n as f64, omega_hi / n as f64);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 1..=n {
        for j in 0..n {
            let (eta, omega) = (i as f64 * de, j as f64 * dw);
            let v = p.value(eta, omega);
            if v < best.0 {
                best = (v, eta, omega);
            }
        }
    }
    assert!((best.1 - sol.eta).abs() <= de, "eta grid {} solver {}", best.1, sol.eta);
    assert!((best.2 - sol.omega).abs() <= dw, "omega grid {} solver {}", best.2, sol.omega);
    assert!(sol.dual_value <= best.0 + 1e-12);
}

#[test]
fn solution_satisfies_both_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let logp: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                softmax(&(0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
                    .iter()
                    .map(|p| p.ln())
                    .collect()
            })
            .collect();
        let g: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let p = DualProblem::discrete(logp.clone(), g.clone(), 0.01, 0.002, ConstraintKind::EqualityEntropy).unwrap();
        let sol = solve_dual(&p).unwrap();
        // rebuild the induced policy directly: pi ∝ pi_old^{eta/t} exp(G/t)
        let t = sol.eta + sol.omega;
        let (mut kl, mut h_new, mut h_old) = (0.0, 0.0, 0.0);
        for (lp, gs) in logp.iter().zip(&g) {
            let z: Vec<f64> = lp.iter().zip(gs).map(|(l, gi)| sol.eta / t * l + gi / t).collect();
            let q = softmax(&z);
            let old: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            kl += categorical_kl(&q, &old);
            h_new += categorical_entropy(&q);
            h_old += categorical_entropy(&old);
        }
        assert!(rel_err(kl / 5.0, 0.01) < 1e-5, "kl {}", kl / 5.0);
        assert!(((h_old - h_new) / 5.0 - 0.002).abs() < 1e-8);
    }
}

#[test]
fn loose_inequality_budget_leaves_omega_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let logp: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            softmax(&(0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()).iter().map(|p| p.ln()).collect()
        })
        .collect();
    let g: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let loose =
        solve_dual(&DualProblem::discrete(logp.clone(), g.clone(), 0.01, 1e6, ConstraintKind::Inequality).unwrap())
            .unwrap();
    let kl_only = solve_dual(&DualProblem::discrete(logp, g, 0.01, 0.0, ConstraintKind::KlOnly).unwrap()).unwrap();
    assert_eq!(loose.omega, 0.0);
    assert!(rel_err(loose.eta, kl_only.eta) < 1e-6);
}

#[test]
fn resolving_omega_at_the_optimum_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let logp: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            softmax(&(0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()).iter().map(|p| p.ln()).collect()
        })
        .collect();
    let g: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let p = DualProblem::discrete(logp, g, 0.01, 0.004, ConstraintKind::EqualityEntropy).unwrap();
    let sol = solve_dual(&p).unwrap();
    let again = solve_omega(&p, sol.eta).unwrap();
    assert!((again - sol.omega).abs() < 1e-8 * sol.omega.abs().max(1.0), "{again} vs {}", sol.omega);
}
