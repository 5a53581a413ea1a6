mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use copos::compat::{fisher_vector_product, solve_natural_gradient, CompatibleSolution, FisherOperator};
use copos::envs::QuadraticBandit;
use copos::policy::{Action, FeatureMap, NaturalGaussianPolicy, Policy, PrecisionStorage, SoftmaxPolicy};
use copos::rollout::Batch;
use copos::update::{
    copos_update, copos_update_with_solution, tnpg_update, trpo_update, vpg_update, Algo, BetaMode, UpdateConfig,
    Updater,
};

fn softmax_policy(rng: &mut ChaCha8Rng, actions: usize, dim: usize, scale: f64) -> Policy {
    let theta = DMatrix::from_fn(actions, dim, |_, _| rng.random_range(-scale..scale));
    Policy::Softmax(SoftmaxPolicy::new(FeatureMap::identity(dim), theta).unwrap())
}

fn gaussian_policy(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> Policy {
    let u = DMatrix::from_fn(dim, k, |_, _| rng.random_range(-0.5..0.5));
    Policy::Gaussian(
        NaturalGaussianPolicy::new(FeatureMap::identity(dim), u, random_spd(k, rng), PrecisionStorage::Dense).unwrap(),
    )
}

/// Samples from `policy` with a centered reward that depends on state and action.
fn batch_for(policy: &Policy, rng: &mut ChaCha8Rng, n: usize) -> Batch {
    let dim = policy.features().input_dim();
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    for _ in 0..n {
        let s: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = policy.sample(&s, rng).unwrap();
        let r = match &a {
            Action::Discrete(i) => s[*i % dim] - 0.3 * *i as f64,
            Action::Continuous(v) => {
                -(v[0] - 2.0 * s[0]).powi(2) - v.iter().skip(1).map(|x| (x - 0.5).powi(2)).sum::<f64>()
            }
        };
        states.push(s);
        actions.push(a);
        rewards.push(r);
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    Batch::from_samples(states, actions, rewards.iter().map(|r| r - mean).collect()).unwrap()
}

fn kl_only() -> UpdateConfig {
    UpdateConfig { beta_mode: BetaMode::None, ..UpdateConfig::default() }
}

#[test]
fn kl_only_update_is_theta_plus_w_over_eta() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for policy in [softmax_policy(&mut rng, 3, 4, 0.5), gaussian_policy(&mut rng, 3, 2)] {
        let batch = batch_for(&policy, &mut rng, 300);
        let cfg = kl_only();
        let (new, diag) = copos_update(&policy, &batch, &cfg, None).unwrap();
        let eta = diag.eta.unwrap();
        assert_eq!(diag.omega, Some(0.0));
        let sol = solve_natural_gradient(&policy, &batch, &cfg.natural).unwrap();
        let expected: Vec<f64> = policy.params().iter().zip(&sol.w).map(|(t, w)| t + w / eta).collect();
        assert_eq!(new.params(), expected);
    }
}

#[test]
fn toy_step_with_constant_multipliers() {
    // exact compatible solution of the quadratic bandit: w = (R, r)
    let policy = Policy::Gaussian(QuadraticBandit::policy(1.0, 0.0).unwrap());
    let w = vec![1.0, 1.0];
    let g = fisher_vector_product(&policy, &[QuadraticBandit::state()], &w, 0.0).unwrap();
    let sol = CompatibleSolution::from_parts(w, g, &policy).unwrap();
    let batch =
        Batch::from_samples(vec![QuadraticBandit::state()], vec![Action::Continuous(DVector::zeros(1))], vec![0.0])
            .unwrap();
    let cfg = UpdateConfig { fixed_multipliers: Some((10.0, 1.0)), ..UpdateConfig::default() };
    let new = copos_update_with_solution(&policy, &batch, &sol, &cfg, None).unwrap().0;
    let p = new.as_gaussian().unwrap();
    // (eta B0 + R) / (eta + omega) and (eta b0 + r) / (eta + omega)
    assert!((p.precision()[(0, 0)] - 11.0 / 11.0).abs() < 1e-15);
    assert!((p.u()[(0, 0)] - 1.0 / 11.0).abs() < 1e-15);
}

#[test]
fn softmax_update_matches_tilted_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s: Vec<f64> = vec![0.3, -0.8, 1.0];
    let policy = softmax_policy(&mut rng, 4, 3, 0.7);
    let mut actions = Vec::new();
    for _ in 0..200 {
        actions.push(policy.sample(&s, &mut rng).unwrap());
    }
    let adv: Vec<f64> = actions.iter().map(|a| [0.5, -0.2, 0.1, -0.6][a.as_discrete().unwrap()]).collect();
    let batch = Batch::from_samples(vec![s.clone(); 200], actions, adv).unwrap();
    let cfg = UpdateConfig { epsilon: 0.02, beta_mode: BetaMode::Fixed(0.01), ..UpdateConfig::default() };
    let (new, diag) = copos_update(&policy, &batch, &cfg, Some(0.01)).unwrap();
    let sol = solve_natural_gradient(&policy, &batch, &cfg.natural).unwrap();
    let (eta, omega) = (diag.eta.unwrap(), diag.omega.unwrap());
    let t = eta + omega;

    let theta = policy.as_softmax().unwrap().theta().clone();
    let old = softmax_probs(&theta, &s);
    let tilted: Vec<f64> = (0..4)
        .map(|a| {
            let g: f64 = softmax_compatible(&theta, &s, a).iter().zip(&sol.w).map(|(p, w)| p * w).sum();
            eta / t * old[a].ln() + g / t
        })
        .collect();
    let expected = softmax(&tilted);
    let got = softmax_probs(new.as_softmax().unwrap().theta(), &s);
    let tv: f64 = 0.5 * expected.iter().zip(&got).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv < 1e-10, "tv {tv}");
}

#[test]
fn zero_advantages_keep_the_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for policy in [softmax_policy(&mut rng, 3, 2, 0.5), gaussian_policy(&mut rng, 2, 1)] {
        let mut batch = batch_for(&policy, &mut rng, 50);
        batch.set_advantages(vec![0.0; 50], copos::rollout::BaselineKind::None).unwrap();
        let cfg = UpdateConfig { beta_mode: BetaMode::Fixed(0.0), natural: no_normalize(), ..UpdateConfig::default() };
        let (new, diag) = copos_update(&policy, &batch, &cfg, Some(0.0)).unwrap();
        assert!(new.kl(&policy, &batch.states).unwrap() < 1e-12);
        assert!(diag.skipped || diag.kl < 1e-12);
    }
}

fn no_normalize() -> copos::compat::NaturalGradientConfig {
    copos::compat::NaturalGradientConfig { normalize_advantages: false, ..Default::default() }
}

#[test]
fn equality_budget_holds_over_a_toy_run() {
    let mut policy = Policy::Gaussian(QuadraticBandit::policy(1.0, 0.0).unwrap());
    let batch =
        Batch::from_samples(vec![QuadraticBandit::state()], vec![Action::Continuous(DVector::zeros(1))], vec![0.0])
            .unwrap();
    let cfg = UpdateConfig { epsilon: 0.01, beta_mode: BetaMode::Fixed(0.0), ..UpdateConfig::default() };
    for _ in 0..50 {
        let w = vec![1.0, 1.0];
        let g = fisher_vector_product(&policy, &[QuadraticBandit::state()], &w, 0.0).unwrap();
        let sol = CompatibleSolution::from_parts(w, g, &policy).unwrap();
        let (new, d) = copos_update_with_solution(&policy, &batch, &sol, &cfg, Some(0.0)).unwrap();
        let h = |p: &Policy| mvn_entropy(p.as_gaussian().unwrap().precision());
        assert!((h(&new) - h(&policy)).abs() < 1e-4);
        assert!(d.kl <= 0.01 * (1.0 + 1e-6));
        policy = new;
    }
}

#[test]
fn tnpg_realized_kl_near_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = gaussian_policy(&mut rng, 3, 2);
    // a reward linear in the action moves mainly the mean, where the quadratic
    // KL model is accurate; large precision steps carry third-order error
    let mut batch = batch_for(&policy, &mut rng, 500);
    let adv: Vec<f64> = batch
        .states
        .iter()
        .zip(&batch.actions)
        .map(|(s, a)| {
            let a = a.as_continuous().unwrap();
            a[0] * s[0] - a[1] * s[1]
        })
        .collect();
    batch.set_advantages(adv, copos::rollout::BaselineKind::None).unwrap();
    let cfg = UpdateConfig { algo: Algo::Tnpg, ..UpdateConfig::default() };
    let (new, _) = tnpg_update(&policy, &batch, &cfg).unwrap();
    let g = policy.as_gaussian().unwrap();
    let n = new.as_gaussian().unwrap();
    let mean = |p: &NaturalGaussianPolicy, s: &Vec<f64>| {
        p.precision().clone().try_inverse().unwrap() * p.u().transpose() * DVector::from_column_slice(s)
    };
    let kl = batch.states.iter().map(|s| mvn_kl(&mean(n, s), n.precision(), &mean(g, s), g.precision())).sum::<f64>()
        / batch.len() as f64;
    assert!((kl - 0.01).abs() < 0.1 * 0.01, "kl {kl}");

    let (again, _) = tnpg_update(&policy, &batch, &cfg).unwrap();
    assert_eq!(again.params(), new.params());
}

#[test]
fn trpo_never_exceeds_the_trust_region() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let policy = if i % 2 == 0 { softmax_policy(&mut rng, 3, 3, 1.0) } else { gaussian_policy(&mut rng, 2, 1) };
        let batch = batch_for(&policy, &mut rng, 60);
        let epsilon = [0.001, 0.01, 0.1][i % 3];
        let cfg = UpdateConfig {
            algo: Algo::Trpo,
            epsilon,
            trpo_entropy_bonus_coeff: 0.01 * (i % 2) as f64,
            ..UpdateConfig::default()
        };
        let (new, d) = trpo_update(&policy, &batch, &cfg).unwrap();
        assert!(new.kl(&policy, &batch.states).unwrap() <= epsilon);
        assert!(d.kl <= epsilon);
    }
}

#[test]
fn trpo_bonus_steps_along_natural_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let policy = softmax_policy(&mut rng, 3, 3, 1.0);
    let mut batch = batch_for(&policy, &mut rng, 40);
    batch.set_advantages(vec![0.0; 40], copos::rollout::BaselineKind::None).unwrap();
    let cfg = UpdateConfig {
        algo: Algo::Trpo,
        trpo_entropy_bonus_coeff: 0.01,
        natural: no_normalize(),
        ..UpdateConfig::default()
    };
    let (new, _) = trpo_update(&policy, &batch, &cfg).unwrap();
    let delta: Vec<f64> = new.params().iter().zip(policy.params()).map(|(a, b)| a - b).collect();

    // 0.01 times the central-difference entropy gradient, preconditioned by the damped Fisher
    let theta = policy.params();
    let d = theta.len();
    let h = 1e-5;
    let fd_grad: Vec<f64> = (0..d)
        .map(|j| {
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[j] += h;
            dn[j] -= h;
            let e = |p: Vec<f64>| policy.with_params(&p).unwrap().entropy(&batch.states).unwrap();
            0.01 * (e(up) - e(dn)) / (2.0 * h)
        })
        .collect();
    let op = FisherOperator::new(&policy, &batch.states, cfg.natural.damping).unwrap();
    let mut f = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        f.set_column(j, &DVector::from_vec(op.apply(&e)));
    }
    let dir = f.lu().solve(&DVector::from_vec(fd_grad)).unwrap();
    let cos = dir.dot(&DVector::from_vec(delta.clone())) / (dir.norm() * DVector::from_vec(delta).norm());
    assert!(cos > 1.0 - 1e-6, "cosine {cos}");
    assert!(new.entropy(&batch.states).unwrap() > policy.entropy(&batch.states).unwrap());
}

#[test]
fn vpg_is_linear_in_the_learning_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let policy = softmax_policy(&mut rng, 3, 4, 0.5);
    let batch = batch_for(&policy, &mut rng, 100);
    let step = |alpha: f64| {
        let cfg = UpdateConfig { algo: Algo::Vpg, vpg_learning_rate: alpha, ..UpdateConfig::default() };
        let new = vpg_update(&policy, &batch, &cfg).unwrap().0;
        new.params().iter().zip(policy.params()).map(|(a, b)| a - b).collect::<Vec<f64>>()
    };
    let (one, two) = (step(0.05), step(0.1));
    assert!(rel_err_vec(&two, &one.iter().map(|x| 2.0 * x).collect::<Vec<_>>()) < 1e-12);

    let mut flat = batch.clone();
    flat.set_advantages(vec![0.0; 100], copos::rollout::BaselineKind::None).unwrap();
    let cfg =
        UpdateConfig { algo: Algo::Vpg, vpg_learning_rate: 10.0, natural: no_normalize(), ..UpdateConfig::default() };
    assert_eq!(vpg_update(&policy, &flat, &cfg).unwrap().0.params(), policy.params());
}

#[test]
fn updater_runs_every_algorithm() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let policy = softmax_policy(&mut rng, 3, 3, 0.5);
    let batch = batch_for(&policy, &mut rng, 100);
    for algo in [Algo::Copos, Algo::Tnpg, Algo::Trpo, Algo::Vpg] {
        let mut up = Updater::new(UpdateConfig { algo, ..UpdateConfig::default() }).unwrap();
        let (new, d) = up.step(&policy, &batch, 0).unwrap();
        assert_eq!(new.param_count(), policy.param_count());
        assert!(d.entropy_before.is_finite() && d.kl.is_finite());
    }
}

#[test]
fn auto_budget_starts_from_the_first_entropy() {
    let mut up =
        Updater::new(UpdateConfig { beta_mode: BetaMode::Auto, total_iterations: 100, ..UpdateConfig::default() })
            .unwrap();
    let beta = up.beta_for(0, 1.2).unwrap();
    assert!((beta - 2.0 * 1.2 / 100.0).abs() < 1e-15);
    // H0 stays fixed afterwards
    assert!((up.beta_for(1, 1.2 - beta).unwrap() - 2.0 * 1.2 / 100.0).abs() < 1e-12);
}
