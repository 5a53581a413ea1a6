//! Closed-form iterates of the quadratic-bandit study and their cross-checks
//! against the update engines.
//!
//! The policy is `pi(a) ∝ exp(-0.5 B a^2 + b a)` and the reward
//! `R(a) = -0.5 R a^2 + r a`, so with infinitely many samples the compatible
//! solution is exactly `w = [R, r]`. With constant multipliers the update
//! `theta <- (eta theta + w) / (eta + omega)` is linear and can be unrolled.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compat::{fisher_vector_product, solve_natural_gradient, CompatibleSolution, NaturalGradientConfig};
use crate::envs::bandit::{bandit_expected_reward, QuadraticBandit};
use crate::error::{Error, Result};
use crate::policy::{Action, NaturalGaussianPolicy, Policy};
use crate::rollout::Batch;
use crate::update::{copos_update_with_solution, vpg_update, BetaMode, EntropySchedule, UpdateConfig};

/// Inputs of the toy study: initial `(B0, b0)`, reward `(R, r)`, multipliers, iteration count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyParams {
    pub b0_prec: f64,
    pub b0_lin: f64,
    pub r_quad: f64,
    pub r_lin: f64,
    pub eta: f64,
    pub omega: f64,
    pub n: usize,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self { b0_prec: 1.0, b0_lin: 0.0, r_quad: 1.0, r_lin: 1.0, eta: 10.0, omega: 1.0, n: 200 }
    }
}

/// Sequences of length `n + 1` (index 0 is the initial policy).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyIterates {
    pub params: ToyParams,
    /// `B_n`.
    pub precision: Vec<f64>,
    /// `b_n`.
    pub linear: Vec<f64>,
    /// `d_n = mu_n - a*`.
    pub distance: Vec<f64>,
    pub entropy: Vec<f64>,
    /// Some `B_n` was not strictly positive.
    pub divergent: bool,
}

impl ToyIterates {
    fn from_sequences(params: ToyParams, precision: Vec<f64>, linear: Vec<f64>, distance: Vec<f64>) -> Self {
        let divergent = precision.iter().any(|&b| !(b > 0.0));
        let entropy = precision.iter().map(|&b| gaussian_entropy(b)).collect();
        Self { params, precision, linear, distance, entropy, divergent }
    }

    /// `(c0, c1, c2)` of the asymptotic form of `d_n`: `c0 / (c1 + c2 n)` for the
    /// natural gradient, `c0 / (c1 + c2^n)` with entropy regularization.
    pub fn asymptotic_constants(&self) -> (f64, f64, f64) {
        let p = &self.params;
        let num = p.b0_lin - p.r_lin * p.b0_prec / p.r_quad;
        if p.omega == 0.0 {
            (num, p.b0_prec, p.r_quad / p.eta)
        } else {
            let scale = p.omega / p.r_quad;
            (num * scale, p.b0_prec * scale - 1.0, (p.eta + p.omega) / p.eta)
        }
    }
}

fn gaussian_entropy(precision: f64) -> f64 {
    0.5 * ((2.0 * PI).ln() + 1.0) - 0.5 * precision.ln()
}

fn check_toy(b0: f64, r_quad: f64, eta: f64) -> Result<()> {
    if !(eta > 0.0 && r_quad > 0.0 && b0 > 0.0) {
        return Err(Error::Config(format!("toy needs eta, R, B0 > 0 (got eta={eta}, R={r_quad}, B0={b0})")));
    }
    Ok(())
}

/// `B_n = B0 + n R / eta`, `b_n = b0 + n r / eta`.
pub fn natural_gradient_iterates(
    b0_prec: f64,
    b0_lin: f64,
    r_quad: f64,
    r_lin: f64,
    eta: f64,
    n: usize,
) -> Result<ToyIterates> {
    check_toy(b0_prec, r_quad, eta)?;
    let params = ToyParams { b0_prec, b0_lin, r_quad, r_lin, eta, omega: 0.0, n };
    let num = (b0_lin * r_quad - r_lin * b0_prec) / r_quad;
    let mut big = Vec::with_capacity(n + 1);
    let mut small = Vec::with_capacity(n + 1);
    let mut dist = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let k = i as f64;
        let bn = b0_prec + k * r_quad / eta;
        big.push(bn);
        small.push(b0_lin + k * r_lin / eta);
        dist.push(num / bn);
    }
    Ok(ToyIterates::from_sequences(params, big, small, dist))
}

/// Constant-multiplier iterates with entropy regularization, `q = eta / (eta + omega)`:
/// `B_n = B0 q^n + (R / omega)(1 - q^n)`, likewise `b_n` with `r`, and
/// `d_n = (b0 - r B0 / R) / (B0 + (R / omega)(q^-n - 1))`.
pub fn entropy_reg_iterates(
    b0_prec: f64,
    b0_lin: f64,
    r_quad: f64,
    r_lin: f64,
    eta: f64,
    omega: f64,
    n: usize,
) -> Result<ToyIterates> {
    if omega == 0.0 {
        return natural_gradient_iterates(b0_prec, b0_lin, r_quad, r_lin, eta, n);
    }
    check_toy(b0_prec, r_quad, eta)?;
    if !(omega > 0.0) {
        return Err(Error::Config(format!("entropy regularization needs omega > 0, got {omega}")));
    }
    let params = ToyParams { b0_prec, b0_lin, r_quad, r_lin, eta, omega, n };
    let q = eta / (eta + omega);
    let num = b0_lin - r_lin * b0_prec / r_quad;
    let mut big = Vec::with_capacity(n + 1);
    let mut small = Vec::with_capacity(n + 1);
    let mut dist = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let qn = q.powi(i as i32);
        big.push(b0_prec * qn + r_quad / omega * (1.0 - qn));
        small.push(b0_lin * qn + r_lin / omega * (1.0 - qn));
        dist.push(num / (b0_prec + r_quad / omega * (qn.recip() - 1.0)));
    }
    Ok(ToyIterates::from_sequences(params, big, small, dist))
}

pub fn closed_form(params: &ToyParams) -> Result<ToyIterates> {
    let p = params;
    entropy_reg_iterates(p.b0_prec, p.b0_lin, p.r_quad, p.r_lin, p.eta, p.omega, p.n)
}

/// Least-squares slope of `y` against `x`.
pub fn fitted_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn toy_batch() -> Result<Batch> {
    Batch::from_samples(
        vec![QuadraticBandit::state()],
        vec![Action::Continuous(nalgebra::DVector::zeros(1))],
        vec![0.0],
    )
}

/// Exact compatible solution `w = [R, r]` with its gradient `g = F w`.
fn exact_solution(policy: &Policy, env: &QuadraticBandit) -> Result<CompatibleSolution> {
    let w = vec![env.r_quad, env.r_lin];
    let g = fisher_vector_product(policy, &[QuadraticBandit::state()], &w, 0.0)?;
    CompatibleSolution::from_parts(w, g, policy)
}

fn toy_policy(precision: f64, linear: f64) -> Result<Policy> {
    Ok(Policy::Gaussian(QuadraticBandit::policy(precision, linear)?))
}

fn read_toy(policy: &Policy) -> (f64, f64) {
    let p = policy.as_gaussian().expect("toy policy is Gaussian");
    (p.precision()[(0, 0)], p.u()[(0, 0)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyReport {
    pub iterations: usize,
    pub max_dev_precision: f64,
    pub max_dev_linear: f64,
    pub iterative: ToyIterates,
    pub closed_form: ToyIterates,
}

impl ToyReport {
    pub fn max_deviation(&self) -> f64 {
        self.max_dev_precision.max(self.max_dev_linear)
    }
}

/// Runs the COPOS update with fixed multipliers and exact advantages for
/// `n` steps and compares with the closed-form iterates.
pub fn verify_iterative_vs_closed_form(params: &ToyParams) -> Result<ToyReport> {
    let closed = closed_form(params)?;
    let env = QuadraticBandit::new(params.r_quad, params.r_lin)?;
    let cfg = UpdateConfig { fixed_multipliers: Some((params.eta, params.omega)), ..UpdateConfig::default() };
    let batch = toy_batch()?;
    let mut policy = toy_policy(params.b0_prec, params.b0_lin)?;
    let (mut big, mut small) = (vec![params.b0_prec], vec![params.b0_lin]);
    for _ in 0..params.n {
        let sol = exact_solution(&policy, &env)?;
        policy = copos_update_with_solution(&policy, &batch, &sol, &cfg, None)?.0;
        let (bn, sn) = read_toy(&policy);
        big.push(bn);
        small.push(sn);
    }
    let a_star = env.optimum();
    let dist = big.iter().zip(&small).map(|(bn, sn)| sn / bn - a_star).collect();
    let iterative = ToyIterates::from_sequences(*params, big, small, dist);
    let max_dev = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(ToyReport {
        iterations: params.n,
        max_dev_precision: max_dev(&iterative.precision, &closed.precision),
        max_dev_linear: max_dev(&iterative.linear, &closed.linear),
        iterative,
        closed_form: closed,
    })
}

/// Constant-multiplier iterates with `w` estimated from `samples` sampled actions per step.
pub fn sampled_iterates(params: &ToyParams, samples: usize, seed: u64) -> Result<ToyIterates> {
    let env = QuadraticBandit::new(params.r_quad, params.r_lin)?;
    let cfg = UpdateConfig { fixed_multipliers: Some((params.eta, params.omega)), ..UpdateConfig::default() };
    let ng = NaturalGradientConfig { normalize_advantages: false, damping: 0.0, ..NaturalGradientConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = toy_policy(params.b0_prec, params.b0_lin)?;
    let (mut big, mut small) = (vec![params.b0_prec], vec![params.b0_lin]);
    for _ in 0..params.n {
        let batch = sample_batch(&policy, &env, samples, &mut rng)?;
        let sol = solve_natural_gradient(&policy, &batch, &ng)?;
        policy = copos_update_with_solution(&policy, &batch, &sol, &cfg, None)?.0;
        let (bn, sn) = read_toy(&policy);
        big.push(bn);
        small.push(sn);
    }
    let a_star = env.optimum();
    let dist = big.iter().zip(&small).map(|(bn, sn)| sn / bn - a_star).collect();
    Ok(ToyIterates::from_sequences(*params, big, small, dist))
}

/// `samples` actions with reward-minus-mean advantages.
fn sample_batch(policy: &Policy, env: &QuadraticBandit, samples: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let s = QuadraticBandit::state();
    let mut actions = Vec::with_capacity(samples);
    let mut rewards = Vec::with_capacity(samples);
    for _ in 0..samples {
        let a = policy.sample(&s, rng)?;
        rewards.push(env.reward(a.as_continuous().unwrap()[0]));
        actions.push(a);
    }
    let mean = rewards.iter().sum::<f64>() / samples as f64;
    let adv = rewards.iter().map(|r| r - mean).collect();
    Batch::from_samples(vec![s; samples], actions, adv)
}

/// One row of a bandit comparison panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelPoint {
    pub iter: usize,
    pub distance: f64,
    pub reward: f64,
    pub entropy: f64,
    /// KL between the previous and the current policy (0 at iteration 0).
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelSeries {
    pub method: String,
    pub points: Vec<PanelPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelConfig {
    pub toy: ToyParams,
    /// Trust-region bound for the bottom panel.
    pub epsilon: f64,
    pub vpg_learning_rate: f64,
    pub vpg_samples: usize,
    pub seed: u64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self { toy: ToyParams::default(), epsilon: 0.01, vpg_learning_rate: 1000.0, vpg_samples: 1000, seed: 0 }
    }
}

fn point(iter: usize, policy: &Policy, prev: Option<&Policy>, env: &QuadraticBandit) -> Result<PanelPoint> {
    let g: &NaturalGaussianPolicy = policy.as_gaussian().unwrap();
    let s = [QuadraticBandit::state()];
    Ok(PanelPoint {
        iter,
        distance: g.mean(&s[0])?[0] - env.optimum(),
        reward: bandit_expected_reward(g, env)?,
        entropy: g.entropy(),
        kl: match prev {
            Some(p) => policy.kl(p, &s)?,
            None => 0.0,
        },
    })
}

fn run_series(
    method: &str,
    cfg: &PanelConfig,
    env: &QuadraticBandit,
    mut step: impl FnMut(usize, &Policy) -> Result<Policy>,
) -> Result<PanelSeries> {
    let mut policy = toy_policy(cfg.toy.b0_prec, cfg.toy.b0_lin)?;
    let mut points = vec![point(0, &policy, None, env)?];
    for i in 0..cfg.toy.n {
        let next = step(i, &policy)?;
        points.push(point(i + 1, &next, Some(&policy), env)?);
        policy = next;
    }
    Ok(PanelSeries { method: method.into(), points })
}

fn vpg_series(method: &str, cfg: &PanelConfig, env: &QuadraticBandit) -> Result<PanelSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ucfg = UpdateConfig { vpg_learning_rate: cfg.vpg_learning_rate, ..UpdateConfig::default() };
    ucfg.natural.normalize_advantages = false;
    run_series(method, cfg, env, |_, p| {
        let batch = sample_batch(p, env, cfg.vpg_samples, &mut rng)?;
        Ok(vpg_update(p, &batch, &ucfg)?.0)
    })
}

/// Constant learning rates: natural gradient, entropy regularization, vanilla PG.
pub fn constant_rate_panel(cfg: &PanelConfig) -> Result<Vec<PanelSeries>> {
    let env = QuadraticBandit::new(cfg.toy.r_quad, cfg.toy.r_lin)?;
    let batch = toy_batch()?;
    let fixed =
        |eta: f64, omega: f64| UpdateConfig { fixed_multipliers: Some((eta, omega)), ..UpdateConfig::default() };
    let ng = fixed(cfg.toy.eta, 0.0);
    let er = fixed(cfg.toy.eta, cfg.toy.omega);
    Ok(vec![
        run_series("natural_gradient", cfg, &env, |_, p| {
            Ok(copos_update_with_solution(p, &batch, &exact_solution(p, &env)?, &ng, None)?.0)
        })?,
        run_series("entropy_regularization", cfg, &env, |_, p| {
            Ok(copos_update_with_solution(p, &batch, &exact_solution(p, &env)?, &er, None)?.0)
        })?,
        vpg_series("policy_gradient", cfg, &env)?,
    ])
}

/// Largest step along the exact gradient whose KL equals the bound.
fn trust_region_gradient_step(policy: &Policy, env: &QuadraticBandit, epsilon: f64) -> Result<Policy> {
    let sol = exact_solution(policy, env)?;
    let s = [QuadraticBandit::state()];
    let theta = policy.params();
    let at = |alpha: f64| -> Option<Policy> {
        let p: Vec<f64> = theta.iter().zip(&sol.g).map(|(t, g)| t + alpha * g).collect();
        policy.with_params(&p).ok()
    };
    let kl_excess = |alpha: f64| at(alpha).and_then(|p| p.kl(policy, &s).ok()).map_or(f64::INFINITY, |k| k - epsilon);
    let (mut lo, mut hi) = (0.0, 1.0);
    while kl_excess(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if kl_excess(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(lo).ok_or_else(|| Error::DegeneratePrecision("gradient step left the precision cone".into()))
}

/// Trust-region updates with dual-solved multipliers: natural gradient,
/// entropy driven linearly to zero, zero entropy loss, and the largest
/// vanilla-gradient step inside the trust region.
pub fn trust_region_panel(cfg: &PanelConfig) -> Result<Vec<PanelSeries>> {
    let env = QuadraticBandit::new(cfg.toy.r_quad, cfg.toy.r_lin)?;
    let batch = toy_batch()?;
    let n = cfg.toy.n;
    let kl_only = UpdateConfig { epsilon: cfg.epsilon, beta_mode: BetaMode::None, ..UpdateConfig::default() };
    let equality = UpdateConfig {
        epsilon: cfg.epsilon,
        beta_mode: BetaMode::Auto,
        entropy_equality: true,
        ..UpdateConfig::default()
    };
    let h0 = gaussian_entropy(cfg.toy.b0_prec);
    // -H0 at 2n, so zero at n
    let schedule = EntropySchedule::auto(h0, 2 * n);

    let dual_step = |p: &Policy, ucfg: &UpdateConfig, beta: Option<f64>| -> Result<Policy> {
        Ok(copos_update_with_solution(p, &batch, &exact_solution(p, &env)?, ucfg, beta)?.0)
    };
    Ok(vec![
        run_series("natural_gradient", cfg, &env, |_, p| dual_step(p, &kl_only, None))?,
        run_series("entropy_to_zero", cfg, &env, |i, p| {
            let h = p.entropy(&batch.states)?;
            dual_step(p, &equality, Some(crate::update::entropy_budget(&schedule, i, h)))
        })?,
        run_series("zero_entropy_loss", cfg, &env, |_, p| dual_step(p, &equality, Some(0.0)))?,
        run_series("policy_gradient", cfg, &env, |_, p| trust_region_gradient_step(p, &env, cfg.epsilon))?,
    ])
}

/// Long-format CSV: `method,iter,distance,reward,entropy,kl`.
pub fn panel_csv(series: &[PanelSeries]) -> String {
    let mut out = String::from("method,iter,distance,reward,entropy,kl\n");
    for s in series {
        for p in &s.points {
            let _ = writeln!(out, "{},{},{:e},{:e},{:e},{:e}", s.method, p.iter, p.distance, p.reward, p.entropy, p.kl);
        }
    }
    out
}

pub fn write_panel(series: &[PanelSeries], path: &Path) -> Result<()> {
    std::fs::write(path, panel_csv(series))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_gradient_distances() {
        let it = natural_gradient_iterates(1.0, 0.0, 1.0, 1.0, 10.0, 90).unwrap();
        assert_eq!(it.distance[0], -1.0);
        assert!((it.distance[10] + 0.5).abs() < 1e-15);
        assert!((it.distance[90] + 0.1).abs() < 1e-15);
        assert!(it.entropy.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn start_at_optimum_stays_there() {
        for omega in [0.0, 1.0] {
            let it = entropy_reg_iterates(2.0, 3.0, 1.0, 1.5, 10.0, omega, 50).unwrap();
            assert!(it.distance.iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn entropy_reg_first_step_and_limit() {
        // (10 * 1 + 1) / 11 and (10 * 0 + 1) / 11
        let it = entropy_reg_iterates(1.0, 0.0, 1.0, 1.0, 10.0, 1.0, 600).unwrap();
        assert!((it.precision[1] - 1.0).abs() < 1e-15);
        assert!((it.linear[1] - 1.0 / 11.0).abs() < 1e-15);
        assert!((it.linear[600] - 1.0).abs() < 1e-8);
        let it = entropy_reg_iterates(3.0, 0.0, 1.0, 1.0, 10.0, 0.5, 600).unwrap();
        assert!((it.precision[600] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn distance_matches_ratio_of_iterates() {
        let it = entropy_reg_iterates(2.0, -1.0, 1.5, 0.7, 5.0, 0.3, 80).unwrap();
        for i in 0..=80 {
            let d = it.linear[i] / it.precision[i] - 0.7 / 1.5;
            assert!((d - it.distance[i]).abs() < 1e-12 * (1.0 + d.abs()));
        }
    }

    #[test]
    fn asymptotic_form_reproduces_distance() {
        let it = entropy_reg_iterates(1.0, 0.0, 1.0, 1.0, 10.0, 1.0, 30).unwrap();
        let (c0, c1, c2) = it.asymptotic_constants();
        for (i, d) in it.distance.iter().enumerate() {
            assert!((c0 / (c1 + c2.powi(i as i32)) - d).abs() < 1e-12);
        }
    }
}
