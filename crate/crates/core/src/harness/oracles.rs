//! Verification suites that compare library results against independent
//! computations (finite differences, sampling, grid search, dense algebra).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::analysis::{verify_iterative_vs_closed_form, ToyParams};
use crate::compat::{solve_natural_gradient, CompatibleSolution, FisherOperator, NaturalGradientConfig};
use crate::dual::{ConstraintKind, DualProblem};
use crate::envs::bandit::QuadraticBandit;
use crate::error::{Error, Result};
use crate::linalg;
use crate::policy::{Action, FeatureMap, NaturalGaussianPolicy, Policy, PrecisionStorage, SoftmaxPolicy};
use crate::rollout::Batch;
use crate::update::{copos_update_with_solution, BetaMode, UpdateConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleSuite {
    DualFd,
    DualMc,
    ToyClosedForm,
    BruteForceTr,
    DenseFisher,
}

impl OracleSuite {
    pub const ALL: [OracleSuite; 5] = [
        OracleSuite::DualFd,
        OracleSuite::DualMc,
        OracleSuite::ToyClosedForm,
        OracleSuite::BruteForceTr,
        OracleSuite::DenseFisher,
    ];
}

impl FromStr for OracleSuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown oracle suite {s:?}")))
    }
}

impl fmt::Display for OracleSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleSuite::DualFd => "dual_fd",
            OracleSuite::DualMc => "dual_mc",
            OracleSuite::ToyClosedForm => "toy_closed_form",
            OracleSuite::BruteForceTr => "brute_force_tr",
            OracleSuite::DenseFisher => "dense_fisher",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    fn new(suite: OracleSuite) -> Self {
        Self { suite: suite.to_string(), passed: true, checks: Vec::new() }
    }

    fn check(&mut self, name: String, measured: f64, tolerance: f64) {
        let passed = measured.is_finite() && measured < tolerance;
        self.passed &= passed;
        self.checks.push(OracleCheck { name, measured, tolerance, passed });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs one suite; checks run sequentially and deterministically.
pub fn run_oracles(suite: OracleSuite) -> Result<OracleReport> {
    let mut report = OracleReport::new(suite);
    match suite {
        OracleSuite::DualFd => dual_fd(&mut report)?,
        OracleSuite::DualMc => dual_mc(&mut report)?,
        OracleSuite::ToyClosedForm => toy_closed_form(&mut report)?,
        OracleSuite::BruteForceTr => brute_force_tr(&mut report)?,
        OracleSuite::DenseFisher => dense_fisher(&mut report)?,
    }
    Ok(report)
}

fn random_spd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() * 0.5 + DMatrix::identity(k, k) * 0.5
}

fn random_sym(k: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-scale..scale));
    (&a + a.transpose()) * 0.5
}

/// Random Gaussian dual over identity features; `nonlinear` adds per-state `w_a`.
struct GaussianInstance {
    policy: NaturalGaussianPolicy,
    states: Vec<DVector<f64>>,
    w_aa: DMatrix<f64>,
    w_sa: DMatrix<f64>,
    w_a: Option<Vec<DVector<f64>>>,
}

impl GaussianInstance {
    fn random(k: usize, nonlinear: bool, w_scale: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = 3;
        let u = DMatrix::from_fn(n, k, |_, _| rng.random_range(-0.5..0.5));
        let policy =
            NaturalGaussianPolicy::new(FeatureMap::identity(n), u, random_spd(k, rng), PrecisionStorage::Dense)?;
        let states = (0..3).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).collect();
        let w_aa = random_sym(k, w_scale, rng);
        let w_sa = DMatrix::from_fn(n, k, |_, _| rng.random_range(-w_scale..w_scale));
        let w_a = nonlinear
            .then(|| (0..3).map(|_| DVector::from_fn(k, |_, _| rng.random_range(-w_scale..w_scale))).collect());
        Ok(Self { policy, states, w_aa, w_sa, w_a })
    }

    fn problem(&self, epsilon: f64, beta: f64, kind: ConstraintKind) -> Result<DualProblem> {
        DualProblem::gaussian(
            &self.policy,
            &self.states,
            &self.w_aa,
            &self.w_sa,
            self.w_a.as_deref(),
            epsilon,
            beta,
            kind,
        )
    }

    /// `G(s, a) = -0.5 a^T W_aa a + (W_sa^T phi + w_a)^T a`.
    fn advantage(&self, i: usize, a: &DVector<f64>) -> f64 {
        let mut r = self.w_sa.tr_mul(&self.states[i]);
        if let Some(wa) = &self.w_a {
            r += &wa[i];
        }
        -0.5 * a.dot(&(&self.w_aa * a)) + r.dot(a)
    }
}

fn random_discrete(rng: &mut ChaCha8Rng, epsilon: f64, beta: f64) -> Result<DualProblem> {
    let (n, m) = (4, 5);
    let mut logp = Vec::new();
    let mut g = Vec::new();
    for _ in 0..n {
        let z: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        logp.push(linalg::softmax(&z).1);
        g.push((0..m).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    DualProblem::discrete(logp, g, epsilon, beta, ConstraintKind::EqualityEntropy)
}

fn fd_errors(p: &DualProblem, eta: f64, omega: f64) -> Option<(f64, f64)> {
    let (ge, gw) = p.gradient(eta, omega)?;
    let he = 1e-6 * eta.abs().max(1.0);
    let hw = 1e-6 * omega.abs().max(1.0);
    let fe = (p.value(eta + he, omega) - p.value(eta - he, omega)) / (2.0 * he);
    let fw = (p.value(eta, omega + hw) - p.value(eta, omega - hw)) / (2.0 * hw);
    let rel = |fd: f64, an: f64| (fd - an).abs() / an.abs().max(1e-3);
    Some((rel(fe, ge), rel(fw, gw)))
}

fn dual_fd(report: &mut OracleReport) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for variant in ["gaussian_loglinear", "gaussian_nonlinear", "discrete"] {
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let (p, eta) = match variant {
                "discrete" => (random_discrete(&mut rng, 0.05, 0.1)?, rng.random_range(0.2..5.0)),
                _ => {
                    let k = rng.random_range(1..=3);
                    let inst = GaussianInstance::random(k, variant == "gaussian_nonlinear", 0.8, &mut rng)?;
                    let p = inst.problem(0.05, 0.1, ConstraintKind::EqualityEntropy)?;
                    let eta = p.eta_lower_bound() + rng.random_range(0.3..5.0);
                    (p, eta)
                }
            };
            let omega = rng.random_range(-0.2 * eta..2.0);
            let (ee, ew) = fd_errors(&p, eta, omega).ok_or_else(|| Error::Config("infeasible oracle point".into()))?;
            worst = worst.max(ee).max(ew);
        }
        report.check(
            format!("{variant}: max rel err of dual gradient vs central differences (20 points)"),
            worst,
            1e-5,
        );
    }
    Ok(())
}

/// `log mean exp` of the samples.
fn log_mean_exp(x: &[f64]) -> f64 {
    linalg::log_sum_exp(x) - (x.len() as f64).ln()
}

fn sample_normal(mean: &DVector<f64>, chol_l: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + chol_l * z
}

fn normal_log_density(x: &DVector<f64>, mean: &DVector<f64>, precision: &DMatrix<f64>, log_det_precision: f64) -> f64 {
    let d = x - mean;
    let k = x.len() as f64;
    -0.5 * d.dot(&(precision * &d)) + 0.5 * log_det_precision - 0.5 * k * (2.0 * std::f64::consts::PI).ln()
}

/// Importance-sampled `t log ∫ pi_old^{eta/t} exp(G / t) da`.
///
/// The proposal completes the square of the log-integrand independently of
/// the dual code: precision `P = (eta Lambda + W_aa) / t`, mean
/// `(eta Lambda + W_aa)^{-1} (eta Lambda mu_old + r)`, covariance inflated by 1.1.
fn mc_state_term(
    inst: &GaussianInstance,
    i: usize,
    eta: f64,
    omega: f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let t = eta + omega;
    let s: Vec<f64> = inst.states[i].iter().copied().collect();
    let lambda = inst.policy.precision();
    let mu_old = inst.policy.mean(&s)?;
    let mut r = inst.w_sa.tr_mul(&inst.states[i]);
    if let Some(wa) = &inst.w_a {
        r += &wa[i];
    }
    let h = lambda * eta + &inst.w_aa;
    let h_inv = h.clone().try_inverse().ok_or_else(|| Error::DegeneratePrecision("eta Lambda + W_aa".into()))?;
    let mean = &h_inv * (lambda * &mu_old * eta + r);
    let cov = &h_inv * (1.1 * t);
    let l = cov.clone().cholesky().ok_or_else(|| Error::DegeneratePrecision("proposal covariance".into()))?.l();
    let prec = cov.try_inverse().ok_or_else(|| Error::DegeneratePrecision("proposal covariance".into()))?;
    let log_det_prec = prec.determinant().ln();
    let mut logw = Vec::with_capacity(samples);
    for _ in 0..samples {
        let a = sample_normal(&mean, &l, rng);
        let log_f = eta / t * inst.policy.log_prob(&s, &a)? + inst.advantage(i, &a) / t;
        logw.push(log_f - normal_log_density(&a, &mean, &prec, log_det_prec));
    }
    Ok(t * log_mean_exp(&logw))
}

fn dual_mc(report: &mut OracleReport) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (epsilon, beta) = (0.05, 0.1);
    for (idx, k) in [1usize, 2, 3, 1, 2].into_iter().enumerate() {
        let inst = GaussianInstance::random(k, idx % 2 == 1, 0.3, &mut rng)?;
        let p = inst.problem(epsilon, beta, ConstraintKind::EqualityEntropy)?;
        let eta = p.eta_lower_bound().max(0.0) + rng.random_range(2.0..4.0);
        let omega = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        for i in 0..inst.states.len() {
            acc += mc_state_term(&inst, i, eta, omega, 1_000_000, &mut rng)?;
        }
        let mc = eta * epsilon + omega * (beta - inst.policy.entropy()) + acc / inst.states.len() as f64;
        let closed = p.value(eta, omega);
        report.check(
            format!("instance {idx} (k={k}, {:?}): rel err closed form vs Monte Carlo", p.mode),
            (closed - mc).abs() / closed.abs(),
            1e-3,
        );
    }
    Ok(())
}

fn toy_closed_form(report: &mut OracleReport) -> Result<()> {
    let er = verify_iterative_vs_closed_form(&ToyParams::default())?;
    report.check(
        "entropy regularization (eta=10, omega=1), 200 steps: max |dB|, |db|".into(),
        er.max_deviation(),
        1e-9,
    );
    let ng = verify_iterative_vs_closed_form(&ToyParams { omega: 0.0, ..ToyParams::default() })?;
    report.check("natural gradient (eta=10, omega=0), 200 steps: max |dB|, |db|".into(), ng.max_deviation(), 1e-9);
    Ok(())
}

/// Gaussian quantities of the stateless toy as functions of `(B, mu)`.
fn toy_kl(b: f64, mu: f64, b_old: f64, mu_old: f64) -> f64 {
    0.5 * (b_old / b - 1.0 + (b / b_old).ln() + b_old * (mu - mu_old) * (mu - mu_old))
}

fn toy_entropy(b: f64) -> f64 {
    0.5 * ((2.0 * std::f64::consts::PI).ln() + 1.0) - 0.5 * b.ln()
}

/// Total variation between two univariate normals by trapezoidal quadrature.
pub fn normal_tv(mu1: f64, var1: f64, mu2: f64, var2: f64) -> f64 {
    let lo = (mu1 - 12.0 * var1.sqrt()).min(mu2 - 12.0 * var2.sqrt());
    let hi = (mu1 + 12.0 * var1.sqrt()).max(mu2 + 12.0 * var2.sqrt());
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let pdf = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let mut acc = 0.0;
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        acc += w * (pdf(x, mu1, var1) - pdf(x, mu2, var2)).abs();
    }
    0.5 * acc * h
}

/// Maximize `E[R]` over `(B, mu)` subject to the KL and entropy constraints by
/// nested grid refinement.
pub fn brute_force_toy(env: &QuadraticBandit, b_old: f64, mu_old: f64, epsilon: f64, beta: f64) -> (f64, f64) {
    let b_max = b_old * (2.0 * beta).exp();
    let reward = |b: f64, mu: f64| -0.5 * env.r_quad * (mu * mu + 1.0 / b) + env.r_lin * mu;
    let feasible =
        |b: f64, mu: f64| toy_kl(b, mu, b_old, mu_old) <= epsilon && toy_entropy(b) >= toy_entropy(b_old) - beta;
    let (mut b_lo, mut b_hi) = (0.5 * b_old, b_max.max(0.5 * b_old) * 1.5);
    let (mut m_lo, mut m_hi) = (mu_old - 1.0, mu_old + 1.0);
    let mut best = (b_old, mu_old);
    for _ in 0..8 {
        let n = 400;
        let mut best_r = f64::NEG_INFINITY;
        for i in 0..=n {
            let b = b_lo + (b_hi - b_lo) * i as f64 / n as f64;
            for j in 0..=n {
                let mu = m_lo + (m_hi - m_lo) * j as f64 / n as f64;
                if b > 0.0 && feasible(b, mu) {
                    let r = reward(b, mu);
                    if r > best_r {
                        best_r = r;
                        best = (b, mu);
                    }
                }
            }
        }
        let (db, dm) = ((b_hi - b_lo) / n as f64 * 4.0, (m_hi - m_lo) / n as f64 * 4.0);
        (b_lo, b_hi, m_lo, m_hi) = (best.0 - db, best.0 + db, best.1 - dm, best.1 + dm);
    }
    best
}

/// COPOS closed-form update of the toy with dual-solved multipliers.
pub fn copos_toy_update(
    env: &QuadraticBandit,
    b_old: f64,
    lin_old: f64,
    epsilon: f64,
    beta: f64,
) -> Result<(f64, f64)> {
    let policy = Policy::Gaussian(QuadraticBandit::policy(b_old, lin_old)?);
    let w = vec![env.r_quad, env.r_lin];
    let g = crate::compat::fisher_vector_product(&policy, &[QuadraticBandit::state()], &w, 0.0)?;
    let sol = CompatibleSolution::from_parts(w, g, &policy)?;
    let batch =
        Batch::from_samples(vec![QuadraticBandit::state()], vec![Action::Continuous(DVector::zeros(1))], vec![0.0])?;
    let cfg =
        UpdateConfig { epsilon, beta_mode: BetaMode::Fixed(beta), entropy_equality: false, ..UpdateConfig::default() };
    let new = copos_update_with_solution(&policy, &batch, &sol, &cfg, Some(beta))?.0;
    let p = new.as_gaussian().unwrap();
    Ok((p.precision()[(0, 0)], p.mean(&QuadraticBandit::state())?[0]))
}

fn brute_force_tr(report: &mut OracleReport) -> Result<()> {
    let env = QuadraticBandit::new(1.0, 1.0)?;
    for (b_old, mu_old, epsilon, beta) in [(1.0, 0.0, 0.01, 0.005), (1.0, 0.0, 0.05, 0.02), (2.0, 0.3, 0.01, 0.001)] {
        let (b_c, mu_c) = copos_toy_update(&env, b_old, mu_old * b_old, epsilon, beta)?;
        let (b_bf, mu_bf) = brute_force_toy(&env, b_old, mu_old, epsilon, beta);
        report.check(
            format!("B0={b_old}, mu0={mu_old}, eps={epsilon}, beta={beta}: TV(copos, brute force)"),
            normal_tv(mu_c, 1.0 / b_c, mu_bf, 1.0 / b_bf),
            1e-2,
        );
    }
    Ok(())
}

fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / linalg::norm(b).max(f64::MIN_POSITIVE)
}

fn dense_fisher(report: &mut OracleReport) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
    let policy = Policy::Softmax(SoftmaxPolicy::new(FeatureMap::identity(4), theta)?);
    let states: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let d = policy.param_count();

    // sum_a pi(a) grad grad^T, averaged over states
    let mut dense = DMatrix::zeros(d, d);
    for s in &states {
        let (p, _) = policy.as_softmax().unwrap().distribution(s)?;
        for (a, pa) in p.iter().enumerate() {
            let g = DVector::from_vec(policy.grad_log_prob(s, &Action::Discrete(a))?);
            dense += &g * g.transpose() * *pa;
        }
    }
    dense /= states.len() as f64;

    let op = FisherOperator::new(&policy, &states, 0.0)?;
    let mut fvp = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        fvp.set_column(j, &DVector::from_vec(op.apply(&e)));
    }
    report.check("FVP columns vs dense sum_a pi(a) grad grad^T".into(), (&fvp - &dense).norm() / dense.norm(), 1e-6);

    // CG solve of (F + delta I) w = g against a dense solve
    let actions: Vec<Action> = states.iter().map(|_| Action::Discrete(rng.random_range(0..3))).collect();
    let adv: Vec<f64> = states.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = Batch::from_samples(states.clone(), actions, adv)?;
    let cfg = NaturalGradientConfig { damping: 1e-4, cg_iters: 50, cg_tol: 1e-14, normalize_advantages: false };
    let sol = solve_natural_gradient(&policy, &batch, &cfg)?;
    let damped = &dense + DMatrix::identity(d, d) * 1e-4;
    let direct =
        damped.lu().solve(&DVector::from_column_slice(&sol.g)).ok_or_else(|| Error::Config("singular".into()))?;
    report.check("CG w vs dense solve of (F + 1e-4 I) w = g".into(), rel_err_vec(&sol.w, direct.as_slice()), 1e-6);
    Ok(())
}
