//! Lagrangian duals of the entropy-regularized trust-region problem.
//!
//! With the compatible advantage `G(s, a)` fixed, the update
//!
//! ```text
//! max_pi  E_s E_pi[G]   s.t.  E_s KL(pi || pi_old) <= eps,   E_s H(pi) >= E_s H(pi_old) - beta_H
//! ```
//!
//! is solved by `pi* ∝ pi_old^{eta/(eta+omega)} exp(G / (eta+omega))`, where
//! `(eta, omega)` minimize
//!
//! ```text
//! g(eta, omega) = eta eps + omega (beta_H - H_old)
//!               + (eta + omega) E_s log ∫ pi_old(a|s)^{eta/(eta+omega)} exp(G(s,a) / (eta+omega)) da.
//! ```
//!
//! `G` is the uncentered compatible advantage `psi(s,a)^T w` (for the Gaussian
//! `-0.5 a^T W_aa a + phi^T W_sa a + w_a(s)^T a`). Dropping the state-only
//! terms shifts `g` by a constant and leaves the minimizer unchanged. For
//! Gaussians the action integral is closed-form; for discrete actions it is a
//! log-sum-exp. Infeasible points evaluate to `+inf`.

pub mod solver;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub use solver::{solve_dual, solve_omega, SolverConfig};

use crate::compat::CompatibleSolution;
use crate::error::{Error, Result};
use crate::linalg;
use crate::policy::{NaturalGaussianPolicy, Policy};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualMode {
    GaussianLogLinear,
    GaussianNonlinear,
    Discrete,
}

/// How the entropy budget enters the problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// No entropy constraint (`omega = 0`).
    KlOnly,
    /// Entropy may drop by at most `beta_H` (`omega >= 0`).
    Inequality,
    /// Entropy drops by exactly `beta_H` (`omega` of either sign, `eta + omega > 0`).
    EqualityEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSolution {
    pub eta: f64,
    pub omega: f64,
    pub dual_value: f64,
    pub converged: bool,
    pub evaluations: usize,
    /// Mean KL of the induced policy from the old one.
    pub kl: f64,
    /// Mean entropy of the induced policy.
    pub entropy: f64,
    /// False when the KL bound is slack at the smallest admissible `eta`.
    pub kl_active: bool,
}

/// Statistics of the policy induced by `(eta, omega)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Induced {
    pub kl: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
struct GaussianData {
    k: usize,
    lambda: DMatrix<f64>,
    log_det_lambda: f64,
    w_aa: DMatrix<f64>,
    /// `U^T phi(s)` per state (equals `Lambda mu(s)`).
    c: Vec<DVector<f64>>,
    /// `W_sa^T phi(s) + w_a(s)` per state.
    r: Vec<DVector<f64>>,
    mu: Vec<DVector<f64>>,
    /// `c^T Sigma c` per state.
    c_sigma_c: Vec<f64>,
    lambda_chol: Cholesky<f64, Dyn>,
}

#[derive(Debug, Clone)]
struct DiscreteData {
    log_pi_old: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
enum Data {
    Gaussian(GaussianData),
    Discrete(DiscreteData),
}

#[derive(Debug, Clone)]
pub struct DualProblem {
    pub epsilon: f64,
    pub beta_h: f64,
    pub constraint: ConstraintKind,
    pub mode: DualMode,
    /// Mean entropy of the old policy over the states.
    pub entropy_old: f64,
    /// Starting scale for `eta`.
    pub eta_hint: Option<f64>,
    data: Data,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("epsilon must be positive, got {epsilon}")))
    }
}

impl DualProblem {
    /// Gaussian dual from old-policy features `phi(s)` and the compatible blocks.
    /// Passing `w_a` (one `k`-vector per state) selects the nonlinear variant.
    #[allow(clippy::too_many_arguments)]
    pub fn gaussian(
        old: &NaturalGaussianPolicy,
        phis: &[DVector<f64>],
        w_aa: &DMatrix<f64>,
        w_sa: &DMatrix<f64>,
        w_a: Option<&[DVector<f64>]>,
        epsilon: f64,
        beta_h: f64,
        constraint: ConstraintKind,
    ) -> Result<Self> {
        check_epsilon(epsilon)?;
        if phis.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let k = old.action_dim();
        let n = old.feature_dim();
        if w_aa.shape() != (k, k) || w_sa.shape() != (n, k) {
            return Err(Error::DimensionMismatch("compatible blocks do not match the policy".into()));
        }
        if let Some(wa) = w_a {
            if wa.len() != phis.len() || wa.iter().any(|v| v.len() != k) {
                return Err(Error::DimensionMismatch("w_a needs one action-sized vector per state".into()));
            }
        }
        let sigma = old.covariance();
        let mut c = Vec::with_capacity(phis.len());
        let mut r = Vec::with_capacity(phis.len());
        let mut mu = Vec::with_capacity(phis.len());
        let mut c_sigma_c = Vec::with_capacity(phis.len());
        for (i, phi) in phis.iter().enumerate() {
            if phi.len() != n {
                return Err(Error::DimensionMismatch("feature vector length".into()));
            }
            let ci = old.u().tr_mul(phi);
            let mut ri = w_sa.tr_mul(phi);
            if let Some(wa) = w_a {
                ri += &wa[i];
            }
            let mi = sigma * &ci;
            c_sigma_c.push(ci.dot(&mi));
            c.push(ci);
            r.push(ri);
            mu.push(mi);
        }
        let lambda = old.precision().clone();
        let lambda_chol = linalg::cholesky_pd(&lambda)
            .ok_or_else(|| Error::DegeneratePrecision("old precision not positive definite".into()))?;
        Ok(Self {
            epsilon,
            beta_h,
            constraint,
            mode: if w_a.is_some() { DualMode::GaussianNonlinear } else { DualMode::GaussianLogLinear },
            entropy_old: old.entropy(),
            eta_hint: None,
            data: Data::Gaussian(GaussianData {
                k,
                lambda,
                log_det_lambda: old.log_det_precision(),
                w_aa: linalg::symmetrize(w_aa),
                c,
                r,
                mu,
                c_sigma_c,
                lambda_chol,
            }),
        })
    }

    /// Discrete dual from per-state old log-probabilities and compatible advantages `G(s, a)`.
    pub fn discrete(
        log_pi_old: Vec<Vec<f64>>,
        g_tilde: Vec<Vec<f64>>,
        epsilon: f64,
        beta_h: f64,
        constraint: ConstraintKind,
    ) -> Result<Self> {
        check_epsilon(epsilon)?;
        if log_pi_old.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if log_pi_old.len() != g_tilde.len() || log_pi_old.iter().zip(&g_tilde).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::DimensionMismatch("log-probabilities and advantages differ in shape".into()));
        }
        let entropy_old = log_pi_old
            .iter()
            .map(|lp| {
                let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                crate::policy::softmax::shannon_entropy(&p, lp)
            })
            .sum::<f64>()
            / log_pi_old.len() as f64;
        Ok(Self {
            epsilon,
            beta_h,
            constraint,
            mode: DualMode::Discrete,
            entropy_old,
            eta_hint: None,
            data: Data::Discrete(DiscreteData { log_pi_old, g: g_tilde }),
        })
    }

    /// Build the dual for `policy` over `states` from a natural-gradient solution.
    pub fn from_solution(
        policy: &Policy,
        states: &[Vec<f64>],
        sol: &CompatibleSolution,
        epsilon: f64,
        beta_h: f64,
        constraint: ConstraintKind,
    ) -> Result<Self> {
        let w_beta = sol.w_beta();
        let nonlinear = !w_beta.is_empty() && w_beta.iter().any(|&x| x != 0.0);
        let mut problem = match policy {
            Policy::Gaussian(p) => {
                let mut phis = Vec::with_capacity(states.len());
                let mut w_a = Vec::with_capacity(states.len());
                for s in states {
                    let trace = p.features().trace(s);
                    if nonlinear {
                        w_a.push(p.u().tr_mul(&p.features().jvp(&trace, w_beta)));
                    }
                    phis.push(trace.output);
                }
                let (w_aa, w_sa) = (sol.w_aa().unwrap(), sol.w_sa().unwrap());
                let wa = if nonlinear { Some(w_a.as_slice()) } else { None };
                Self::gaussian(p, &phis, &w_aa, &w_sa, wa, epsilon, beta_h, constraint)?
            }
            Policy::Softmax(p) => {
                let w_theta = sol.w_theta().unwrap();
                let mut logp = Vec::with_capacity(states.len());
                let mut g = Vec::with_capacity(states.len());
                for s in states {
                    let trace = p.features().trace(s);
                    let z = p.logits_from_features(&trace.output);
                    logp.push(linalg::softmax(&z).1);
                    let mut gs = &w_theta * &trace.output;
                    if nonlinear {
                        gs += p.theta() * p.features().jvp(&trace, w_beta);
                    }
                    g.push(gs.iter().copied().collect());
                }
                Self::discrete(logp, g, epsilon, beta_h, constraint)?
            }
        };
        let hint = sol.g_norm() / (epsilon * sol.w_norm());
        if hint.is_finite() && hint > 0.0 {
            problem.eta_hint = Some(hint);
        }
        Ok(problem)
    }

    pub fn state_count(&self) -> usize {
        match &self.data {
            Data::Gaussian(d) => d.c.len(),
            Data::Discrete(d) => d.g.len(),
        }
    }

    /// Target mean entropy `H_old - beta_H`.
    pub fn entropy_target(&self) -> f64 {
        self.entropy_old - self.beta_h
    }

    /// Infimum of `eta` for which the dual is finite (`eta Lambda + W_aa ≻ 0` for Gaussians).
    pub fn eta_lower_bound(&self) -> f64 {
        match &self.data {
            Data::Gaussian(d) => linalg::pd_threshold(&d.lambda_chol, &d.w_aa).max(0.0),
            Data::Discrete(_) => 0.0,
        }
    }

    fn entropy_term(&self, omega: f64) -> f64 {
        if omega == 0.0 {
            0.0
        } else {
            omega * (self.beta_h - self.entropy_old)
        }
    }

    /// Dual value; `+inf` outside the feasible region.
    pub fn value(&self, eta: f64, omega: f64) -> f64 {
        let t = eta + omega;
        if !(eta > 0.0) || !(t > 0.0) || !t.is_finite() {
            return f64::INFINITY;
        }
        let base = eta * self.epsilon + self.entropy_term(omega);
        match &self.data {
            Data::Gaussian(d) => {
                let h = &d.lambda * eta + &d.w_aa;
                let Some(chol) = linalg::cholesky_pd(&h) else {
                    return f64::INFINITY;
                };
                let log_det_h = linalg::log_det_chol(&chol);
                let mut acc = 0.0;
                for i in 0..d.c.len() {
                    let h_a = &d.c[i] * eta + &d.r[i];
                    acc += 0.5 * (h_a.dot(&chol.solve(&h_a)) - eta * d.c_sigma_c[i]);
                }
                let k = d.k as f64;
                base + acc / d.c.len() as f64 - 0.5 * eta * (k * LN_2PI - d.log_det_lambda)
                    + 0.5 * t * (k * (LN_2PI + t.ln()) - log_det_h)
            }
            Data::Discrete(d) => {
                let q = eta / t;
                let mut acc = 0.0;
                let mut x = Vec::new();
                for (lp, g) in d.log_pi_old.iter().zip(&d.g) {
                    x.clear();
                    x.extend(lp.iter().zip(g).map(|(l, gi)| q * l + gi / t));
                    acc += t * linalg::log_sum_exp(&x);
                }
                base + acc / d.g.len() as f64
            }
        }
    }

    /// KL and entropy of the induced policy; `None` outside the feasible region.
    pub fn induced(&self, eta: f64, omega: f64) -> Option<Induced> {
        let t = eta + omega;
        if !(eta > 0.0) || !(t > 0.0) || !t.is_finite() {
            return None;
        }
        match &self.data {
            Data::Gaussian(d) => {
                let h = &d.lambda * eta + &d.w_aa;
                let chol = linalg::cholesky_pd(&h)?;
                let k = d.k as f64;
                // Lambda* = H / t
                let log_det_new = linalg::log_det_chol(&chol) - k * t.ln();
                let entropy = 0.5 * k * (LN_2PI + 1.0) - 0.5 * log_det_new;
                let h_inv = chol.inverse();
                let trace_term = t * (&d.lambda * &h_inv).trace();
                let mut kl = 0.0;
                for i in 0..d.c.len() {
                    let h_a = &d.c[i] * eta + &d.r[i];
                    let dm = chol.solve(&h_a) - &d.mu[i];
                    kl += dm.dot(&(&d.lambda * &dm));
                }
                kl = 0.5 * (trace_term - k + kl / d.c.len() as f64 + log_det_new - d.log_det_lambda);
                Some(Induced { kl, entropy })
            }
            Data::Discrete(d) => {
                let q = eta / t;
                let (mut kl, mut entropy) = (0.0, 0.0);
                for (lp, g) in d.log_pi_old.iter().zip(&d.g) {
                    let x: Vec<f64> = lp.iter().zip(g).map(|(l, gi)| q * l + gi / t).collect();
                    let (p, logp) = linalg::softmax(&x);
                    kl += crate::policy::softmax::categorical_kl(&p, &logp, lp);
                    entropy += crate::policy::softmax::shannon_entropy(&p, &logp);
                }
                let n = d.g.len() as f64;
                Some(Induced { kl: kl / n, entropy: entropy / n })
            }
        }
    }

    /// `(dg/deta, dg/domega) = (eps - KL*, beta_H - H_old + H*)`.
    pub fn gradient(&self, eta: f64, omega: f64) -> Option<(f64, f64)> {
        let ind = self.induced(eta, omega)?;
        Some((self.epsilon - ind.kl, self.beta_h - self.entropy_old + ind.entropy))
    }

    /// For Gaussians the induced entropy depends on `omega` only through
    /// `(k/2) ln(eta + omega)`, so the `omega` hitting a target entropy is explicit.
    pub(crate) fn gaussian_omega_for_entropy(&self, eta: f64, target: f64) -> Option<f64> {
        let Data::Gaussian(d) = &self.data else {
            return None;
        };
        let chol = linalg::cholesky_pd(&(&d.lambda * eta + &d.w_aa))?;
        let k = d.k as f64;
        // target = 0.5 k (ln 2pi + 1) - 0.5 (log|H| - k ln t)
        let ln_t = (2.0 * target - k * (LN_2PI + 1.0) + linalg::log_det_chol(&chol)) / k;
        Some(ln_t.exp() - eta)
    }

    /// Upper limit of the induced mean entropy as `omega -> inf`, and its
    /// lower limit as `eta + omega -> 0`.
    pub(crate) fn entropy_range(&self, eta: f64) -> (f64, f64) {
        match &self.data {
            Data::Gaussian(_) => (f64::NEG_INFINITY, f64::INFINITY),
            Data::Discrete(d) => {
                let n = d.g.len() as f64;
                let max = d.g.iter().map(|g| (g.len() as f64).ln()).sum::<f64>() / n;
                // as t -> 0 the policy concentrates on argmax of eta log pi_old + G
                let min = d
                    .log_pi_old
                    .iter()
                    .zip(&d.g)
                    .map(|(lp, g)| {
                        let x: Vec<f64> = lp.iter().zip(g).map(|(l, gi)| eta * l + gi).collect();
                        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let ties = x.iter().filter(|&&v| v >= m - 1e-12 * m.abs().max(1.0)).count();
                        (ties as f64).ln()
                    })
                    .sum::<f64>()
                    / n;
                (min, max)
            }
        }
    }
}

fn require_mode(p: &DualProblem, mode: DualMode) -> Result<()> {
    if p.mode == mode {
        Ok(())
    } else {
        Err(Error::Config(format!("dual is in {:?} mode, expected {mode:?}", p.mode)))
    }
}

pub fn eval_gaussian_dual(p: &DualProblem, eta: f64, omega: f64) -> Result<f64> {
    require_mode(p, DualMode::GaussianLogLinear)?;
    Ok(p.value(eta, omega))
}

pub fn eval_gaussian_dual_nonlinear(p: &DualProblem, eta: f64, omega: f64) -> Result<f64> {
    require_mode(p, DualMode::GaussianNonlinear)?;
    Ok(p.value(eta, omega))
}

pub fn eval_discrete_dual(p: &DualProblem, eta: f64, omega: f64) -> Result<f64> {
    require_mode(p, DualMode::Discrete)?;
    Ok(p.value(eta, omega))
}
