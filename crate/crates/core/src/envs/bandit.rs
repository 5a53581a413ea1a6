//! Stateless bandit with quadratic reward `R(a) = -0.5 R a^2 + r a`.

use rand_chacha::ChaCha8Rng;

use super::{ActionSpace, Env, Episode, Step};
use crate::error::{Error, Result};
use crate::policy::{Action, FeatureMap, NaturalGaussianPolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticBandit {
    pub r_quad: f64,
    pub r_lin: f64,
}

impl QuadraticBandit {
    pub fn new(r_quad: f64, r_lin: f64) -> Result<Self> {
        if !(r_quad > 0.0) || !r_lin.is_finite() {
            return Err(Error::Config(format!("bandit needs R > 0, got R={r_quad}, r={r_lin}")));
        }
        Ok(Self { r_quad, r_lin })
    }

    pub fn reward(&self, a: f64) -> f64 {
        -0.5 * self.r_quad * a * a + self.r_lin * a
    }

    /// `a* = r / R`.
    pub fn optimum(&self) -> f64 {
        self.r_lin / self.r_quad
    }

    /// The single observation: a constant feature 1, so `b = U`.
    pub fn state() -> Vec<f64> {
        vec![1.0]
    }

    /// Stateless policy `pi(a) ∝ exp(-0.5 B a^2 + b a)`.
    pub fn policy(precision: f64, linear: f64) -> Result<NaturalGaussianPolicy> {
        NaturalGaussianPolicy::new_diagonal(
            FeatureMap::identity(1),
            nalgebra::DMatrix::from_element(1, 1, linear),
            &[precision],
        )
    }
}

/// `E[R(a)] = -0.5 R (mu^2 + sigma^2) + r mu` with `mu = b/B`, `sigma^2 = 1/B`.
pub fn bandit_expected_reward(policy: &NaturalGaussianPolicy, env: &QuadraticBandit) -> Result<f64> {
    if policy.action_dim() != 1 || policy.features().input_dim() != 1 || policy.feature_dim() != 1 {
        return Err(Error::DimensionMismatch("bandit policy must be stateless and one-dimensional".into()));
    }
    let big_b = policy.precision()[(0, 0)];
    if big_b <= 0.0 {
        return Err(Error::DegeneratePrecision(format!("B = {big_b}")));
    }
    let mu = policy.mean(&QuadraticBandit::state())?[0];
    Ok(-0.5 * env.r_quad * (mu * mu + 1.0 / big_b) + env.r_lin * mu)
}

struct BanditEpisode<'a> {
    env: &'a QuadraticBandit,
}

impl Episode for BanditEpisode<'_> {
    fn observation(&self) -> Vec<f64> {
        QuadraticBandit::state()
    }

    fn step(&mut self, action: &Action, _rng: &mut ChaCha8Rng) -> Result<Step> {
        let a = match action {
            Action::Continuous(a) if a.len() == 1 => a[0],
            _ => return Err(Error::DimensionMismatch("bandit expects a scalar continuous action".into())),
        };
        Ok(Step { observation: QuadraticBandit::state(), reward: self.env.reward(a), done: true })
    }
}

impl Env for QuadraticBandit {
    fn id(&self) -> String {
        "bandit".into()
    }

    fn observation_dim(&self) -> usize {
        1
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous(1)
    }

    fn horizon(&self) -> usize {
        1
    }

    fn gamma(&self) -> f64 {
        1.0
    }

    /// Rewards are unbounded below; this bounds them above.
    fn reward_bound(&self) -> f64 {
        0.5 * self.r_lin * self.r_lin / self.r_quad
    }

    fn reset(&self, _rng: &mut ChaCha8Rng) -> Box<dyn Episode + '_> {
        Box::new(BanditEpisode { env: self })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn expected_reward_formula() {
        let env = QuadraticBandit::new(1.0, 1.0).unwrap();
        let p = QuadraticBandit::policy(1.0, 0.0).unwrap();
        assert!((bandit_expected_reward(&p, &env).unwrap() + 0.5).abs() < 1e-15);
        // mean at the optimum, variance nearly zero
        let sharp = QuadraticBandit::policy(1e12, 1e12 * env.optimum()).unwrap();
        let best = bandit_expected_reward(&sharp, &env).unwrap();
        assert!((best - 0.5).abs() < 1e-11);
    }

    #[test]
    fn expected_reward_matches_monte_carlo() {
        let env = QuadraticBandit::new(2.0, 1.0).unwrap();
        let p = QuadraticBandit::policy(1.5, 0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let samples: Vec<f64> = (0..n).map(|_| env.reward(p.sample(&[1.0], &mut rng).unwrap()[0])).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let exact = bandit_expected_reward(&p, &env).unwrap();
        assert!((mean - exact).abs() < 5.0 * (var / n as f64).sqrt(), "{mean} vs {exact}");
    }

    #[test]
    fn rejects_non_positive_curvature() {
        assert!(QuadraticBandit::new(0.0, 1.0).is_err());
    }
}
