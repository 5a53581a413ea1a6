//! Policy distributions over pluggable state feature maps.

pub mod checkpoint;
pub mod features;
pub mod gaussian;
pub mod softmax;

use nalgebra::DVector;
use rand::Rng;

pub use features::{Dense, FeatureMap, FeatureTrace, Mlp};
pub use gaussian::{NaturalGaussianPolicy, PrecisionStorage};
pub use softmax::SoftmaxPolicy;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(DVector<f64>),
}

impl Action {
    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&DVector<f64>> {
        match self {
            Action::Continuous(a) => Some(a),
            Action::Discrete(_) => None,
        }
    }
}

/// Block sizes of a flat parameter vector: `[precision | linear | nonlinear]`.
///
/// For softmax policies the precision block is empty and the linear block is `Theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub precision: usize,
    pub linear: usize,
    pub nonlinear: usize,
}

impl ParamLayout {
    pub fn loglinear(&self) -> usize {
        self.precision + self.linear
    }

    pub fn total(&self) -> usize {
        self.precision + self.linear + self.nonlinear
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Gaussian(NaturalGaussianPolicy),
    Softmax(SoftmaxPolicy),
}

fn mismatch() -> Error {
    Error::DimensionMismatch("action kind does not match policy".into())
}

impl Policy {
    pub fn features(&self) -> &FeatureMap {
        match self {
            Policy::Gaussian(p) => p.features(),
            Policy::Softmax(p) => p.features(),
        }
    }

    pub fn layout(&self) -> ParamLayout {
        match self {
            Policy::Gaussian(p) => {
                ParamLayout { precision: p.precision_len(), linear: p.u().len(), nonlinear: p.features().param_count() }
            }
            Policy::Softmax(p) => {
                ParamLayout { precision: 0, linear: p.loglinear_len(), nonlinear: p.features().param_count() }
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total()
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Policy::Gaussian(p) => p.params(),
            Policy::Softmax(p) => p.params(),
        }
    }

    pub fn with_params(&self, flat: &[f64]) -> Result<Policy> {
        Ok(match self {
            Policy::Gaussian(p) => Policy::Gaussian(p.with_params(flat)?),
            Policy::Softmax(p) => Policy::Softmax(p.with_params(flat)?),
        })
    }

    pub fn log_prob(&self, s: &[f64], a: &Action) -> Result<f64> {
        match (self, a) {
            (Policy::Gaussian(p), Action::Continuous(a)) => p.log_prob(s, a),
            (Policy::Softmax(p), Action::Discrete(a)) => p.log_prob(s, *a),
            _ => Err(mismatch()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Result<Action> {
        Ok(match self {
            Policy::Gaussian(p) => Action::Continuous(p.sample(s, rng)?),
            Policy::Softmax(p) => Action::Discrete(p.sample(s, rng)?),
        })
    }

    /// Mean entropy over the state batch.
    pub fn entropy(&self, states: &[Vec<f64>]) -> Result<f64> {
        match self {
            Policy::Gaussian(p) => Ok(p.entropy()),
            Policy::Softmax(p) => p.entropy(states),
        }
    }

    /// Mean over `states` of `KL(self(.|s) || old(.|s))`.
    pub fn kl(&self, old: &Policy, states: &[Vec<f64>]) -> Result<f64> {
        match (self, old) {
            (Policy::Gaussian(a), Policy::Gaussian(b)) => a.kl(b, states),
            (Policy::Softmax(a), Policy::Softmax(b)) => a.kl(b, states),
            _ => Err(Error::DimensionMismatch("policy kinds differ".into())),
        }
    }

    pub fn grad_log_prob_trace(&self, trace: &FeatureTrace, a: &Action) -> Result<Vec<f64>> {
        match (self, a) {
            (Policy::Gaussian(p), Action::Continuous(a)) => Ok(p.grad_log_prob_trace(trace, a)),
            (Policy::Softmax(p), Action::Discrete(a)) => Ok(p.grad_log_prob_trace(trace, *a)),
            _ => Err(mismatch()),
        }
    }

    pub fn grad_log_prob(&self, s: &[f64], a: &Action) -> Result<Vec<f64>> {
        match (self, a) {
            (Policy::Gaussian(p), Action::Continuous(a)) => p.grad_log_prob(s, a),
            (Policy::Softmax(p), Action::Discrete(a)) => p.grad_log_prob(s, *a),
            _ => Err(mismatch()),
        }
    }

    /// Gradient of the batch-mean entropy with respect to all parameters.
    pub fn entropy_grad(&self, states: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            Policy::Gaussian(p) => {
                // H = const - 0.5 log|Lambda|
                let mut g = vec![0.0; p.param_count()];
                let k = p.action_dim();
                let sigma = p.covariance();
                match p.storage() {
                    PrecisionStorage::Diagonal => (0..k).for_each(|i| g[i] = -0.5 * sigma[(i, i)]),
                    PrecisionStorage::Dense => {
                        for i in 0..k {
                            for j in 0..k {
                                g[i * k + j] = -0.5 * sigma[(i, j)];
                            }
                        }
                    }
                }
                Ok(g)
            }
            Policy::Softmax(p) => p.entropy_grad(states),
        }
    }

    pub fn as_gaussian(&self) -> Option<&NaturalGaussianPolicy> {
        match self {
            Policy::Gaussian(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_softmax(&self) -> Option<&SoftmaxPolicy> {
        match self {
            Policy::Softmax(p) => Some(p),
            _ => None,
        }
    }
}

/// Block view of a vector laid out like the policy parameters.
pub fn split_blocks<'a>(layout: &ParamLayout, v: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
    let (prec, rest) = v.split_at(layout.precision);
    let (lin, nl) = rest.split_at(layout.linear);
    (prec, lin, nl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_policies() -> Vec<Policy> {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let feats = FeatureMap::mlp(&[3, 5, 4], true, &mut rng).unwrap();
        let u = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let diag = NaturalGaussianPolicy::new_diagonal(feats.clone(), u.clone(), &[1.5, 0.7]).unwrap();
        let dense = NaturalGaussianPolicy::new(
            feats.clone(),
            u,
            DMatrix::from_row_slice(2, 2, &[1.2, 0.4, 0.4, 0.9]),
            PrecisionStorage::Dense,
        )
        .unwrap();
        let tanh_feats = FeatureMap::mlp(&[3, 5, 4], false, &mut rng).unwrap();
        let theta = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let soft = SoftmaxPolicy::new(tanh_feats, theta).unwrap();
        vec![Policy::Gaussian(diag), Policy::Gaussian(dense), Policy::Softmax(soft)]
    }

    /// Gradient of log_prob against central differences (h = 1e-5).
    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for policy in random_policies() {
            for _ in 0..3 {
                let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let a = policy.sample(&s, &mut rng).unwrap();
                let g = policy.grad_log_prob(&s, &a).unwrap();
                let x0 = policy.params();
                let h = 1e-5;
                for i in 0..x0.len() {
                    let mut xp = x0.clone();
                    xp[i] += h;
                    let mut xm = x0.clone();
                    xm[i] -= h;
                    let fp = policy.with_params(&xp).unwrap().log_prob(&s, &a).unwrap();
                    let fm = policy.with_params(&xm).unwrap().log_prob(&s, &a).unwrap();
                    let fd = (fp - fm) / (2.0 * h);
                    let scale = fd.abs().max(g[i].abs()).max(1e-3);
                    assert!((fd - g[i]).abs() / scale < 1e-4, "param {i}: fd {fd} analytic {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn entropy_grad_gaussian_matches_finite_differences() {
        for policy in random_policies().into_iter().take(2) {
            let g = policy.entropy_grad(&[]).unwrap();
            let x0 = policy.params();
            let h = 1e-6;
            for i in 0..x0.len() {
                let mut xp = x0.clone();
                xp[i] += h;
                let mut xm = x0.clone();
                xm[i] -= h;
                let fd = (policy.with_params(&xp).unwrap().entropy(&[]).unwrap()
                    - policy.with_params(&xm).unwrap().entropy(&[]).unwrap())
                    / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7, "param {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn kl_self_is_exactly_zero() {
        let states = vec![vec![0.1, 0.2, 0.3], vec![-1.0, 0.0, 2.0]];
        for p in random_policies() {
            assert_eq!(p.kl(&p, &states).unwrap(), 0.0);
        }
    }

    #[test]
    fn mismatched_action_kind() {
        let p = &random_policies()[2];
        assert!(p.log_prob(&[0.0; 3], &Action::Continuous(DVector::zeros(1))).is_err());
    }
}
