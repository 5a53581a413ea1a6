//! Discrete softmax policy with a log-linear output layer.
//!
//! `pi(a|s) = softmax(Theta phi(s))_a`. Flat parameter layout: `Theta`
//! row-major (`action_count x feature_dim`), then the feature-map parameters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::features::{FeatureMap, FeatureTrace};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    features: FeatureMap,
    theta: DMatrix<f64>,
}

impl SoftmaxPolicy {
    pub fn new(features: FeatureMap, theta: DMatrix<f64>) -> Result<Self> {
        if theta.nrows() < 2 {
            return Err(Error::DimensionMismatch("softmax needs at least two actions".into()));
        }
        if theta.ncols() != features.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "Theta has {} columns, features produce {}",
                theta.ncols(),
                features.output_dim()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::DimensionMismatch("non-finite output layer".into()));
        }
        Ok(Self { features, theta })
    }

    /// Zero output layer: uniform over actions.
    pub fn uniform(features: FeatureMap, action_count: usize) -> Result<Self> {
        let n = features.output_dim();
        Self::new(features, DMatrix::zeros(action_count, n))
    }

    pub fn action_count(&self) -> usize {
        self.theta.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.theta.ncols()
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    fn check_state(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.features.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "state has length {}, expected {}",
                s.len(),
                self.features.input_dim()
            )));
        }
        Ok(())
    }

    pub fn logits_from_features(&self, phi: &DVector<f64>) -> Vec<f64> {
        (&self.theta * phi).iter().copied().collect()
    }

    pub fn logits(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_state(s)?;
        Ok(self.logits_from_features(&self.features.forward(s)))
    }

    /// (probabilities, log-probabilities) at `s`.
    pub fn distribution(&self, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(linalg::softmax(&self.logits(s)?))
    }

    pub fn log_prob(&self, s: &[f64], a: usize) -> Result<f64> {
        if a >= self.action_count() {
            return Err(Error::DimensionMismatch(format!("action {a} out of range")));
        }
        Ok(self.distribution(s)?.1[a])
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Result<usize> {
        let (p, _) = self.distribution(s)?;
        Ok(sample_categorical(&p, rng))
    }

    pub fn entropy_at(&self, s: &[f64]) -> Result<f64> {
        let (p, logp) = self.distribution(s)?;
        Ok(shannon_entropy(&p, &logp))
    }

    pub fn entropy(&self, states: &[Vec<f64>]) -> Result<f64> {
        if states.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for s in states {
            total += self.entropy_at(s)?;
        }
        Ok(total / states.len() as f64)
    }

    pub fn kl(&self, old: &Self, states: &[Vec<f64>]) -> Result<f64> {
        if old.action_count() != self.action_count() || old.features.input_dim() != self.features.input_dim() {
            return Err(Error::DimensionMismatch("policies disagree on action or input space".into()));
        }
        if states.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for s in states {
            let (p, logp) = self.distribution(s)?;
            let (_, logq) = old.distribution(s)?;
            total += categorical_kl(&p, &logp, &logq);
        }
        Ok(total / states.len() as f64)
    }

    pub fn loglinear_len(&self) -> usize {
        self.theta.len()
    }

    pub fn param_count(&self) -> usize {
        self.loglinear_len() + self.features.param_count()
    }

    pub fn theta_from_block(&self, block: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.action_count(), self.feature_dim(), block)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for r in 0..self.theta.nrows() {
            out.extend(self.theta.row(r).iter());
        }
        out.extend(self.features.params());
        out
    }

    pub fn with_params(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let ll = self.loglinear_len();
        let mut features = self.features.clone();
        features.set_params(&flat[ll..])?;
        Self::new(features, self.theta_from_block(&flat[..ll]))
    }

    pub fn grad_log_prob_trace(&self, trace: &FeatureTrace, a: usize) -> Vec<f64> {
        let phi = &trace.output;
        let (p, _) = linalg::softmax(&self.logits_from_features(phi));
        let mut dz = DVector::from_iterator(p.len(), p.iter().map(|x| -x));
        dz[a] += 1.0;
        let mut out = Vec::with_capacity(self.param_count());
        for r in 0..self.action_count() {
            out.extend(phi.iter().map(|f| dz[r] * f));
        }
        out.extend(self.features.vjp(trace, &self.theta.tr_mul(&dz)));
        out
    }

    pub fn grad_log_prob(&self, s: &[f64], a: usize) -> Result<Vec<f64>> {
        self.check_state(s)?;
        if a >= self.action_count() {
            return Err(Error::DimensionMismatch(format!("action {a} out of range")));
        }
        Ok(self.grad_log_prob_trace(&self.features.trace(s), a))
    }

    /// Gradient of the batch-mean Shannon entropy with respect to all parameters.
    pub fn entropy_grad(&self, states: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.param_count()];
        for s in states {
            self.check_state(s)?;
            let trace = self.features.trace(s);
            let phi = &trace.output;
            let (p, logp) = linalg::softmax(&self.logits_from_features(phi));
            let h = shannon_entropy(&p, &logp);
            // dH/dz_j = -p_j (log p_j + H)
            let dz = DVector::from_iterator(p.len(), p.iter().zip(&logp).map(|(pj, lj)| -pj * (lj + h)));
            let mut off = 0;
            for r in 0..self.action_count() {
                for f in phi.iter() {
                    acc[off] += dz[r] * f;
                    off += 1;
                }
            }
            for (a, g) in acc[off..].iter_mut().zip(self.features.vjp(&trace, &self.theta.tr_mul(&dz))) {
                *a += g;
            }
        }
        let n = states.len().max(1) as f64;
        acc.iter_mut().for_each(|x| *x /= n);
        Ok(acc)
    }
}

pub fn shannon_entropy(p: &[f64], logp: &[f64]) -> f64 {
    -p.iter().zip(logp).filter(|(pi, _)| **pi > 0.0).map(|(pi, li)| pi * li).sum::<f64>()
}

/// `KL(p || q)` from probabilities of `p` and log-probabilities of both.
pub fn categorical_kl(p: &[f64], logp: &[f64], logq: &[f64]) -> f64 {
    p.iter().zip(logp.iter().zip(logq)).filter(|(pi, _)| **pi > 0.0).map(|(pi, (lp, lq))| pi * (lp - lq)).sum()
}

pub fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last action with positive mass
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}
