//! Fisher-vector products.
//!
//! The Fisher matrix is the Hessian of the batch-mean `KL(pi_old || pi_theta)`
//! at `theta = theta_old`. At that point the Hessian equals the Gauss-Newton
//! form `J^T G J`, where `J` maps a parameter perturbation to a perturbation of
//! the per-state distribution parameters (logits, or mean and precision) and
//! `G` is the Fisher metric of the distribution in those coordinates. Both
//! `J` and `J^T` are evaluated with the feature-map JVP/VJP, so no second
//! derivatives are needed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::policy::{split_blocks, FeatureTrace, ParamLayout, Policy, PrecisionStorage};

struct StateCache {
    trace: FeatureTrace,
    /// Gaussian mean or softmax probabilities.
    stat: DVector<f64>,
}

pub struct FisherOperator<'a> {
    policy: &'a Policy,
    layout: ParamLayout,
    states: Vec<StateCache>,
    damping: f64,
}

impl<'a> FisherOperator<'a> {
    pub fn new(policy: &'a Policy, states: &[Vec<f64>], damping: f64) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let input_dim = policy.features().input_dim();
        let mut cache = Vec::with_capacity(states.len());
        for s in states {
            if s.len() != input_dim {
                return Err(Error::DimensionMismatch(format!("state has length {}, expected {input_dim}", s.len())));
            }
            let trace = policy.features().trace(s);
            let stat = match policy {
                Policy::Gaussian(p) => p.mean_from_features(&trace.output),
                Policy::Softmax(p) => DVector::from_vec(linalg::softmax(&p.logits_from_features(&trace.output)).0),
            };
            cache.push(StateCache { trace, stat });
        }
        Ok(Self { policy, layout: policy.layout(), states: cache, damping })
    }

    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    /// `(F + damping I) v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.apply_with_damping(v, self.damping)
    }

    pub fn apply_with_damping(&self, v: &[f64], damping: f64) -> Vec<f64> {
        assert_eq!(v.len(), self.dim(), "vector length must equal the parameter count");
        let mut out = match self.policy {
            Policy::Gaussian(_) => self.gaussian_product(v),
            Policy::Softmax(_) => self.softmax_product(v),
        };
        let n = self.states.len() as f64;
        for (o, vi) in out.iter_mut().zip(v) {
            *o = *o / n + damping * vi;
        }
        out
    }

    fn gaussian_product(&self, v: &[f64]) -> Vec<f64> {
        let p = self.policy.as_gaussian().unwrap();
        let (vp, vu, vb) = split_blocks(&self.layout, v);
        let k = p.action_dim();
        let sigma = p.covariance();
        let d_lambda = linalg::symmetrize(&p.precision_from_block(vp));
        let d_u = p.u_from_block(vu);
        // precision part of the metric: 0.5 Sigma dLambda Sigma
        let lambda_metric = sigma * &d_lambda * sigma * 0.5;

        let mut cot_lambda = DMatrix::zeros(k, k);
        let mut cot_u = DMatrix::zeros(p.feature_dim(), k);
        let mut cot_beta = vec![0.0; self.layout.nonlinear];
        for st in &self.states {
            let phi = &st.trace.output;
            let mu = &st.stat;
            let mut dc = d_u.tr_mul(phi);
            if !vb.is_empty() {
                dc += p.u().tr_mul(&p.features().jvp(&st.trace, vb));
            }
            let d_mu = sigma * (dc - &d_lambda * mu);
            cot_lambda += &lambda_metric - (&d_mu * mu.transpose() + mu * d_mu.transpose()) * 0.5;
            cot_u += phi * d_mu.transpose();
            if !cot_beta.is_empty() {
                for (c, g) in cot_beta.iter_mut().zip(p.features().vjp(&st.trace, &(p.u() * &d_mu))) {
                    *c += g;
                }
            }
        }

        let mut out = Vec::with_capacity(self.dim());
        match p.storage() {
            PrecisionStorage::Diagonal => out.extend((0..k).map(|i| cot_lambda[(i, i)])),
            PrecisionStorage::Dense => (0..k).for_each(|i| out.extend(cot_lambda.row(i).iter())),
        }
        for j in 0..cot_u.nrows() {
            out.extend(cot_u.row(j).iter());
        }
        out.extend(cot_beta);
        out
    }

    fn softmax_product(&self, v: &[f64]) -> Vec<f64> {
        let p = self.policy.as_softmax().unwrap();
        let (_, vt, vb) = split_blocks(&self.layout, v);
        let d_theta = p.theta_from_block(vt);
        let mut cot_theta = DMatrix::zeros(p.action_count(), p.feature_dim());
        let mut cot_beta = vec![0.0; self.layout.nonlinear];
        for st in &self.states {
            let phi = &st.trace.output;
            let probs = &st.stat;
            let mut dz = &d_theta * phi;
            if !vb.is_empty() {
                dz += p.theta() * p.features().jvp(&st.trace, vb);
            }
            // (diag(p) - p p^T) dz
            let mean = probs.dot(&dz);
            let y = probs.component_mul(&dz.add_scalar(-mean));
            cot_theta += &y * phi.transpose();
            if !cot_beta.is_empty() {
                for (c, g) in cot_beta.iter_mut().zip(p.features().vjp(&st.trace, &p.theta().tr_mul(&y))) {
                    *c += g;
                }
            }
        }
        let mut out = Vec::with_capacity(self.dim());
        for r in 0..cot_theta.nrows() {
            out.extend(cot_theta.row(r).iter());
        }
        out.extend(cot_beta);
        out
    }
}

/// `(F + damping I) v` over the state batch.
pub fn fisher_vector_product(policy: &Policy, states: &[Vec<f64>], v: &[f64], damping: f64) -> Result<Vec<f64>> {
    if v.len() != policy.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "vector has length {}, policy has {} parameters",
            v.len(),
            policy.param_count()
        )));
    }
    Ok(FisherOperator::new(policy, states, damping)?.apply(v))
}
