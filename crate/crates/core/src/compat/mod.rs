//! Compatible features, policy-gradient estimation and the natural gradient `w = F^{-1} g`.

pub mod cg;
pub mod fisher;

use nalgebra::{DMatrix, DVector};

pub use cg::{conjugate_gradient, CgResult};
pub use fisher::{fisher_vector_product, FisherOperator};

use crate::error::{Error, Result};
use crate::linalg;
use crate::policy::{Action, NaturalGaussianPolicy, ParamLayout, Policy, PrecisionStorage};
use crate::rollout::{BaselineKind, Batch};

/// Sufficient statistics `psi(s, a)` of a Gaussian policy over its log-linear block.
pub fn psi_features(policy: &NaturalGaussianPolicy, s: &[f64], a: &DVector<f64>) -> Result<Vec<f64>> {
    policy.psi(s, a)
}

/// `grad_theta log pi(a|s)` over all parameters, equal to `psi - E[psi]` on the log-linear block.
pub fn compatible_features(policy: &Policy, s: &[f64], a: &Action) -> Result<Vec<f64>> {
    policy.grad_log_prob(s, a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub g: Vec<f64>,
    pub sample_count: usize,
    pub baseline_kind: BaselineKind,
}

/// Advantages as consumed by the gradient, optionally standardized per batch.
pub fn prepared_advantages(batch: &Batch, normalize: bool) -> Result<Vec<f64>> {
    let adv = batch.advantages().ok_or(Error::MissingAdvantages)?;
    if adv.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !normalize {
        return Ok(adv.to_vec());
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(if std > 1e-12 {
        adv.iter().map(|a| (a - mean) / std).collect()
    } else {
        adv.iter().map(|a| a - mean).collect()
    })
}

/// Mean over the batch of `grad log pi(a_i|s_i) * A_i`.
pub fn policy_gradient(policy: &Policy, batch: &Batch, normalize_advantages: bool) -> Result<GradientEstimate> {
    let adv = prepared_advantages(batch, normalize_advantages)?;
    let mut g = vec![0.0; policy.param_count()];
    for ((s, a), &ai) in batch.states.iter().zip(&batch.actions).zip(&adv) {
        let phi = policy.grad_log_prob(s, a)?;
        for (gj, pj) in g.iter_mut().zip(phi) {
            *gj += pj * ai;
        }
    }
    let n = adv.len() as f64;
    g.iter_mut().for_each(|x| *x /= n);
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok(GradientEstimate { g, sample_count: adv.len(), baseline_kind: batch.baseline_kind() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaturalGradientConfig {
    pub damping: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub normalize_advantages: bool,
}

impl Default for NaturalGradientConfig {
    fn default() -> Self {
        Self { damping: 1e-4, cg_iters: 10, cg_tol: 1e-10, normalize_advantages: true }
    }
}

/// Shape of the log-linear block, needed to reshape `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockShape {
    Gaussian { action_dim: usize, feature_dim: usize, storage: PrecisionStorage },
    Softmax { action_count: usize, feature_dim: usize },
}

impl BlockShape {
    pub fn of(policy: &Policy) -> Self {
        match policy {
            Policy::Gaussian(p) => {
                BlockShape::Gaussian { action_dim: p.action_dim(), feature_dim: p.feature_dim(), storage: p.storage() }
            }
            Policy::Softmax(p) => BlockShape::Softmax { action_count: p.action_count(), feature_dim: p.feature_dim() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibleSolution {
    pub w: Vec<f64>,
    /// The gradient the solve started from.
    pub g: Vec<f64>,
    pub layout: ParamLayout,
    pub shape: BlockShape,
    /// `||(F + damping I) w - g||` as tracked by the solver.
    pub cg_residual: f64,
    pub cg_iterations: usize,
}

impl CompatibleSolution {
    pub fn from_parts(w: Vec<f64>, g: Vec<f64>, policy: &Policy) -> Result<Self> {
        let layout = policy.layout();
        if w.len() != layout.total() || g.len() != layout.total() {
            return Err(Error::DimensionMismatch("w and g must cover all policy parameters".into()));
        }
        Ok(Self { w, g, layout, shape: BlockShape::of(policy), cg_residual: 0.0, cg_iterations: 0 })
    }

    pub fn w_precision(&self) -> &[f64] {
        &self.w[..self.layout.precision]
    }

    pub fn w_linear(&self) -> &[f64] {
        &self.w[self.layout.precision..self.layout.loglinear()]
    }

    pub fn w_loglinear(&self) -> &[f64] {
        &self.w[..self.layout.loglinear()]
    }

    pub fn w_beta(&self) -> &[f64] {
        &self.w[self.layout.loglinear()..]
    }

    /// Symmetrized quadratic block `W_aa` (`k x k`); `None` for softmax policies.
    pub fn w_aa(&self) -> Option<DMatrix<f64>> {
        match self.shape {
            BlockShape::Gaussian { action_dim: k, storage, .. } => {
                let block = self.w_precision();
                Some(match storage {
                    PrecisionStorage::Diagonal => DMatrix::from_diagonal(&DVector::from_column_slice(block)),
                    PrecisionStorage::Dense => linalg::symmetrize(&DMatrix::from_row_slice(k, k, block)),
                })
            }
            BlockShape::Softmax { .. } => None,
        }
    }

    /// `W_sa` (`feature_dim x k`); `None` for softmax policies.
    pub fn w_sa(&self) -> Option<DMatrix<f64>> {
        match self.shape {
            BlockShape::Gaussian { action_dim, feature_dim, .. } => {
                Some(DMatrix::from_row_slice(feature_dim, action_dim, self.w_linear()))
            }
            BlockShape::Softmax { .. } => None,
        }
    }

    /// Output-layer block (`action_count x feature_dim`); `None` for Gaussian policies.
    pub fn w_theta(&self) -> Option<DMatrix<f64>> {
        match self.shape {
            BlockShape::Softmax { action_count, feature_dim } => {
                Some(DMatrix::from_row_slice(action_count, feature_dim, self.w_linear()))
            }
            BlockShape::Gaussian { .. } => None,
        }
    }

    pub fn w_norm(&self) -> f64 {
        linalg::norm(&self.w)
    }

    pub fn g_norm(&self) -> f64 {
        linalg::norm(&self.g)
    }
}

/// Solve `(F + damping I) w = g` for a given gradient by conjugate gradient.
pub fn solve_for_gradient(
    policy: &Policy,
    states: &[Vec<f64>],
    g: Vec<f64>,
    cfg: &NaturalGradientConfig,
) -> Result<CompatibleSolution> {
    if cfg.cg_iters == 0 {
        return Err(Error::Config("cg_iters must be at least 1".into()));
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    let op = FisherOperator::new(policy, states, cfg.damping)?;
    let res = conjugate_gradient(|v| op.apply(v), &g, cfg.cg_iters, cfg.cg_tol);
    if res.x.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    let mut sol = CompatibleSolution::from_parts(res.x, g, policy)?;
    sol.cg_residual = res.residual;
    sol.cg_iterations = res.iterations;
    Ok(sol)
}

/// Natural gradient of the batch: `w = (F + damping I)^{-1} grad J`.
pub fn solve_natural_gradient(
    policy: &Policy,
    batch: &Batch,
    cfg: &NaturalGradientConfig,
) -> Result<CompatibleSolution> {
    let est = policy_gradient(policy, batch, cfg.normalize_advantages)?;
    solve_for_gradient(policy, &batch.states, est.g, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{FeatureMap, SoftmaxPolicy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mlp_policies() -> Vec<Policy> {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let f = FeatureMap::mlp(&[2, 4, 3], true, &mut rng).unwrap();
        let u = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let dense = NaturalGaussianPolicy::new(
            f.clone(),
            u.clone(),
            DMatrix::from_row_slice(2, 2, &[1.3, -0.2, -0.2, 0.8]),
            PrecisionStorage::Dense,
        )
        .unwrap();
        let diag = NaturalGaussianPolicy::new_diagonal(f.clone(), u, &[0.6, 2.0]).unwrap();
        let theta = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let soft = SoftmaxPolicy::new(FeatureMap::mlp(&[2, 4, 3], false, &mut rng).unwrap(), theta).unwrap();
        vec![Policy::Gaussian(dense), Policy::Gaussian(diag), Policy::Softmax(soft)]
    }

    fn states() -> Vec<Vec<f64>> {
        vec![vec![0.3, -0.5], vec![1.2, 0.1], vec![-0.7, 0.9]]
    }

    /// `v^T F v` equals the second derivative of `t -> KL(pi_old || pi_{theta + t v})` at 0.
    #[test]
    fn fisher_quadratic_form_matches_kl_curvature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for policy in mlp_policies() {
            let x0 = policy.params();
            let v: Vec<f64> = (0..x0.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fv = fisher_vector_product(&policy, &states(), &v, 0.0).unwrap();
            let quad = linalg::dot(&v, &fv);
            let h = 1e-4;
            let kl_at = |t: f64| {
                let x: Vec<f64> = x0.iter().zip(&v).map(|(a, b)| a + t * b).collect();
                policy.kl(&policy.with_params(&x).unwrap(), &states()).unwrap()
            };
            let second = (kl_at(h) - 2.0 * kl_at(0.0) + kl_at(-h)) / (h * h);
            assert!((quad - second).abs() < 1e-5 * (1.0 + quad.abs()), "{quad} vs {second}");
        }
    }

    #[test]
    fn fisher_is_symmetric_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for policy in mlp_policies() {
            let n = policy.param_count();
            let op = FisherOperator::new(&policy, &states(), 0.0).unwrap();
            for _ in 0..100 {
                let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let fu = op.apply(&u);
                let fv = op.apply(&v);
                assert!(linalg::dot(&v, &fv) >= -1e-12);
                let (a, b) = (linalg::dot(&v, &fu), linalg::dot(&u, &fv));
                assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn fisher_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for policy in mlp_policies() {
            let n = policy.param_count();
            let op = FisherOperator::new(&policy, &states(), 1e-4).unwrap();
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let alpha = 1.7;
            let comb: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + b).collect();
            let lhs = op.apply(&comb);
            let (fu, fv) = (op.apply(&u), op.apply(&v));
            for i in 0..n {
                assert!((lhs[i] - (alpha * fu[i] + fv[i])).abs() < 1e-8);
            }
            assert!(op.apply(&vec![0.0; n]).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn discrete_compatible_features_are_zero_mean() {
        let policy = &mlp_policies()[2];
        let soft = policy.as_softmax().unwrap();
        for s in states() {
            let (p, _) = soft.distribution(&s).unwrap();
            let mut acc = vec![0.0; policy.param_count()];
            for (a, pa) in p.iter().enumerate() {
                for (x, f) in acc.iter_mut().zip(compatible_features(policy, &s, &Action::Discrete(a)).unwrap()) {
                    *x += pa * f;
                }
            }
            assert!(acc.iter().all(|x| x.abs() < 1e-10));
        }
    }

    #[test]
    fn psi_minus_expectation_is_compatible_feature() {
        let policy = &mlp_policies()[0];
        let g = policy.as_gaussian().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta: Vec<f64> = (0..g.loglinear_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for s in states() {
            let a = g.sample(&s, &mut rng).unwrap();
            let psi = psi_features(g, &s, &a).unwrap();
            let e_psi = g.expected_psi(&s).unwrap();
            let phi = compatible_features(policy, &s, &Action::Continuous(a)).unwrap();
            let lhs = linalg::dot(&psi, &theta) - linalg::dot(&e_psi, &theta);
            let rhs = linalg::dot(&phi[..theta.len()], &theta);
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
