//! Gaussian policy with state-independent covariance in natural parameters.
//!
//! `pi(a|s) = N(a | K phi(s), Sigma)` stored as the precision `Lambda = Sigma^{-1}`
//! and `U = K^T Lambda` (`feature_dim x action_dim`), so that
//!
//! ```text
//! log pi(a|s) = -0.5 a^T Lambda a + phi(s)^T U a - 0.5 phi(s)^T U Sigma U^T phi(s)
//!               + 0.5 log|Lambda| - 0.5 k log(2 pi)
//! ```
//!
//! is linear in `(Lambda, U)` up to the normalizer. Flat parameter layout:
//! precision block (`k` diagonal entries or `k*k` row-major), then `U` row-major
//! (entry `j*k + i` is `U[j, i]`), then the feature-map parameters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::features::{FeatureMap, FeatureTrace};
use crate::error::{Error, Result};
use crate::linalg::{self, PD_TOLERANCE};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecisionStorage {
    Diagonal,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaturalGaussianPolicy {
    features: FeatureMap,
    u: DMatrix<f64>,
    lambda: DMatrix<f64>,
    storage: PrecisionStorage,
    // derived
    sigma: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    log_det_lambda: f64,
}

impl NaturalGaussianPolicy {
    pub fn new(features: FeatureMap, u: DMatrix<f64>, lambda: DMatrix<f64>, storage: PrecisionStorage) -> Result<Self> {
        let k = lambda.nrows();
        if k == 0 || lambda.ncols() != k {
            return Err(Error::DimensionMismatch("precision must be square and non-empty".into()));
        }
        if u.nrows() != features.output_dim() || u.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "U is {}x{}, expected {}x{}",
                u.nrows(),
                u.ncols(),
                features.output_dim(),
                k
            )));
        }
        let lambda = match storage {
            PrecisionStorage::Dense => linalg::symmetrize(&lambda),
            PrecisionStorage::Diagonal => {
                let off_diag =
                    (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).any(|(i, j)| i != j && lambda[(i, j)] != 0.0);
                if off_diag {
                    return Err(Error::DimensionMismatch("diagonal storage with off-diagonal precision".into()));
                }
                lambda
            }
        };
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegeneratePrecision("non-finite U".into()));
        }
        let chol = linalg::cholesky_pd(&lambda)
            .filter(|_| linalg::min_eigenvalue(&lambda) > PD_TOLERANCE)
            .ok_or_else(|| Error::DegeneratePrecision(format!("precision not positive definite: {lambda}")))?;
        let sigma = chol.inverse();
        let log_det_lambda = linalg::log_det_chol(&chol);
        Ok(Self { features, u, lambda, storage, sigma, chol_l: chol.l(), log_det_lambda })
    }

    pub fn new_diagonal(features: FeatureMap, u: DMatrix<f64>, precision: &[f64]) -> Result<Self> {
        let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(precision));
        Self::new(features, u, lambda, PrecisionStorage::Diagonal)
    }

    /// Zero mean, unit variance.
    pub fn initial(features: FeatureMap, action_dim: usize, storage: PrecisionStorage) -> Result<Self> {
        let n = features.output_dim();
        Self::new(features, DMatrix::zeros(n, action_dim), DMatrix::identity(action_dim, action_dim), storage)
    }

    /// Build from moment parameters: mean gain `K` (`k x n`) and covariance `Sigma`.
    pub fn from_moments(
        features: FeatureMap,
        gain: &DMatrix<f64>,
        sigma: &DMatrix<f64>,
        storage: PrecisionStorage,
    ) -> Result<Self> {
        let chol = linalg::cholesky_pd(sigma)
            .ok_or_else(|| Error::DegeneratePrecision("covariance not positive definite".into()))?;
        let lambda = chol.inverse();
        let u = gain.transpose() * &lambda;
        let lambda = match storage {
            PrecisionStorage::Diagonal => DMatrix::from_diagonal(&lambda.diagonal()),
            PrecisionStorage::Dense => lambda,
        };
        Self::new(features, u, lambda, storage)
    }

    pub fn action_dim(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn storage(&self) -> PrecisionStorage {
        self.storage
    }

    pub fn log_det_precision(&self) -> f64 {
        self.log_det_lambda
    }

    /// Mean gain `K = Sigma U^T` (`k x n`), so that `mu(s) = K phi(s)`.
    pub fn gain(&self) -> DMatrix<f64> {
        &self.sigma * self.u.transpose()
    }

    pub fn mean_from_features(&self, phi: &DVector<f64>) -> DVector<f64> {
        &self.sigma * self.u.tr_mul(phi)
    }

    pub fn mean(&self, s: &[f64]) -> Result<DVector<f64>> {
        self.check_state(s)?;
        Ok(self.mean_from_features(&self.features.forward(s)))
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

    pub fn log_prob_features(&self, phi: &DVector<f64>, a: &DVector<f64>) -> f64 {
        let d = a - self.mean_from_features(phi);
        let k = self.action_dim() as f64;
        -0.5 * d.dot(&(&self.lambda * &d)) + 0.5 * self.log_det_lambda - 0.5 * k * LN_2PI
    }

    pub fn log_prob(&self, s: &[f64], a: &DVector<f64>) -> Result<f64> {
        self.check_state(s)?;
        if a.len() != self.action_dim() {
            return Err(Error::DimensionMismatch("action length".into()));
        }
        Ok(self.log_prob_features(&self.features.forward(s), a))
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Result<DVector<f64>> {
        let mu = self.mean(s)?;
        let z = DVector::from_fn(self.action_dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        // x = L^{-T} z has covariance (L L^T)^{-1} = Sigma
        let x = self.chol_l.transpose().solve_upper_triangular(&z).expect("cholesky factor is invertible");
        Ok(mu + x)
    }

    /// Differential entropy; state independent.
    pub fn entropy(&self) -> f64 {
        let k = self.action_dim() as f64;
        0.5 * k * (LN_2PI + 1.0) - 0.5 * self.log_det_lambda
    }

    /// `KL(self(.|s) || old(.|s))` given both feature vectors.
    pub fn kl_features(&self, phi_self: &DVector<f64>, old: &Self, phi_old: &DVector<f64>) -> f64 {
        let k = self.action_dim() as f64;
        let dm = self.mean_from_features(phi_self) - old.mean_from_features(phi_old);
        // identical precisions contribute exactly zero
        let cov_term = if self.lambda == old.lambda {
            0.0
        } else {
            (&old.lambda * &self.sigma).trace() - k + self.log_det_lambda - old.log_det_lambda
        };
        0.5 * (cov_term + dm.dot(&(&old.lambda * &dm)))
    }

    pub fn kl(&self, old: &Self, states: &[Vec<f64>]) -> Result<f64> {
        if old.action_dim() != self.action_dim() || old.features.input_dim() != self.features.input_dim() {
            return Err(Error::DimensionMismatch("policies disagree on action or input space".into()));
        }
        if states.is_empty() {
            return Ok(0.0);
        }
        let total: f64 =
            states.iter().map(|s| self.kl_features(&self.features.forward(s), old, &old.features.forward(s))).sum();
        Ok(total / states.len() as f64)
    }

    pub fn precision_len(&self) -> usize {
        match self.storage {
            PrecisionStorage::Diagonal => self.action_dim(),
            PrecisionStorage::Dense => self.action_dim() * self.action_dim(),
        }
    }

    pub fn loglinear_len(&self) -> usize {
        self.precision_len() + self.u.len()
    }

    pub fn param_count(&self) -> usize {
        self.loglinear_len() + self.features.param_count()
    }

    fn push_precision_block(&self, m: &DMatrix<f64>, out: &mut Vec<f64>) {
        let k = self.action_dim();
        match self.storage {
            PrecisionStorage::Diagonal => out.extend((0..k).map(|i| m[(i, i)])),
            PrecisionStorage::Dense => {
                for i in 0..k {
                    out.extend(m.row(i).iter());
                }
            }
        }
    }

    pub fn precision_from_block(&self, block: &[f64]) -> DMatrix<f64> {
        let k = self.action_dim();
        match self.storage {
            PrecisionStorage::Diagonal => DMatrix::from_diagonal(&DVector::from_column_slice(block)),
            PrecisionStorage::Dense => DMatrix::from_row_slice(k, k, block),
        }
    }

    pub fn u_from_block(&self, block: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.feature_dim(), self.action_dim(), block)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.push_precision_block(&self.lambda, &mut out);
        for j in 0..self.u.nrows() {
            out.extend(self.u.row(j).iter());
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
        let p = self.precision_len();
        let ll = self.loglinear_len();
        let mut features = self.features.clone();
        features.set_params(&flat[ll..])?;
        Self::new(features, self.u_from_block(&flat[p..ll]), self.precision_from_block(&flat[..p]), self.storage)
    }

    pub fn with_features(&self, features: FeatureMap) -> Result<Self> {
        Self::new(features, self.u.clone(), self.lambda.clone(), self.storage)
    }

    /// `grad_theta log pi(a|s)` over all parameters, from a feature trace.
    pub fn grad_log_prob_trace(&self, trace: &FeatureTrace, a: &DVector<f64>) -> Vec<f64> {
        let phi = &trace.output;
        let mu = self.mean_from_features(phi);
        let d = a - &mu;
        let g_lambda = (&self.sigma + &mu * mu.transpose() - a * a.transpose()) * 0.5;
        let mut out = Vec::with_capacity(self.param_count());
        self.push_precision_block(&g_lambda, &mut out);
        for j in 0..self.feature_dim() {
            out.extend(d.iter().map(|di| phi[j] * di));
        }
        out.extend(self.features.vjp(trace, &(&self.u * &d)));
        out
    }

    pub fn grad_log_prob(&self, s: &[f64], a: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_state(s)?;
        Ok(self.grad_log_prob_trace(&self.features.trace(s), a))
    }

    /// Sufficient statistics `psi(s,a) = [-vec(0.5 a a^T), vec(a phi(s)^T)]` over the log-linear block.
    pub fn psi(&self, s: &[f64], a: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_state(s)?;
        let phi = self.features.forward(s);
        let mut out = Vec::with_capacity(self.loglinear_len());
        self.push_precision_block(&(a * a.transpose() * -0.5), &mut out);
        for j in 0..self.feature_dim() {
            out.extend(a.iter().map(|ai| ai * phi[j]));
        }
        Ok(out)
    }

    /// `E_{pi(.|s)}[psi(s, .)]`.
    pub fn expected_psi(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_state(s)?;
        let phi = self.features.forward(s);
        let mu = self.mean_from_features(&phi);
        let mut out = Vec::with_capacity(self.loglinear_len());
        self.push_precision_block(&((&self.sigma + &mu * mu.transpose()) * -0.5), &mut out);
        for j in 0..self.feature_dim() {
            out.extend(mu.iter().map(|m| m * phi[j]));
        }
        Ok(out)
    }
}
