//! Small dense helpers shared by the policy, dual and analysis code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Minimum eigenvalue accepted for a precision matrix.
pub const PD_TOLERANCE: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of a symmetric matrix whose smallest eigenvalue exceeds `PD_TOLERANCE`.
pub fn cholesky_pd(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let min_diag = (0..m.nrows()).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_diag * min_diag <= PD_TOLERANCE {
        return None;
    }
    Some(chol)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

pub fn log_det_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Stable softmax; returns (probabilities, log-probabilities).
pub fn softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let lse = log_sum_exp(logits);
    let logp: Vec<f64> = logits.iter().map(|z| z - lse).collect();
    let p = logp.iter().map(|l| l.exp()).collect();
    (p, logp)
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Infimum of `t` such that `t * a + b` is positive definite, given `a = L L^T`.
/// Equals the largest eigenvalue of `-L^{-1} b L^{-T}`.
pub fn pd_threshold(a_chol: &Cholesky<f64, Dyn>, b: &DMatrix<f64>) -> f64 {
    let l = a_chol.l();
    let linv = l.clone().try_inverse().expect("cholesky factor is invertible");
    let m = symmetrize(&(-(&linv * b * linv.transpose())));
    SymmetricEigen::new(m).eigenvalues.max()
}
