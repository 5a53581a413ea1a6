//! Matrix-free conjugate gradient for symmetric positive (semi-)definite operators.

use crate::linalg::{dot, norm};

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub x: Vec<f64>,
    /// Norm of the recursively updated residual `b - A x`.
    pub residual: f64,
    pub iterations: usize,
}

/// Solve `A x = b` starting from `x = 0`.
///
/// Stops once `||r|| <= tol * ||b||` or after `max_iter` iterations. Starting
/// from zero keeps the iterates in the range of `A`, so for singular PSD
/// operators the limit is the minimum-norm solution.
pub fn conjugate_gradient<F>(mut apply: F, b: &[f64], max_iter: usize, tol: f64) -> CgResult
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = tol * norm(b);
    let mut iterations = 0;
    while iterations < max_iter && rr.sqrt() > target {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            log::warn!("conjugate gradient hit non-positive curvature p^T A p = {pap:e}");
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iterations += 1;
    }
    CgResult { x, residual: rr.sqrt(), iterations }
}
