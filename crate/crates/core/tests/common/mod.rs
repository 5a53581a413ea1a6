//! Reference computations shared by the integration tests. Nothing here calls
//! into the dual or update code; densities, entropies and divergences are
//! written out from their textbook forms.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random_spd(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() * 0.5 + DMatrix::identity(k, k) * 0.5
}

pub fn random_sym(k: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-scale..scale));
    (&a + a.transpose()) * 0.5
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    d / b.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Log-density of `N(mean, precision^{-1})`.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, precision: &DMatrix<f64>) -> f64 {
    let d = x - mean;
    let k = x.len() as f64;
    -0.5 * d.dot(&(precision * &d)) + 0.5 * precision.determinant().ln() - 0.5 * k * (2.0 * PI).ln()
}

pub fn mvn_entropy(precision: &DMatrix<f64>) -> f64 {
    let k = precision.nrows() as f64;
    0.5 * k * (2.0 * PI * std::f64::consts::E).ln() - 0.5 * precision.determinant().ln()
}

/// `KL(N(m1, P1^{-1}) || N(m0, P0^{-1}))`.
pub fn mvn_kl(m1: &DVector<f64>, p1: &DMatrix<f64>, m0: &DVector<f64>, p0: &DMatrix<f64>) -> f64 {
    let k = m1.len() as f64;
    let s1 = p1.clone().try_inverse().unwrap();
    let d = m1 - m0;
    0.5 * ((p0 * s1).trace() + d.dot(&(p0 * &d)) - k + p1.determinant().ln() - p0.determinant().ln())
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

pub fn categorical_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

pub fn log_mean_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + (x.iter().map(|v| (v - m).exp()).sum::<f64>() / x.len() as f64).ln()
}

/// One state of a Gaussian dual instance: `pi_old = N(mean, precision^{-1})` and
/// advantage `G(a) = -0.5 a^T W a + r^T a`.
pub struct GaussianTerm {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub w_aa: DMatrix<f64>,
    pub r: DVector<f64>,
}

impl GaussianTerm {
    pub fn advantage(&self, a: &DVector<f64>) -> f64 {
        -0.5 * a.dot(&(&self.w_aa * a)) + self.r.dot(a)
    }

    /// Importance-sampled `t log ∫ pi_old(a)^{eta/t} exp(G(a)/t) da`, `t = eta + omega`.
    pub fn monte_carlo(&self, eta: f64, omega: f64, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
        let t = eta + omega;
        // the log-integrand is quadratic; sample around its peak with a
        // slightly inflated covariance so the weights stay bounded
        let h = &self.precision * eta + &self.w_aa;
        let h_inv = h.try_inverse().expect("eta Lambda + W positive definite");
        let mean = &h_inv * (&self.precision * &self.mean * eta + &self.r);
        let cov = &h_inv * (1.1 * t);
        let l = cov.clone().cholesky().expect("proposal covariance").l();
        let prop_prec = cov.try_inverse().unwrap();
        let mut logw = Vec::with_capacity(samples);
        for _ in 0..samples {
            let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = &mean + &l * z;
            let log_f = eta / t * mvn_log_density(&a, &self.mean, &self.precision) + self.advantage(&a) / t;
            logw.push(log_f - mvn_log_density(&a, &mean, &prop_prec));
        }
        t * log_mean_exp(&logw)
    }

    /// Same integral by trapezoidal quadrature; one-dimensional terms only.
    pub fn quadrature_1d(&self, eta: f64, omega: f64) -> f64 {
        assert_eq!(self.mean.len(), 1);
        let t = eta + omega;
        let (m, lam, w, r) = (self.mean[0], self.precision[(0, 0)], self.w_aa[(0, 0)], self.r[0]);
        let n = 400_000;
        let (lo, hi) = (-40.0, 40.0);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let a = lo + i as f64 * h;
            let lp = -0.5 * lam * (a - m) * (a - m) + 0.5 * lam.ln() - 0.5 * (2.0 * PI).ln();
            let g = -0.5 * w * a * a + r * a;
            let wt = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += wt * (eta / t * lp + g / t).exp();
        }
        t * (acc * h).ln()
    }
}

/// Dual value written directly from its definition, averaging the per-state integrals.
pub fn dual_from_terms(eta: f64, omega: f64, epsilon: f64, beta: f64, entropy_old: f64, terms: &[f64]) -> f64 {
    eta * epsilon + omega * (beta - entropy_old) + terms.iter().sum::<f64>() / terms.len() as f64
}

/// Total variation between two univariate normals by quadrature.
pub fn normal_tv(mu1: f64, var1: f64, mu2: f64, var2: f64) -> f64 {
    let lo = (mu1 - 12.0 * var1.sqrt()).min(mu2 - 12.0 * var2.sqrt());
    let hi = (mu1 + 12.0 * var1.sqrt()).max(mu2 + 12.0 * var2.sqrt());
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let pdf = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
    let mut acc = 0.0;
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let wt = if i == 0 || i == n { 0.5 } else { 1.0 };
        acc += wt * (pdf(x, mu1, var1) - pdf(x, mu2, var2)).abs();
    }
    0.5 * acc * h
}

/// Maximize `E[-0.5 R a^2 + r a]` over `N(mu, 1/B)` subject to the KL bound and
/// the entropy-loss budget, by a zooming grid over `(B, mu)`.
pub fn toy_brute_force(r_quad: f64, r_lin: f64, b_old: f64, mu_old: f64, epsilon: f64, beta: f64) -> (f64, f64) {
    let kl = |b: f64, mu: f64| 0.5 * (b_old / b - 1.0 + (b / b_old).ln() + b_old * (mu - mu_old).powi(2));
    // entropy loss is 0.5 log(B / B_old)
    let feasible = |b: f64, mu: f64| kl(b, mu) <= epsilon && 0.5 * (b / b_old).ln() <= beta;
    let reward = |b: f64, mu: f64| -0.5 * r_quad * (mu * mu + 1.0 / b) + r_lin * mu;
    let (mut b_lo, mut b_hi) = (0.5 * b_old, 2.0 * b_old);
    let (mut m_lo, mut m_hi) = (mu_old - 1.0, mu_old + 1.0);
    let mut best = (b_old, mu_old);
    for _ in 0..10 {
        let n = 300;
        let mut best_r = f64::NEG_INFINITY;
        for i in 0..=n {
            let b = b_lo + (b_hi - b_lo) * i as f64 / n as f64;
            for j in 0..=n {
                let mu = m_lo + (m_hi - m_lo) * j as f64 / n as f64;
                if b > 0.0 && feasible(b, mu) && reward(b, mu) > best_r {
                    best_r = reward(b, mu);
                    best = (b, mu);
                }
            }
        }
        let (db, dm) = (3.0 * (b_hi - b_lo) / n as f64, 3.0 * (m_hi - m_lo) / n as f64);
        (b_lo, b_hi, m_lo, m_hi) = (best.0 - db, best.0 + db, best.1 - dm, best.1 + dm);
    }
    best
}

/// Log-linear softmax over raw state features: compatible features
/// `(e_a - pi) ⊗ s`, flattened in the row-major order of `theta`.
pub fn softmax_compatible(theta: &DMatrix<f64>, s: &[f64], a: usize) -> Vec<f64> {
    let z: Vec<f64> = (0..theta.nrows()).map(|i| (0..s.len()).map(|j| theta[(i, j)] * s[j]).sum()).collect();
    let p = softmax(&z);
    let mut out = Vec::with_capacity(theta.len());
    for (i, pi) in p.iter().enumerate() {
        let e = if i == a { 1.0 } else { 0.0 };
        out.extend(s.iter().map(|x| (e - pi) * x));
    }
    out
}

pub fn softmax_probs(theta: &DMatrix<f64>, s: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = (0..theta.nrows()).map(|i| (0..s.len()).map(|j| theta[(i, j)] * s[j]).sum()).collect();
    softmax(&z)
}

/// State-averaged `sum_a pi(a|s) phi phi^T` of a log-linear softmax.
pub fn softmax_dense_fisher(theta: &DMatrix<f64>, states: &[Vec<f64>]) -> DMatrix<f64> {
    let d = theta.len();
    let mut f = DMatrix::zeros(d, d);
    for s in states {
        let p = softmax_probs(theta, s);
        for (a, pa) in p.iter().enumerate() {
            let phi = DVector::from_vec(softmax_compatible(theta, s, a));
            f += &phi * phi.transpose() * *pa;
        }
    }
    f / states.len() as f64
}
