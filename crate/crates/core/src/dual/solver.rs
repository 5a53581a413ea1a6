//! Minimization of the dual over `(eta, omega)`.
//!
//! The dual is jointly convex, so `g*(eta) = min_omega g(eta, omega)` is convex
//! in `eta` and its derivative `eps - KL(eta, omega*(eta))` is monotone. The
//! solver nests two bracketed one-dimensional root searches on those
//! derivatives: the inner one for `omega*` (closed form for Gaussians), the
//! outer one for `eta` in log space. Everything is deterministic.

use super::{ConstraintKind, DualMode, DualProblem, DualSolution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop when `|KL - eps| <= kl_rtol * eps`.
    pub kl_rtol: f64,
    /// Stop the `omega` search when the entropy is this close to its target.
    pub entropy_atol: f64,
    pub max_evaluations: usize,
    /// In equality mode `eta + omega` stays above `eta_min_frac * eta`.
    pub eta_min_frac: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { kl_rtol: 1e-7, entropy_atol: 1e-10, max_evaluations: 20_000, eta_min_frac: 1e-6 }
    }
}

struct Counter {
    evaluations: usize,
    limit: usize,
}

impl Counter {
    fn tick(&mut self) -> bool {
        self.evaluations += 1;
        self.evaluations <= self.limit
    }
}

/// Root of an increasing function on `[lo, hi]` with `f(lo) < 0 < f(hi)`, by the
/// Illinois variant of regula falsi with a bisection fallback.
fn bracketed_root(
    mut f: impl FnMut(f64) -> Option<f64>,
    mut lo: f64,
    mut f_lo: f64,
    mut hi: f64,
    mut f_hi: f64,
    done: impl Fn(f64, f64) -> bool,
) -> Option<f64> {
    let mut side = 0i8;
    let mut width = hi - lo;
    for _ in 0..400 {
        let mut x = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x)?;
        if done(x, fx) || hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Some(x);
        }
        if fx < 0.0 {
            lo = x;
            f_lo = fx;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            f_hi = fx;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
        if hi - lo > 0.5 * width {
            // slow progress: force a bisection step
            let mid = 0.5 * (lo + hi);
            let fm = f(mid)?;
            if done(mid, fm) {
                return Some(mid);
            }
            if fm < 0.0 {
                lo = mid;
                f_lo = fm;
            } else {
                hi = mid;
                f_hi = fm;
            }
            side = 0;
        }
        width = hi - lo;
    }
    Some(0.5 * (lo + hi))
}

fn unreachable(p: &DualProblem, range: (f64, f64)) -> Error {
    Error::EntropyBudgetUnreachable { target: p.entropy_target(), min: range.0, max: range.1 }
}

fn omega_for_eta(p: &DualProblem, eta: f64, cfg: &SolverConfig, counter: &mut Counter) -> Result<Option<f64>> {
    if p.constraint == ConstraintKind::KlOnly {
        return Ok(Some(0.0));
    }
    let target = p.entropy_target();
    let lower_t = match p.constraint {
        ConstraintKind::Inequality => eta,
        _ => eta * cfg.eta_min_frac,
    };
    if p.mode != DualMode::Discrete {
        counter.tick();
        return Ok(p.gaussian_omega_for_entropy(eta, target).map(|omega| match p.constraint {
            ConstraintKind::Inequality => omega.max(0.0),
            _ => omega.max(lower_t - eta),
        }));
    }

    // discrete: search ln(eta + omega)
    let mut excess = |ln_t: f64| -> Option<f64> {
        if !counter.tick() {
            return None;
        }
        let omega = ln_t.exp() - eta;
        p.induced(eta, omega).map(|ind| ind.entropy - target)
    };
    let range = p.entropy_range(eta);
    if !(target < range.1) {
        return Err(unreachable(p, range));
    }
    let lo = lower_t.ln();
    let Some(f_lo) = excess(lo) else { return Ok(None) };
    if f_lo >= 0.0 {
        return match p.constraint {
            ConstraintKind::Inequality => Ok(Some(0.0)),
            _ if f_lo.abs() <= cfg.entropy_atol => Ok(Some(lower_t - eta)),
            _ => Err(unreachable(p, range)),
        };
    }
    let mut step = 1.0;
    let mut hi = eta.ln() + step;
    let mut f_hi = match excess(hi) {
        Some(v) => v,
        None => return Ok(None),
    };
    while f_hi < 0.0 {
        if hi > eta.ln() + 200.0 {
            return Err(unreachable(p, range));
        }
        step *= 2.0;
        hi += step;
        f_hi = match excess(hi) {
            Some(v) => v,
            None => return Ok(None),
        };
    }
    let atol = cfg.entropy_atol;
    let root = bracketed_root(&mut excess, lo, f_lo, hi, f_hi, |_, fx| fx.abs() <= atol);
    Ok(root.map(|ln_t| ln_t.exp() - eta))
}

/// `omega` minimizing the dual for fixed `eta`.
pub fn solve_omega(p: &DualProblem, eta: f64) -> Result<f64> {
    let cfg = SolverConfig::default();
    let mut counter = Counter { evaluations: 0, limit: cfg.max_evaluations };
    omega_for_eta(p, eta, &cfg, &mut counter)?.ok_or(Error::DualNotConverged {
        best: DualSolution {
            eta,
            omega: 0.0,
            dual_value: f64::INFINITY,
            converged: false,
            evaluations: counter.evaluations,
            kl: f64::NAN,
            entropy: f64::NAN,
            kl_active: true,
        },
    })
}

pub fn solve_dual(p: &DualProblem) -> Result<DualSolution> {
    solve_dual_with(p, &SolverConfig::default())
}

pub fn solve_dual_with(p: &DualProblem, cfg: &SolverConfig) -> Result<DualSolution> {
    let mut counter = Counter { evaluations: 0, limit: cfg.max_evaluations };
    let eta_bound = p.eta_lower_bound();
    let eps = p.epsilon;

    // KL excess of the induced policy, as a function of ln eta; None when infeasible
    let mut best: Option<(f64, f64)> = None;
    let kl_minus_eps = |ln_eta: f64, counter: &mut Counter| -> Result<Option<(f64, f64)>> {
        let eta = ln_eta.exp();
        if !(eta > eta_bound) {
            return Ok(None);
        }
        let Some(omega) = omega_for_eta(p, eta, cfg, counter)? else {
            return Ok(None);
        };
        if !counter.tick() {
            return Ok(None);
        }
        Ok(p.induced(eta, omega).map(|ind| (ind.kl - eps, omega)))
    };

    let finish = |eta: f64, omega: f64, evaluations: usize, converged: bool, kl_active: bool| {
        let ind = p.induced(eta, omega);
        DualSolution {
            eta,
            omega,
            dual_value: p.value(eta, omega),
            converged,
            evaluations,
            kl: ind.map_or(f64::NAN, |i| i.kl),
            entropy: ind.map_or(f64::NAN, |i| i.entropy),
            kl_active,
        }
    };

    let mut eta0 = p.eta_hint.unwrap_or(1.0);
    if eta0 <= eta_bound {
        eta0 = 2.0 * eta_bound;
    }
    let mut x = eta0.ln();
    let Some((mut fx, mut omega)) = kl_minus_eps(x, &mut counter)? else {
        return Err(Error::DualNotConverged { best: finish(eta0, 0.0, counter.evaluations, false, true) });
    };
    best.replace((x, omega));

    // bracket: f decreasing in ln eta (larger eta, smaller step)
    let (lo, f_lo, hi, f_hi);
    if fx > 0.0 {
        // KL too large: grow eta
        let mut step = 1.0;
        loop {
            let nx = x + step;
            let Some((nf, nw)) = kl_minus_eps(nx, &mut counter)? else {
                let (bx, bw) = best.unwrap();
                return Err(Error::DualNotConverged { best: finish(bx.exp(), bw, counter.evaluations, false, true) });
            };
            best.replace((nx, nw));
            if nf <= 0.0 {
                (lo, f_lo, hi, f_hi) = (x, fx, nx, nf);
                omega = nw;
                break;
            }
            x = nx;
            fx = nf;
            step *= 2.0;
            if step > 1e4 {
                return Err(Error::DualNotConverged { best: finish(nx.exp(), nw, counter.evaluations, false, true) });
            }
        }
    } else {
        // KL too small: shrink eta toward the feasibility bound
        let floor = (eta0 * 1e-12).max(eta_bound * (1.0 + 1e-12)).max(f64::MIN_POSITIVE);
        loop {
            let eta = x.exp();
            let next_eta = if eta_bound > 0.0 { eta_bound + 0.25 * (eta - eta_bound) } else { 0.25 * eta };
            if next_eta <= floor || (next_eta - eta_bound) <= 1e-12 * eta_bound {
                // the KL bound never binds
                return Ok(finish(eta, omega, counter.evaluations, true, false));
            }
            let nx = next_eta.ln();
            let Some((nf, nw)) = kl_minus_eps(nx, &mut counter)? else {
                return Ok(finish(eta, omega, counter.evaluations, true, false));
            };
            if nf >= 0.0 {
                (lo, f_lo, hi, f_hi) = (nx, nf, x, fx);
                break;
            }
            x = nx;
            fx = nf;
            omega = nw;
        }
    }
    if f_lo.abs() <= cfg.kl_rtol * eps {
        return Ok(finish(
            lo.exp(),
            solve_omega_quiet(p, lo.exp(), cfg, &mut counter)?,
            counter.evaluations,
            true,
            true,
        ));
    }
    if f_hi.abs() <= cfg.kl_rtol * eps {
        return Ok(finish(hi.exp(), omega, counter.evaluations, true, true));
    }

    // root of (eps - KL) which increases in ln eta
    let mut failure: Option<Error> = None;
    let tol = cfg.kl_rtol * eps;
    let root = bracketed_root(
        |ln_eta| match kl_minus_eps(ln_eta, &mut counter) {
            Ok(Some((f, _))) => Some(-f),
            Ok(None) => None,
            Err(e) => {
                failure = Some(e);
                None
            }
        },
        lo,
        -f_lo,
        hi,
        -f_hi,
        |_, fx| fx.abs() <= tol,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let Some(ln_eta) = root else {
        return Err(Error::DualNotConverged { best: finish(hi.exp(), omega, counter.evaluations, false, true) });
    };
    let eta = ln_eta.exp();
    let omega = solve_omega_quiet(p, eta, cfg, &mut counter)?;
    let sol = finish(eta, omega, counter.evaluations, true, true);
    if (sol.kl - eps).abs() > 1e-3 * eps {
        return Err(Error::DualNotConverged { best: DualSolution { converged: false, ..sol } });
    }
    Ok(sol)
}

fn solve_omega_quiet(p: &DualProblem, eta: f64, cfg: &SolverConfig, counter: &mut Counter) -> Result<f64> {
    Ok(omega_for_eta(p, eta, cfg, counter)?.unwrap_or(0.0))
}
