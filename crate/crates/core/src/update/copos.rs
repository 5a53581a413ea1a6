use super::{surrogate, Diagnostics, UpdateConfig};
use crate::compat::{prepared_advantages, solve_natural_gradient, CompatibleSolution};
use crate::dual::solver::{solve_dual_with, solve_omega};
use crate::dual::{ConstraintKind, DualProblem};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rollout::Batch;

/// Relative slack on the KL bound when bisecting the nonlinear step.
const KL_SLACK: f64 = 1e-4;

/// New parameters from multipliers: the log-linear block becomes
/// `(eta / (eta + omega)) theta + w / (eta + omega)` and the nonlinear block
/// moves by `s w_beta / eta`.
///
/// At `omega = 0` the log-linear computation is exactly `theta + w / eta`.
pub fn apply_multipliers(policy: &Policy, sol: &CompatibleSolution, eta: f64, omega: f64, s: f64) -> Result<Policy> {
    let theta = policy.params();
    if sol.w.len() != theta.len() {
        return Err(Error::DimensionMismatch(format!(
            "solution has {} entries, policy has {} parameters",
            sol.w.len(),
            theta.len()
        )));
    }
    let t = eta + omega;
    let q = eta / t;
    let ll = sol.layout.loglinear();
    let mut out = Vec::with_capacity(theta.len());
    out.extend((0..ll).map(|i| q * theta[i] + sol.w[i] / t));
    out.extend((ll..theta.len()).map(|i| theta[i] + s * sol.w[i] / eta));
    policy.with_params(&out)
}

/// COPOS step on a batch: natural gradient, dual multipliers, then the update.
///
/// `beta_h = None` drops the entropy constraint.
pub fn copos_update(
    policy: &Policy,
    batch: &Batch,
    cfg: &UpdateConfig,
    beta_h: Option<f64>,
) -> Result<(Policy, Diagnostics)> {
    let sol = solve_natural_gradient(policy, batch, &cfg.natural)?;
    copos_update_with_solution(policy, batch, &sol, cfg, beta_h)
}

/// COPOS step for a precomputed compatible solution.
pub fn copos_update_with_solution(
    policy: &Policy,
    batch: &Batch,
    sol: &CompatibleSolution,
    cfg: &UpdateConfig,
    beta_h: Option<f64>,
) -> Result<(Policy, Diagnostics)> {
    cfg.validate()?;
    let states = &batch.states;
    let mut d = Diagnostics {
        entropy_before: policy.entropy(states)?,
        beta_h,
        grad_norm: sol.g_norm(),
        w_norm: sol.w_norm(),
        cg_residual: sol.cg_residual,
        ..Default::default()
    };
    let constraint = if beta_h.is_some() { cfg.constraint() } else { ConstraintKind::KlOnly };

    let (eta, mut omega, problem) = match cfg.fixed_multipliers {
        Some((eta, omega)) => (eta, omega, None),
        None => {
            let mut problem =
                DualProblem::from_solution(policy, states, sol, cfg.epsilon, beta_h.unwrap_or(0.0), constraint)?;
            let dual = match solve_dual_with(&problem, &cfg.solver) {
                Err(Error::EntropyBudgetUnreachable { target, min, max })
                    if constraint == ConstraintKind::EqualityEntropy =>
                {
                    d.warn(format!(
                        "entropy target {target:.6} outside reachable ({min:.6}, {max:.6}); relaxing to an inequality"
                    ));
                    problem.constraint = ConstraintKind::Inequality;
                    solve_dual_with(&problem, &cfg.solver)?
                }
                other => other?,
            };
            d.dual_value = Some(dual.dual_value);
            d.dual_evaluations = dual.evaluations;
            if !dual.kl_active && dual.omega == 0.0 && problem.constraint != ConstraintKind::EqualityEntropy {
                d.skipped = true;
                d.eta = Some(dual.eta);
                d.omega = Some(0.0);
                d.entropy_after = d.entropy_before;
                return Ok((policy.clone(), d));
            }
            (dual.eta, dual.omega, Some(problem))
        }
    };

    let nonlinear = sol.layout.nonlinear > 0;
    let new = match policy {
        Policy::Gaussian(_) if nonlinear => {
            let mut s = 1.0;
            for _ in 0..cfg.alternating_rounds.max(1) {
                s = bisect_scale(policy, sol, eta, omega, states, cfg, &mut d)?;
                if let Some(p) = &problem {
                    omega = solve_omega(p, eta)?;
                }
            }
            d.linesearch_s = Some(s);
            apply_multipliers(policy, sol, eta, omega, s)?
        }
        Policy::Softmax(_) if nonlinear => {
            let adv = prepared_advantages(batch, cfg.natural.normalize_advantages)?;
            let surr_old = surrogate(policy, policy, batch, &adv)?;
            let kl_max = cfg.discrete_kl_factor * cfg.epsilon;
            let mut s = 1.0;
            let mut accepted = None;
            for _ in 0..cfg.line_search.max_steps {
                let cand = apply_multipliers(policy, sol, eta, omega, s)?;
                if cand.kl(policy, states)? <= kl_max && surrogate(&cand, policy, batch, &adv)? >= surr_old {
                    accepted = Some(cand);
                    break;
                }
                s *= cfg.line_search.backtrack_ratio;
            }
            match accepted {
                Some(p) => {
                    d.linesearch_s = Some(s);
                    p
                }
                None => {
                    d.warn(format!(
                        "line search found no step within {} tries; freezing nonlinear parameters",
                        cfg.line_search.max_steps
                    ));
                    d.linesearch_s = Some(0.0);
                    apply_multipliers(policy, sol, eta, omega, 0.0)?
                }
            }
        }
        _ => apply_multipliers(policy, sol, eta, omega, 1.0)?,
    };
    d.eta = Some(eta);
    d.omega = Some(omega);
    d.kl = new.kl(policy, states)?;
    d.entropy_after = new.entropy(states)?;
    Ok((new, d))
}

/// Largest `s` in `[0, 1]` whose realized KL stays within the bound, by bisection.
fn bisect_scale(
    policy: &Policy,
    sol: &CompatibleSolution,
    eta: f64,
    omega: f64,
    states: &[Vec<f64>],
    cfg: &UpdateConfig,
    d: &mut Diagnostics,
) -> Result<f64> {
    let bound = cfg.epsilon * (1.0 + KL_SLACK);
    let kl_at = |s: f64| -> Result<f64> { apply_multipliers(policy, sol, eta, omega, s)?.kl(policy, states) };
    if kl_at(1.0)? <= bound {
        return Ok(1.0);
    }
    if kl_at(0.0)? > bound {
        d.warn("KL bound violated even without a nonlinear step; freezing nonlinear parameters".into());
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..cfg.bisection_steps {
        let mid = 0.5 * (lo + hi);
        if kl_at(mid)? <= bound {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
