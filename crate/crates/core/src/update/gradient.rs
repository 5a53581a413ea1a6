//! Gradient-based baselines: truncated natural gradient, TRPO-style line search, vanilla PG.

use super::{Diagnostics, UpdateConfig};
use crate::compat::{policy_gradient, prepared_advantages, solve_for_gradient, FisherOperator};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::policy::Policy;
use crate::rollout::Batch;

/// Importance-weighted surrogate `mean_i pi(a_i|s_i) / pi_old(a_i|s_i) * A_i`.
pub fn surrogate(policy: &Policy, old: &Policy, batch: &Batch, advantages: &[f64]) -> Result<f64> {
    if advantages.len() != batch.len() {
        return Err(Error::DimensionMismatch("one advantage per sample required".into()));
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for ((s, a), &adv) in batch.states.iter().zip(&batch.actions).zip(advantages) {
        total += (policy.log_prob(s, a)? - old.log_prob(s, a)?).exp() * adv;
    }
    Ok(total / batch.len() as f64)
}

fn step(policy: &Policy, dir: &[f64], scale: f64) -> Result<Policy> {
    let theta: Vec<f64> = policy.params().iter().zip(dir).map(|(t, w)| t + scale * w).collect();
    policy.with_params(&theta)
}

/// Step length making the quadratic KL model `0.5 scale^2 w^T F w` equal to `epsilon`.
fn trust_region_scale(policy: &Policy, states: &[Vec<f64>], w: &[f64], epsilon: f64) -> Result<f64> {
    let op = FisherOperator::new(policy, states, 0.0)?;
    let wfw = dot(w, &op.apply(w));
    if !(wfw > 0.0 && wfw.is_finite()) {
        return Err(Error::NonPositiveCurvature(wfw));
    }
    Ok((2.0 * epsilon / wfw).sqrt())
}

fn unchanged(policy: &Policy, mut d: Diagnostics, why: &str) -> (Policy, Diagnostics) {
    d.skipped = true;
    d.entropy_after = d.entropy_before;
    d.warn(why.into());
    (policy.clone(), d)
}

pub fn tnpg_update(policy: &Policy, batch: &Batch, cfg: &UpdateConfig) -> Result<(Policy, Diagnostics)> {
    cfg.validate()?;
    let states = &batch.states;
    let est = policy_gradient(policy, batch, cfg.natural.normalize_advantages)?;
    let sol = solve_for_gradient(policy, states, est.g, &cfg.natural)?;
    let mut d = Diagnostics {
        entropy_before: policy.entropy(states)?,
        grad_norm: sol.g_norm(),
        w_norm: sol.w_norm(),
        cg_residual: sol.cg_residual,
        ..Default::default()
    };
    if d.w_norm == 0.0 {
        return Ok(unchanged(policy, d, "zero natural gradient; no step taken"));
    }
    let scale = trust_region_scale(policy, states, &sol.w, cfg.epsilon)?;
    let new = step(policy, &sol.w, scale)?;
    d.kl = new.kl(policy, states)?;
    d.entropy_after = new.entropy(states)?;
    Ok((new, d))
}

pub fn trpo_update(policy: &Policy, batch: &Batch, cfg: &UpdateConfig) -> Result<(Policy, Diagnostics)> {
    cfg.validate()?;
    let states = &batch.states;
    let c = cfg.trpo_entropy_bonus_coeff;
    let mut g = policy_gradient(policy, batch, cfg.natural.normalize_advantages)?.g;
    if c != 0.0 {
        for (gi, hi) in g.iter_mut().zip(policy.entropy_grad(states)?) {
            *gi += c * hi;
        }
    }
    let sol = solve_for_gradient(policy, states, g, &cfg.natural)?;
    let h_old = policy.entropy(states)?;
    let mut d = Diagnostics {
        entropy_before: h_old,
        grad_norm: sol.g_norm(),
        w_norm: sol.w_norm(),
        cg_residual: sol.cg_residual,
        ..Default::default()
    };
    if d.w_norm == 0.0 {
        return Ok(unchanged(policy, d, "zero natural gradient; no step taken"));
    }
    let full = trust_region_scale(policy, states, &sol.w, cfg.epsilon)?;
    let adv = prepared_advantages(batch, cfg.natural.normalize_advantages)?;
    let objective = |p: &Policy| -> Result<f64> {
        let bonus = if c != 0.0 { c * p.entropy(states)? } else { 0.0 };
        Ok(surrogate(p, policy, batch, &adv)? + bonus)
    };
    let base = objective(policy)?;
    let mut s = 1.0;
    for _ in 0..cfg.line_search.max_steps {
        // a backtracked step can leave the precision cone only if the full one did
        if let Ok(cand) = step(policy, &sol.w, s * full) {
            let kl = cand.kl(policy, states)?;
            if kl <= cfg.epsilon && objective(&cand)? > base {
                d.kl = kl;
                d.entropy_after = cand.entropy(states)?;
                d.linesearch_s = Some(s);
                return Ok((cand, d));
            }
        }
        s *= cfg.line_search.backtrack_ratio;
    }
    d.linesearch_s = Some(0.0);
    Ok(unchanged(policy, d, "line search found no improving step inside the trust region; keeping the old policy"))
}

pub fn vpg_update(policy: &Policy, batch: &Batch, cfg: &UpdateConfig) -> Result<(Policy, Diagnostics)> {
    let states = &batch.states;
    let est = policy_gradient(policy, batch, cfg.natural.normalize_advantages)?;
    let new = step(policy, &est.g, cfg.vpg_learning_rate)?;
    let d = Diagnostics {
        entropy_before: policy.entropy(states)?,
        entropy_after: new.entropy(states)?,
        kl: new.kl(policy, states)?,
        grad_norm: norm(&est.g),
        ..Default::default()
    };
    Ok((new, d))
}
