//! Vanilla and natural gradient of a softmax policy on a sampled chain-MDP batch.

use copos::compat::{policy_gradient, solve_natural_gradient, NaturalGradientConfig};
use copos::envs::make_env;
use copos::harness::{build_policy, ExperimentConfig};
use copos::rollout::{collect, compute_advantages, BaselineKind};

fn main() -> anyhow::Result<()> {
    let env = make_env("chain", 0)?;
    let cfg = ExperimentConfig { env: "chain".into(), ..ExperimentConfig::default() };
    let policy = build_policy(env.as_ref(), &cfg)?;
    let mut batch = collect(&policy, env.as_ref(), 2000, env.horizon(), 1, 0, 1)?;
    compute_advantages(&mut batch, BaselineKind::StateValue)?;

    let g = policy_gradient(&policy, &batch, true)?;
    let sol = solve_natural_gradient(&policy, &batch, &NaturalGradientConfig::default())?;
    println!("samples: {}, parameters: {}", batch.len(), policy.param_count());
    println!("|g| = {:.4e}, |w| = {:.4e}", sol.g_norm(), sol.w_norm());
    println!("CG: {} iterations, residual {:.3e}", sol.cg_iterations, sol.cg_residual);
    let gw: f64 = g.g.iter().zip(&sol.w).map(|(a, b)| a * b).sum();
    // the step length that moves KL by 0.01 under the quadratic model
    println!("w^T F w ~ g^T w = {gw:.4e}, step for KL 0.01: {:.4}", (2.0 * 0.01 / gw).sqrt());
    Ok(())
}
