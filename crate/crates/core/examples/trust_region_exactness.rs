//! One COPOS step on a Gaussian bandit batch: the realized KL and entropy hit their budgets.

use copos::envs::QuadraticBandit;
use copos::policy::Policy;
use copos::rollout::Batch;
use copos::update::{copos_update, UpdateConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    // far from the optimum at a = 3, so the KL bound binds
    let env = QuadraticBandit::new(1.0, 3.0)?;
    let policy = Policy::Gaussian(QuadraticBandit::policy(1.0, 0.0)?);
    let s = QuadraticBandit::state();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let actions = (0..5000).map(|_| policy.sample(&s, &mut rng)).collect::<Result<Vec<_>, _>>()?;
    let rewards: Vec<f64> = actions.iter().map(|a| env.reward(a.as_continuous().unwrap()[0])).collect();
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let batch = Batch::from_samples(vec![s; actions.len()], actions, rewards.iter().map(|r| r - mean).collect())?;

    let cfg = UpdateConfig { epsilon: 0.05, ..UpdateConfig::default() };
    for beta in [None, Some(0.0), Some(0.01)] {
        let (new, d) = copos_update(&policy, &batch, &cfg, beta)?;
        println!(
            "beta {beta:?}: KL = {:.6} (eps {}), entropy {:.5} -> {:.5}, eta = {:.4}, omega = {:.4}",
            new.kl(&policy, &batch.states)?,
            cfg.epsilon,
            d.entropy_before,
            d.entropy_after,
            d.eta.unwrap_or(f64::NAN),
            d.omega.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
