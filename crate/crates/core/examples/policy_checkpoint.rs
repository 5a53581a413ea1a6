//! Save and reload a softmax policy; the round trip preserves every parameter.

use copos::envs::make_env;
use copos::harness::{build_policy, ExperimentConfig};
use copos::policy::checkpoint;

fn main() -> anyhow::Result<()> {
    let env = make_env("fvrs-5x7-noise", 0)?;
    let cfg = ExperimentConfig { env: "fvrs-5x7-noise".into(), ..ExperimentConfig::default() };
    let policy = build_policy(env.as_ref(), &cfg)?;
    let path = std::env::temp_dir().join(format!("copos-policy-{}", std::process::id()));
    checkpoint::save(&policy, &path)?;
    let back = checkpoint::load(&path)?;
    println!("parameters: {}", policy.param_count());
    println!("identical after reload: {}", back.params() == policy.params());
    let s = vec![0.0; env.observation_dim()];
    println!("log pi(a=0 | 0) = {:.6}", back.log_prob(&s, &copos::policy::Action::Discrete(0))?);
    std::fs::remove_file(&path)?;
    Ok(())
}
