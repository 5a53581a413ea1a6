//! Environments: the quadratic bandit, a slippery chain and Field Vision RockSample.

pub mod bandit;
pub mod chain;
pub mod fvrs;

use rand_chacha::ChaCha8Rng;

pub use bandit::{bandit_expected_reward, QuadraticBandit};
pub use chain::ChainMdp;
pub use fvrs::{make_fvrs, FvrsEnv, FvrsInstance, FvrsState, SensorMode};

use crate::error::{Error, Result};
use crate::policy::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// One running episode. Created by [`Env::reset`].
pub trait Episode {
    fn observation(&self) -> Vec<f64>;
    fn step(&mut self, action: &Action, rng: &mut ChaCha8Rng) -> Result<Step>;
}

pub trait Env: Send + Sync {
    fn id(&self) -> String;
    fn observation_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    /// Maximum episode length.
    fn horizon(&self) -> usize;
    fn gamma(&self) -> f64;
    /// Upper bound on `|r|` for a single step.
    fn reward_bound(&self) -> f64;
    fn reset(&self, rng: &mut ChaCha8Rng) -> Box<dyn Episode + '_>;
}

pub const ENV_IDS: [&str; 8] = [
    "bandit",
    "chain",
    "fvrs-5x5-full",
    "fvrs-5x5-noise",
    "fvrs-5x7-full",
    "fvrs-5x7-noise",
    "fvrs-7x8-full",
    "fvrs-7x8-noise",
];

/// Build an environment from its registry id. `seed` fixes the FVRS rock layout.
pub fn make_env(id: &str, seed: u64) -> Result<Box<dyn Env>> {
    match id {
        "bandit" => Ok(Box::new(QuadraticBandit::new(1.0, 1.0)?)),
        "chain" => Ok(Box::new(ChainMdp::default())),
        _ => {
            let rest = id.strip_prefix("fvrs-").ok_or_else(|| Error::UnknownEnvironment(id.into()))?;
            let (size, mode) = rest.split_once('-').ok_or_else(|| Error::UnknownEnvironment(id.into()))?;
            let instance = match size {
                "5x5" => FvrsInstance::R5x5,
                "5x7" => FvrsInstance::R5x7,
                "7x8" => FvrsInstance::R7x8,
                _ => return Err(Error::UnknownEnvironment(id.into())),
            };
            let mode = match mode {
                "full" => SensorMode::Full,
                "noise" => SensorMode::Noisy,
                _ => return Err(Error::UnknownEnvironment(id.into())),
            };
            Ok(Box::new(make_fvrs(instance, mode, seed)))
        }
    }
}

pub(crate) fn discrete_action(action: &Action, count: usize) -> Result<usize> {
    match action {
        Action::Discrete(a) if *a < count => Ok(*a),
        _ => Err(Error::DimensionMismatch(format!("expected a discrete action below {count}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_knows_all_ids() {
        for id in ENV_IDS {
            assert_eq!(make_env(id, 0).unwrap().id(), id);
        }
        assert!(matches!(make_env("fvrs-9x9-full", 0), Err(Error::UnknownEnvironment(_))));
        assert!(make_env("cartpole", 0).is_err());
    }
}
