//! Slippery chain: move left or right along `n` states, reward at the right end.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{discrete_action, ActionSpace, Env, Episode, Step};
use crate::error::Result;
use crate::policy::Action;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainMdp {
    pub n_states: usize,
    /// Probability that the chosen direction is reversed.
    pub slip: f64,
    pub goal_reward: f64,
    pub gamma: f64,
    pub horizon: usize,
}

impl Default for ChainMdp {
    fn default() -> Self {
        Self { n_states: 5, slip: 0.1, goal_reward: 1.0, gamma: 0.95, horizon: 20 }
    }
}

impl ChainMdp {
    /// `P(next | state, action)` as a dense row.
    pub fn transition_row(&self, state: usize, action: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_states];
        let left = state.saturating_sub(1);
        let right = (state + 1).min(self.n_states - 1);
        let (intended, slipped) = if action == 0 { (left, right) } else { (right, left) };
        row[intended] += 1.0 - self.slip;
        row[slipped] += self.slip;
        row
    }

    fn one_hot(&self, state: usize) -> Vec<f64> {
        let mut o = vec![0.0; self.n_states];
        o[state] = 1.0;
        o
    }
}

struct ChainEpisode<'a> {
    env: &'a ChainMdp,
    state: usize,
}

impl Episode for ChainEpisode<'_> {
    fn observation(&self) -> Vec<f64> {
        self.env.one_hot(self.state)
    }

    fn step(&mut self, action: &Action, rng: &mut ChaCha8Rng) -> Result<Step> {
        let a = discrete_action(action, 2)?;
        let slipped = rng.random::<f64>() < self.env.slip;
        let go_right = (a == 1) != slipped;
        self.state = if go_right { (self.state + 1).min(self.env.n_states - 1) } else { self.state.saturating_sub(1) };
        let done = self.state == self.env.n_states - 1;
        let reward = if done { self.env.goal_reward } else { 0.0 };
        Ok(Step { observation: self.observation(), reward, done })
    }
}

impl Env for ChainMdp {
    fn id(&self) -> String {
        "chain".into()
    }

    fn observation_dim(&self) -> usize {
        self.n_states
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(2)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn reward_bound(&self) -> f64 {
        self.goal_reward.abs()
    }

    fn reset(&self, _rng: &mut ChaCha8Rng) -> Box<dyn Episode + '_> {
        Box::new(ChainEpisode { env: self, state: 0 })
    }
}
