//! Field Vision RockSample.
//!
//! An `n x n` grid with `k` rocks. The agent starts in the middle of the west
//! column, moves N/S/E/W or samples, and leaves the grid by moving east from
//! the last column. Every step it receives one reading per rock: exact in
//! `Full` mode, otherwise correct with probability `0.5 (1 + 2^{-d/d0})` at
//! Euclidean distance `d`. Readings are encoded as `+1` (good) / `-1` (bad);
//! history slots that have not been filled yet are `0`.
//!
//! Observation: the last `history_length` reading vectors (oldest first),
//! then a one-hot row and a one-hot column.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{discrete_action, ActionSpace, Env, Episode, Step};
use crate::error::Result;
use crate::policy::Action;

pub const NORTH: usize = 0;
pub const SOUTH: usize = 1;
pub const EAST: usize = 2;
pub const WEST: usize = 3;
pub const SAMPLE: usize = 4;
pub const ACTION_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FvrsInstance {
    /// 5x5 grid, 5 rocks.
    R5x5,
    /// 5x5 grid, 7 rocks.
    R5x7,
    /// 7x7 grid, 8 rocks.
    R7x8,
}

impl FvrsInstance {
    pub fn grid_size(self) -> usize {
        match self {
            FvrsInstance::R5x5 | FvrsInstance::R5x7 => 5,
            FvrsInstance::R7x8 => 7,
        }
    }

    pub fn rock_count(self) -> usize {
        match self {
            FvrsInstance::R5x5 => 5,
            FvrsInstance::R5x7 => 7,
            FvrsInstance::R7x8 => 8,
        }
    }

    pub fn horizon(self) -> usize {
        match self {
            FvrsInstance::R5x5 => 25,
            FvrsInstance::R5x7 => 35,
            FvrsInstance::R7x8 => 50,
        }
    }

    fn label(self) -> &'static str {
        match self {
            FvrsInstance::R5x5 => "5x5",
            FvrsInstance::R5x7 => "5x7",
            FvrsInstance::R7x8 => "7x8",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorMode {
    Full,
    Noisy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvrsEnv {
    pub instance: FvrsInstance,
    pub mode: SensorMode,
    pub grid_size: usize,
    pub rocks: Vec<(usize, usize)>,
    pub history_length: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Distance at which the sensor accuracy drops to 0.75.
    pub half_efficiency_distance: f64,
    pub reward_good: f64,
    pub reward_bad: f64,
    pub reward_exit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvrsState {
    pub row: usize,
    pub col: usize,
    pub good: Vec<bool>,
    /// Most recent reading vectors, oldest first.
    pub history: VecDeque<Vec<f64>>,
    pub t: usize,
    pub done: bool,
}

/// Build an instance with a rock layout fixed by `seed`.
pub fn make_fvrs(instance: FvrsInstance, mode: SensorMode, seed: u64) -> FvrsEnv {
    let n = instance.grid_size();
    let start = (n / 2) * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // choose distinct cells, never the start cell
    let cells: Vec<usize> = sample(&mut rng, n * n - 1, instance.rock_count())
        .into_iter()
        .map(|c| if c >= start { c + 1 } else { c })
        .collect();
    let rocks = cells.iter().map(|c| (c / n, c % n)).collect();
    FvrsEnv {
        instance,
        mode,
        grid_size: n,
        rocks,
        history_length: match mode {
            SensorMode::Full => 1,
            SensorMode::Noisy => 15,
        },
        horizon: instance.horizon(),
        gamma: 0.95,
        half_efficiency_distance: 2.0,
        reward_good: 1.0,
        reward_bad: -1.0,
        reward_exit: 1.0,
    }
}

impl FvrsEnv {
    pub fn rock_count(&self) -> usize {
        self.rocks.len()
    }

    /// Probability that a reading at Euclidean distance `d` is correct.
    pub fn sensor_accuracy(&self, d: f64) -> f64 {
        match self.mode {
            SensorMode::Full => 1.0,
            SensorMode::Noisy => 0.5 * (1.0 + 2f64.powf(-d / self.half_efficiency_distance)),
        }
    }

    fn read_rocks(&self, row: usize, col: usize, good: &[bool], rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.rocks
            .iter()
            .zip(good)
            .map(|(&(r, c), &g)| {
                let correct = match self.mode {
                    SensorMode::Full => true,
                    SensorMode::Noisy => {
                        let d = ((r as f64 - row as f64).powi(2) + (c as f64 - col as f64).powi(2)).sqrt();
                        rng.random::<f64>() < self.sensor_accuracy(d)
                    }
                };
                if g == correct {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect()
    }

    pub fn initial_state(&self, rng: &mut ChaCha8Rng) -> FvrsState {
        let good: Vec<bool> = (0..self.rock_count()).map(|_| rng.random::<bool>()).collect();
        let (row, col) = (self.grid_size / 2, 0);
        let mut history = VecDeque::with_capacity(self.history_length);
        history.push_back(self.read_rocks(row, col, &good, rng));
        FvrsState { row, col, good, history, t: 0, done: false }
    }

    pub fn observe(&self, state: &FvrsState) -> Vec<f64> {
        let k = self.rock_count();
        let n = self.grid_size;
        let mut obs = vec![0.0; self.observation_dim()];
        // right-align history so the newest reading is always in the last slot
        let offset = self.history_length - state.history.len();
        for (i, reading) in state.history.iter().enumerate() {
            obs[(offset + i) * k..(offset + i + 1) * k].copy_from_slice(reading);
        }
        let base = k * self.history_length;
        obs[base + state.row] = 1.0;
        obs[base + n + state.col] = 1.0;
        obs
    }

    /// Advance one step. The result depends only on `(state, action)` and the draws taken from `rng`.
    pub fn step(&self, state: &FvrsState, action: usize, rng: &mut ChaCha8Rng) -> (FvrsState, Vec<f64>, f64, bool) {
        let mut next = state.clone();
        let last = self.grid_size - 1;
        let mut reward = 0.0;
        let mut exited = false;
        match action {
            NORTH => next.row = next.row.saturating_sub(1),
            SOUTH => next.row = (next.row + 1).min(last),
            EAST if next.col == last => {
                exited = true;
                reward = self.reward_exit;
            }
            EAST => next.col += 1,
            WEST => next.col = next.col.saturating_sub(1),
            _ => match self.rocks.iter().position(|&p| p == (next.row, next.col)) {
                Some(i) if next.good[i] => {
                    reward = self.reward_good;
                    next.good[i] = false;
                }
                _ => reward = self.reward_bad,
            },
        }
        next.t += 1;
        next.done = exited || next.t >= self.horizon;
        let reading = self.read_rocks(next.row, next.col, &next.good, rng);
        if next.history.len() == self.history_length {
            next.history.pop_front();
        }
        next.history.push_back(reading);
        let obs = self.observe(&next);
        let done = next.done;
        (next, obs, reward, done)
    }
}

struct FvrsEpisode<'a> {
    env: &'a FvrsEnv,
    state: FvrsState,
}

impl Episode for FvrsEpisode<'_> {
    fn observation(&self) -> Vec<f64> {
        self.env.observe(&self.state)
    }

    fn step(&mut self, action: &Action, rng: &mut ChaCha8Rng) -> Result<Step> {
        let a = discrete_action(action, ACTION_COUNT)?;
        let (next, observation, reward, done) = self.env.step(&self.state, a, rng);
        self.state = next;
        Ok(Step { observation, reward, done })
    }
}

impl Env for FvrsEnv {
    fn id(&self) -> String {
        let mode = match self.mode {
            SensorMode::Full => "full",
            SensorMode::Noisy => "noise",
        };
        format!("fvrs-{}-{mode}", self.instance.label())
    }

    fn observation_dim(&self) -> usize {
        self.rock_count() * self.history_length + 2 * self.grid_size
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(ACTION_COUNT)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn reward_bound(&self) -> f64 {
        self.reward_good.abs().max(self.reward_bad.abs()).max(self.reward_exit.abs())
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> Box<dyn Episode + '_> {
        Box::new(FvrsEpisode { env: self, state: self.initial_state(rng) })
    }
}
