//! Trajectory sampling, returns-to-go and advantage estimation.
//!
//! Episode `i` of a collection draws all of its randomness from a ChaCha8
//! stream seeded with the master seed and stream number `i`, and episodes are
//! appended in index order. The batch is therefore the same for any number of
//! worker threads.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::policy::{Action, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    None,
    StateValue,
}

/// One episode's observations, actions and rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Discounted return-to-go of each sample.
    pub returns: Vec<f64>,
    pub episode: Vec<usize>,
    pub timestep: Vec<usize>,
    pub gamma: f64,
    pub horizon: usize,
    /// Undiscounted return of each episode.
    pub episode_returns: Vec<f64>,
    /// Discounted return from the first step of each episode.
    pub episode_disc_returns: Vec<f64>,
    advantages: Option<Vec<f64>>,
    baseline_kind: BaselineKind,
}

/// `G_t = r_t + gamma G_{t+1}` within each episode (episodes are contiguous runs of equal ids).
pub fn returns_to_go(rewards: &[f64], episode: &[usize], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut next = 0.0;
    for i in (0..rewards.len()).rev() {
        let last_of_episode = i + 1 == rewards.len() || episode[i + 1] != episode[i];
        let tail = if last_of_episode { 0.0 } else { next };
        out[i] = rewards[i] + gamma * tail;
        next = out[i];
    }
    out
}

impl Batch {
    pub fn from_episodes(episodes: Vec<EpisodeRecord>, gamma: f64, horizon: usize) -> Result<Self> {
        let mut b = Batch {
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            returns: Vec::new(),
            episode: Vec::new(),
            timestep: Vec::new(),
            gamma,
            horizon,
            episode_returns: Vec::new(),
            episode_disc_returns: Vec::new(),
            advantages: None,
            baseline_kind: BaselineKind::None,
        };
        for (id, ep) in episodes.into_iter().enumerate() {
            if ep.states.len() != ep.actions.len() || ep.states.len() != ep.rewards.len() {
                return Err(Error::DimensionMismatch("episode columns differ in length".into()));
            }
            if ep.states.is_empty() {
                continue;
            }
            b.episode_returns.push(ep.rewards.iter().sum());
            let n = ep.states.len();
            b.timestep.extend(0..n);
            b.episode.extend(std::iter::repeat_n(id, n));
            b.states.extend(ep.states);
            b.actions.extend(ep.actions);
            b.rewards.extend(ep.rewards);
        }
        if b.states.is_empty() {
            return Err(Error::EmptyBatch);
        }
        b.returns = returns_to_go(&b.rewards, &b.episode, gamma);
        b.episode_disc_returns = (0..b.len()).filter(|&i| b.timestep[i] == 0).map(|i| b.returns[i]).collect();
        Ok(b)
    }

    /// One single-step episode per sample with the given advantages as rewards.
    /// Useful for feeding synthetic advantages to the update code.
    pub fn from_samples(states: Vec<Vec<f64>>, actions: Vec<Action>, advantages: Vec<f64>) -> Result<Self> {
        let episodes = states
            .into_iter()
            .zip(actions)
            .zip(&advantages)
            .map(|((s, a), &r)| EpisodeRecord { states: vec![s], actions: vec![a], rewards: vec![r] })
            .collect();
        let mut b = Self::from_episodes(episodes, 1.0, 1)?;
        b.set_advantages(advantages, BaselineKind::None)?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn episode_count(&self) -> usize {
        self.episode_returns.len()
    }

    pub fn mean_return(&self) -> f64 {
        mean(&self.episode_returns)
    }

    pub fn mean_disc_return(&self) -> f64 {
        mean(&self.episode_disc_returns)
    }

    pub fn advantages(&self) -> Option<&[f64]> {
        self.advantages.as_deref()
    }

    pub fn baseline_kind(&self) -> BaselineKind {
        self.baseline_kind
    }

    pub fn set_advantages(&mut self, advantages: Vec<f64>, kind: BaselineKind) -> Result<()> {
        if advantages.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} advantages for {} samples",
                advantages.len(),
                self.len()
            )));
        }
        self.advantages = Some(advantages);
        self.baseline_kind = kind;
        Ok(())
    }

    /// Write one row per transition: `episode,timestep,reward,return,advantage,action,obs_0..`.
    /// Continuous actions are written as `;`-separated components.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let obs_dim = self.states.first().map_or(0, Vec::len);
        let mut header = String::from("episode,timestep,reward,return,advantage,action");
        for j in 0..obs_dim {
            header.push_str(&format!(",obs_{j}"));
        }
        writeln!(f, "{header}")?;
        for i in 0..self.len() {
            let adv = self.advantages.as_ref().map_or(String::new(), |a| a[i].to_string());
            let action = match &self.actions[i] {
                Action::Discrete(a) => a.to_string(),
                Action::Continuous(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"),
            };
            write!(
                f,
                "{},{},{},{},{adv},{action}",
                self.episode[i], self.timestep[i], self.rewards[i], self.returns[i]
            )?;
            for x in &self.states[i] {
                write!(f, ",{x}")?;
            }
            writeln!(f)?;
        }
        f.flush()?;
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// RNG for episode `index` under `master_seed`.
pub fn episode_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

pub fn run_episode(policy: &Policy, env: &dyn Env, horizon: usize, rng: &mut ChaCha8Rng) -> Result<EpisodeRecord> {
    let mut ep = env.reset(rng);
    let mut rec = EpisodeRecord { states: Vec::new(), actions: Vec::new(), rewards: Vec::new() };
    let mut obs = ep.observation();
    for _ in 0..horizon {
        let action = policy.sample(&obs, rng)?;
        let step = ep.step(&action, rng)?;
        rec.states.push(std::mem::replace(&mut obs, step.observation));
        rec.actions.push(action);
        rec.rewards.push(step.reward);
        if step.done {
            break;
        }
    }
    Ok(rec)
}

/// Worker count from `COPOS_THREADS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var("COPOS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Sample whole episodes until at least `n_samples` transitions are collected.
///
/// `first_episode` offsets the stream numbers, so successive iterations of a
/// run can draw fresh episodes from one master seed.
pub fn collect(
    policy: &Policy,
    env: &dyn Env,
    n_samples: usize,
    horizon: usize,
    master_seed: u64,
    first_episode: u64,
    workers: usize,
) -> Result<Batch> {
    if n_samples == 0 || horizon == 0 {
        return Err(Error::Config("n_samples and horizon must be positive".into()));
    }
    let workers = workers.max(1);
    let mut episodes: Vec<EpisodeRecord> = Vec::new();
    let mut total = 0usize;
    let mut next = first_episode;
    while total < n_samples {
        // enough episodes to finish in one round if every episode runs to the horizon
        let round = (n_samples - total).div_ceil(horizon).max(workers) as u64;
        let results = run_round(policy, env, horizon, master_seed, next, round, workers)?;
        next += round;
        for ep in results {
            if total >= n_samples {
                break;
            }
            total += ep.rewards.len();
            episodes.push(ep);
        }
    }
    Batch::from_episodes(episodes, env.gamma(), horizon)
}

fn run_round(
    policy: &Policy,
    env: &dyn Env,
    horizon: usize,
    seed: u64,
    start: u64,
    count: u64,
    workers: usize,
) -> Result<Vec<EpisodeRecord>> {
    let run = |i: u64| run_episode(policy, env, horizon, &mut episode_rng(seed, i));
    if workers == 1 || count == 1 {
        return (start..start + count).map(run).collect();
    }
    let chunk = count.div_ceil(workers as u64);
    let parts: Vec<Result<Vec<EpisodeRecord>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers as u64)
            .map(|w| {
                let lo = start + w * chunk;
                let hi = (lo + chunk).min(start + count);
                scope.spawn(move || (lo..hi).map(run).collect::<Result<Vec<_>>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(count as usize);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Baseline regressors `[obs, obs^2, t / horizon, 1]`.
pub fn baseline_features(state: &[f64], timestep: usize, horizon: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * state.len() + 2);
    x.extend_from_slice(state);
    x.extend(state.iter().map(|v| v * v));
    x.push(timestep as f64 / horizon.max(1) as f64);
    x.push(1.0);
    x
}

/// Least-squares fit of `returns` on the baseline features. Returns `None` when
/// no ridge level yields a finite, well-posed solve.
pub fn fit_baseline(batch: &Batch) -> Option<Vec<f64>> {
    let rows: Vec<Vec<f64>> =
        (0..batch.len()).map(|i| baseline_features(&batch.states[i], batch.timestep[i], batch.horizon)).collect();
    let d = rows.first()?.len();
    let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let xtx = x.tr_mul(&x);
    let xty = x.tr_mul(&DVector::from_column_slice(&batch.returns));
    let scale = xtx.trace() / d as f64;
    let mut ridge = 1e-10 * scale + 1e-14;
    for _ in 0..5 {
        let m = &xtx + DMatrix::identity(d, d) * ridge;
        if let Some(ch) = m.cholesky() {
            let c = ch.solve(&xty);
            if c.iter().all(|v| v.is_finite()) {
                return Some((&x * c).iter().copied().collect());
            }
        }
        ridge *= 10.0;
    }
    None
}

/// Fill the advantage column: `A = G - V(s)`, or `A = G` without a baseline.
pub fn compute_advantages(batch: &mut Batch, kind: BaselineKind) -> Result<()> {
    let adv = match kind {
        BaselineKind::None => batch.returns.clone(),
        BaselineKind::StateValue => match fit_baseline(batch) {
            Some(v) => batch.returns.iter().zip(v).map(|(g, b)| g - b).collect(),
            None => {
                log::warn!("baseline regression failed; using the mean return as baseline");
                let m = mean(&batch.returns);
                batch.returns.iter().map(|g| g - m).collect()
            }
        },
    };
    batch.set_advantages(adv, kind)
}
