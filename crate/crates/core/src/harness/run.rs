use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::ExperimentConfig;
use crate::envs::{make_env, ActionSpace, Env};
use crate::error::Result;
use crate::policy::{checkpoint, FeatureMap, NaturalGaussianPolicy, Policy, SoftmaxPolicy};
use crate::rollout::{collect, compute_advantages, default_workers, Batch};
use crate::update::{Diagnostics, Updater};

/// Stream used to initialize policy weights.
pub const INIT_STREAM: u64 = u64::MAX;
/// First episode stream of the random-policy evaluation; training episodes count up from 0.
pub const RANDOM_BASELINE_STREAM: u64 = 1 << 62;

pub const PROGRESS_HEADER: &str =
    "iter,mean_return,disc_return,entropy,kl,eta,omega,linesearch_s,grad_norm,w_norm,wallclock_ms";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomBaseline {
    pub episodes: usize,
    pub mean_return: f64,
    pub disc_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub iterations: usize,
    pub final_mean_return: f64,
    pub final_disc_return: f64,
    /// Entropy of the final policy on the last batch.
    pub final_entropy: f64,
    pub random_baseline: Option<RandomBaseline>,
}

fn default_hidden(env: &dyn Env) -> Vec<usize> {
    match env.action_space() {
        ActionSpace::Discrete(_) => vec![30, 30],
        _ if env.id() == "bandit" => Vec::new(),
        ActionSpace::Continuous(_) => vec![32, 32],
    }
}

/// Initial policy: tanh features, uniform softmax or unit-precision zero-mean Gaussian.
pub fn build_policy(env: &dyn Env, cfg: &ExperimentConfig) -> Result<Policy> {
    let hidden = cfg.hidden_sizes.clone().unwrap_or_else(|| default_hidden(env));
    let mut rng = crate::rollout::episode_rng(cfg.seed, INIT_STREAM);
    let features = if hidden.is_empty() {
        FeatureMap::identity(env.observation_dim())
    } else {
        let mut sizes = vec![env.observation_dim()];
        sizes.extend(&hidden);
        FeatureMap::mlp(&sizes, false, &mut rng)?
    };
    Ok(match env.action_space() {
        ActionSpace::Discrete(n) => Policy::Softmax(SoftmaxPolicy::uniform(features, n)?),
        ActionSpace::Continuous(k) => {
            Policy::Gaussian(NaturalGaussianPolicy::initial(features, k, cfg.precision_storage)?)
        }
    })
}

/// Mean undiscounted and discounted episode return of the uniform-random policy.
pub fn random_policy_return(env: &dyn Env, samples: usize, horizon: usize, seed: u64) -> Result<RandomBaseline> {
    let features = FeatureMap::identity(env.observation_dim());
    let policy = match env.action_space() {
        ActionSpace::Discrete(n) => Policy::Softmax(SoftmaxPolicy::uniform(features, n)?),
        ActionSpace::Continuous(k) => {
            Policy::Gaussian(NaturalGaussianPolicy::initial(features, k, crate::policy::PrecisionStorage::Diagonal)?)
        }
    };
    let batch = collect(&policy, env, samples, horizon, seed, RANDOM_BASELINE_STREAM, default_workers())?;
    Ok(RandomBaseline {
        episodes: batch.episode_count(),
        mean_return: batch.mean_return(),
        disc_return: batch.mean_disc_return(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn progress_row(iter: usize, batch: &Batch, d: &Diagnostics, wallclock_ms: Option<u128>) -> String {
    format!(
        "{iter},{},{},{},{},{},{},{},{},{},{}",
        batch.mean_return(),
        batch.mean_disc_return(),
        d.entropy_before,
        d.kl,
        opt(d.eta),
        opt(d.omega),
        opt(d.linesearch_s),
        d.grad_norm,
        d.w_norm,
        wallclock_ms.map_or(String::new(), |ms| ms.to_string()),
    )
}

/// Run directory for a config: `out` if set, else `runs/<env>-<algo>-<seed>`.
pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}-{}", cfg.env, cfg.algo, cfg.seed)))
}

/// Collect, estimate advantages and update for `cfg.iterations` iterations.
///
/// Writes `config.resolved`, `progress.csv` (one row per iteration, flushed as
/// it goes), `policy_final` and `summary.json` into the run directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = run_dir(cfg);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.resolved"), cfg.resolved())?;

    let env = make_env(&cfg.env, cfg.seed)?;
    let horizon = cfg.episode_horizon.unwrap_or(env.horizon());
    let workers = default_workers();
    let mut policy = build_policy(env.as_ref(), cfg)?;
    let mut updater = Updater::new(cfg.update_config())?;

    let mut csv = BufWriter::new(File::create(dir.join("progress.csv"))?);
    writeln!(csv, "{PROGRESS_HEADER}")?;
    let start = Instant::now();
    let mut next_episode = 0u64;
    let mut last = None;
    for iter in 0..cfg.iterations {
        let mut batch =
            collect(&policy, env.as_ref(), cfg.samples_per_iteration, horizon, cfg.seed, next_episode, workers)?;
        next_episode += batch.episode_count() as u64;
        compute_advantages(&mut batch, cfg.baseline)?;
        let (new, diag) = updater.step(&policy, &batch, iter)?;
        let ms = cfg.record_wallclock.then(|| start.elapsed().as_millis());
        writeln!(csv, "{}", progress_row(iter, &batch, &diag, ms))?;
        csv.flush()?;
        if iter % 10 == 0 || iter + 1 == cfg.iterations {
            log::info!(
                "iter {iter}: return {:.4}, disc {:.4}, entropy {:.4}, kl {:.5}",
                batch.mean_return(),
                batch.mean_disc_return(),
                diag.entropy_before,
                diag.kl
            );
        }
        policy = new;
        last = Some((batch, diag));
    }
    checkpoint::save(&policy, &dir.join("policy_final"))?;

    let (batch, diag) = last.expect("at least one iteration");
    let random_baseline = if cfg.random_baseline {
        Some(random_policy_return(env.as_ref(), cfg.samples_per_iteration.max(10_000), horizon, cfg.seed)?)
    } else {
        None
    };
    let summary = RunSummary {
        dir: dir.clone(),
        iterations: cfg.iterations,
        final_mean_return: batch.mean_return(),
        final_disc_return: batch.mean_disc_return(),
        final_entropy: diag.entropy_after,
        random_baseline,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| crate::Error::Config(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(summary)
}

/// Parsed `progress.csv` column, by header name; empty cells become `None`.
pub fn read_progress_column(path: &Path, column: &str) -> Result<Vec<Option<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let idx = header
        .split(',')
        .position(|c| c == column)
        .ok_or_else(|| crate::Error::Config(format!("no column {column:?} in {}", path.display())))?;
    lines
        .map(|l| {
            let cell = l.split(',').nth(idx).unwrap_or("");
            if cell.is_empty() {
                Ok(None)
            } else {
                cell.parse::<f64>().map(Some).map_err(|_| crate::Error::Config(format!("bad cell {cell:?}")))
            }
        })
        .collect()
}
