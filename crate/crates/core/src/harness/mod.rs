//! Experiment configuration, the training loop, toy presets and oracle suites.

mod config;
mod oracles;
mod run;

use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use oracles::{brute_force_toy, copos_toy_update, normal_tv, run_oracles, OracleCheck, OracleReport, OracleSuite};
pub use run::{
    build_policy, random_policy_return, read_progress_column, run_dir, run_experiment, RandomBaseline, RunSummary,
    INIT_STREAM, PROGRESS_HEADER, RANDOM_BASELINE_STREAM,
};

use crate::analysis::{trust_region_panel, constant_rate_panel, write_panel, PanelConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyPreset {
    /// Constant multipliers, no trust region.
    ConstantRate,
    /// Dual-solved multipliers under a KL bound.
    TrustRegion,
}

impl std::str::FromStr for ToyPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1-top" => Ok(ToyPreset::ConstantRate),
            "fig1-bottom" => Ok(ToyPreset::TrustRegion),
            _ => Err(Error::Config(format!("unknown toy preset {s:?} (expected fig1-top or fig1-bottom)"))),
        }
    }
}

/// Writes `<preset>.csv` (columns `method,iter,distance,reward,entropy,kl`) into `out`.
pub fn run_toy(preset: ToyPreset, out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let cfg = PanelConfig::default();
    let (series, name) = match preset {
        ToyPreset::ConstantRate => (constant_rate_panel(&cfg)?, "fig1-top.csv"),
        ToyPreset::TrustRegion => (trust_region_panel(&cfg)?, "fig1-bottom.csv"),
    };
    let path = out.join(name);
    write_panel(&series, &path)?;
    Ok(path)
}
