//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. `include = path`
//! reads another file (relative to the including file) at that point; later
//! assignments override earlier ones. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::policy::PrecisionStorage;
use crate::rollout::BaselineKind;
use crate::update::{Algo, BetaMode, LineSearchConfig, UpdateConfig};

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: String,
    pub algo: Algo,
    pub iterations: usize,
    pub samples_per_iteration: usize,
    pub epsilon: f64,
    pub beta_mode: BetaMode,
    pub entropy_equality: bool,
    /// Iterations over which `beta_mode = auto` moves the entropy from `H0` to `-H0`.
    pub entropy_horizon: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Hidden widths of the tanh feature network; empty means raw observations.
    pub hidden_sizes: Option<Vec<usize>>,
    pub precision_storage: PrecisionStorage,
    pub episode_horizon: Option<usize>,
    pub baseline: BaselineKind,
    pub normalize_advantages: bool,
    pub damping: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub vpg_learning_rate: f64,
    pub trpo_entropy_bonus_coeff: f64,
    pub backtrack_ratio: f64,
    pub line_search_steps: usize,
    pub alternating_rounds: usize,
    pub record_wallclock: bool,
    /// Measure the uniform-random policy on the same environment.
    pub random_baseline: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: String::new(),
            algo: Algo::Copos,
            iterations: 600,
            samples_per_iteration: 5000,
            epsilon: 0.01,
            beta_mode: BetaMode::Fixed(0.01),
            entropy_equality: true,
            entropy_horizon: None,
            seed: 0,
            out: None,
            hidden_sizes: None,
            precision_storage: PrecisionStorage::Diagonal,
            episode_horizon: None,
            baseline: BaselineKind::StateValue,
            normalize_advantages: true,
            damping: 1e-4,
            cg_iters: 10,
            cg_tol: 1e-10,
            vpg_learning_rate: 0.01,
            trpo_entropy_bonus_coeff: 0.0,
            backtrack_ratio: 0.8,
            line_search_steps: 15,
            alternating_rounds: 2,
            record_wallclock: false,
            random_baseline: true,
        }
    }
}

fn bad(key: &str, value: &str, expected: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {expected}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, expected))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse_num(key, value, "a number")?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(key, value, "a finite number"))
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.load_file(path, 0)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse configuration text; includes resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, base_dir, 0)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn load_file(&mut self, path: &Path, depth: usize) -> Result<()> {
        if depth > MAX_INCLUDE_DEPTH {
            return Err(Error::Config(format!(
                "include nesting deeper than {MAX_INCLUDE_DEPTH} at {}",
                path.display()
            )));
        }
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        self.apply_text(&text, base, depth)
    }

    fn apply_text(&mut self, text: &str, base_dir: &Path, depth: usize) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "include" {
                self.load_file(&base_dir.join(value), depth + 1)?;
            } else {
                self.set(key, value)?;
            }
        }
        Ok(())
    }

    /// Assign one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "env" => self.env = value.to_string(),
            "algo" => self.algo = value.parse()?,
            "iterations" => self.iterations = parse_num(key, value, "an integer")?,
            "samples_per_iteration" => self.samples_per_iteration = parse_num(key, value, "an integer")?,
            "epsilon" => self.epsilon = parse_f64(key, value)?,
            "beta_mode" => self.beta_mode = value.parse()?,
            "entropy_constraint" => {
                self.entropy_equality = match value {
                    "equality" => true,
                    "inequality" => false,
                    _ => return Err(bad(key, value, "equality or inequality")),
                }
            }
            "entropy_horizon" => {
                self.entropy_horizon = match value {
                    "iterations" => None,
                    _ => Some(parse_num(key, value, "an integer or `iterations`")?),
                }
            }
            "seed" => self.seed = parse_num(key, value, "a non-negative integer")?,
            "out" => self.out = Some(PathBuf::from(value)),
            "hidden_sizes" => {
                self.hidden_sizes = match value {
                    "default" => None,
                    "none" => Some(Vec::new()),
                    _ => Some(
                        value
                            .split(',')
                            .map(|w| w.trim().parse::<usize>().ok().filter(|&w| w > 0))
                            .collect::<Option<Vec<_>>>()
                            .ok_or_else(|| bad(key, value, "comma-separated positive widths, `none` or `default`"))?,
                    ),
                }
            }
            "precision_storage" => {
                self.precision_storage = match value {
                    "diagonal" => PrecisionStorage::Diagonal,
                    "dense" => PrecisionStorage::Dense,
                    _ => return Err(bad(key, value, "diagonal or dense")),
                }
            }
            "episode_horizon" => {
                self.episode_horizon = match value {
                    "env" => None,
                    _ => Some(parse_num(key, value, "an integer or `env`")?),
                }
            }
            "baseline" => {
                self.baseline = match value {
                    "none" => BaselineKind::None,
                    "state_value" => BaselineKind::StateValue,
                    _ => return Err(bad(key, value, "none or state_value")),
                }
            }
            "normalize_advantages" => self.normalize_advantages = parse_bool(key, value)?,
            "damping" => self.damping = parse_f64(key, value)?,
            "cg_iters" => self.cg_iters = parse_num(key, value, "an integer")?,
            "cg_tol" => self.cg_tol = parse_f64(key, value)?,
            "vpg_learning_rate" => self.vpg_learning_rate = parse_f64(key, value)?,
            "trpo_entropy_bonus_coeff" => self.trpo_entropy_bonus_coeff = parse_f64(key, value)?,
            "backtrack_ratio" => self.backtrack_ratio = parse_f64(key, value)?,
            "line_search_steps" => self.line_search_steps = parse_num(key, value, "an integer")?,
            "alternating_rounds" => self.alternating_rounds = parse_num(key, value, "an integer")?,
            "record_wallclock" => self.record_wallclock = parse_bool(key, value)?,
            "random_baseline" => self.random_baseline = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.env.is_empty() {
            return Err(Error::Config("env is required".into()));
        }
        if !crate::envs::ENV_IDS.contains(&self.env.as_str()) {
            return Err(Error::UnknownEnvironment(self.env.clone()));
        }
        if self.iterations == 0 || self.samples_per_iteration == 0 {
            return Err(Error::Config("iterations and samples_per_iteration must be positive".into()));
        }
        if self.damping < 0.0 || self.cg_iters == 0 {
            return Err(Error::Config("damping must be non-negative and cg_iters positive".into()));
        }
        if self.entropy_horizon == Some(0) || self.episode_horizon == Some(0) {
            return Err(Error::Config("horizons must be positive".into()));
        }
        self.update_config().validate()
    }

    pub fn update_config(&self) -> UpdateConfig {
        let mut u = UpdateConfig {
            algo: self.algo,
            epsilon: self.epsilon,
            beta_mode: self.beta_mode,
            entropy_equality: self.entropy_equality,
            total_iterations: self.entropy_horizon.unwrap_or(self.iterations),
            vpg_learning_rate: self.vpg_learning_rate,
            trpo_entropy_bonus_coeff: self.trpo_entropy_bonus_coeff,
            line_search: LineSearchConfig { backtrack_ratio: self.backtrack_ratio, max_steps: self.line_search_steps },
            alternating_rounds: self.alternating_rounds,
            ..UpdateConfig::default()
        };
        u.natural.damping = self.damping;
        u.natural.cg_iters = self.cg_iters;
        u.natural.cg_tol = self.cg_tol;
        u.natural.normalize_advantages = self.normalize_advantages;
        u
    }

    /// Every key with its effective value; parses back to the same configuration.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("env", self.env.clone());
        kv("algo", self.algo.to_string());
        kv("iterations", self.iterations.to_string());
        kv("samples_per_iteration", self.samples_per_iteration.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("beta_mode", self.beta_mode.to_string());
        kv("entropy_constraint", if self.entropy_equality { "equality" } else { "inequality" }.into());
        kv("entropy_horizon", self.entropy_horizon.map_or("iterations".into(), |h| h.to_string()));
        kv("seed", self.seed.to_string());
        if let Some(out) = &self.out {
            kv("out", out.display().to_string());
        }
        kv(
            "hidden_sizes",
            match &self.hidden_sizes {
                None => "default".into(),
                Some(v) if v.is_empty() => "none".into(),
                Some(v) => v.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
            },
        );
        kv(
            "precision_storage",
            match self.precision_storage {
                PrecisionStorage::Diagonal => "diagonal",
                PrecisionStorage::Dense => "dense",
            }
            .into(),
        );
        kv("episode_horizon", self.episode_horizon.map_or("env".into(), |h| h.to_string()));
        kv(
            "baseline",
            match self.baseline {
                BaselineKind::None => "none",
                BaselineKind::StateValue => "state_value",
            }
            .into(),
        );
        kv("normalize_advantages", self.normalize_advantages.to_string());
        kv("damping", self.damping.to_string());
        kv("cg_iters", self.cg_iters.to_string());
        kv("cg_tol", self.cg_tol.to_string());
        kv("vpg_learning_rate", self.vpg_learning_rate.to_string());
        kv("trpo_entropy_bonus_coeff", self.trpo_entropy_bonus_coeff.to_string());
        kv("backtrack_ratio", self.backtrack_ratio.to_string());
        kv("line_search_steps", self.line_search_steps.to_string());
        kv("alternating_rounds", self.alternating_rounds.to_string());
        kv("record_wallclock", self.record_wallclock.to_string());
        kv("random_baseline", self.random_baseline.to_string());
        s
    }
}
