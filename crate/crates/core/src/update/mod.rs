//! Policy update engines and entropy schedules.

mod copos;
mod gradient;

use std::fmt;
use std::str::FromStr;

pub use copos::{apply_multipliers, copos_update, copos_update_with_solution};
pub use gradient::{surrogate, tnpg_update, trpo_update, vpg_update};

use crate::compat::NaturalGradientConfig;
use crate::dual::solver::SolverConfig;
use crate::dual::ConstraintKind;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rollout::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Copos,
    Tnpg,
    Trpo,
    Vpg,
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copos" => Ok(Algo::Copos),
            "tnpg" => Ok(Algo::Tnpg),
            "trpo" => Ok(Algo::Trpo),
            "vpg" => Ok(Algo::Vpg),
            _ => Err(Error::Config(format!("unknown algo {s:?} (expected copos, tnpg, trpo or vpg)"))),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Copos => "copos",
            Algo::Tnpg => "tnpg",
            Algo::Trpo => "trpo",
            Algo::Vpg => "vpg",
        })
    }
}

/// How the per-iteration entropy budget `beta_H` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    Fixed(f64),
    /// Linear schedule from `H0` down to `-H0` over the schedule horizon.
    Auto,
    /// KL constraint only.
    None,
}

impl FromStr for BetaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(BetaMode::Auto),
            "none" => Ok(BetaMode::None),
            _ => s
                .parse::<f64>()
                .ok()
                .filter(|b| b.is_finite())
                .map(BetaMode::Fixed)
                .ok_or_else(|| Error::Config(format!("beta_mode must be auto, none or a number, got {s:?}"))),
        }
    }
}

impl fmt::Display for BetaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaMode::Fixed(b) => write!(f, "{b}"),
            BetaMode::Auto => f.write_str("auto"),
            BetaMode::None => f.write_str("none"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub backtrack_ratio: f64,
    pub max_steps: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self { backtrack_ratio: 0.8, max_steps: 15 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateConfig {
    pub algo: Algo,
    pub epsilon: f64,
    pub beta_mode: BetaMode,
    /// Whether a configured entropy budget is an equality or an inequality.
    pub entropy_equality: bool,
    pub total_iterations: usize,
    pub vpg_learning_rate: f64,
    pub trpo_entropy_bonus_coeff: f64,
    pub line_search: LineSearchConfig,
    pub alternating_rounds: usize,
    pub bisection_steps: usize,
    /// Discrete line search accepts a realized KL up to this multiple of epsilon.
    pub discrete_kl_factor: f64,
    /// Bypass the dual solver with constant `(eta, omega)`.
    pub fixed_multipliers: Option<(f64, f64)>,
    pub natural: NaturalGradientConfig,
    pub solver: SolverConfig,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Copos,
            epsilon: 0.01,
            beta_mode: BetaMode::Fixed(0.01),
            entropy_equality: true,
            total_iterations: 600,
            vpg_learning_rate: 0.01,
            trpo_entropy_bonus_coeff: 0.0,
            line_search: LineSearchConfig::default(),
            alternating_rounds: 2,
            bisection_steps: 30,
            discrete_kl_factor: 1.5,
            fixed_multipliers: None,
            natural: NaturalGradientConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.total_iterations == 0 {
            return Err(Error::Config("total_iterations must be at least 1".into()));
        }
        let r = self.line_search.backtrack_ratio;
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Config(format!("backtrack_ratio must lie in (0, 1), got {r}")));
        }
        if let Some((eta, omega)) = self.fixed_multipliers {
            if !(eta > 0.0 && eta + omega > 0.0) {
                return Err(Error::Config(format!(
                    "fixed multipliers need eta > 0 and eta + omega > 0, got ({eta}, {omega})"
                )));
            }
        }
        Ok(())
    }

    /// Constraint kind passed to the dual for a given budget.
    pub fn constraint(&self) -> ConstraintKind {
        match (self.beta_mode, self.entropy_equality) {
            (BetaMode::None, _) => ConstraintKind::KlOnly,
            (_, true) => ConstraintKind::EqualityEntropy,
            (_, false) => ConstraintKind::Inequality,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    ConstantBeta,
    AutoLinear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropySchedule {
    pub h0: f64,
    pub horizon: usize,
    pub kind: ScheduleKind,
    /// Budget used by `ConstantBeta`.
    pub beta: f64,
}

impl EntropySchedule {
    pub fn auto(h0: f64, horizon: usize) -> Self {
        Self { h0, horizon, kind: ScheduleKind::AutoLinear, beta: 0.0 }
    }

    pub fn constant(beta: f64) -> Self {
        Self { h0: 0.0, horizon: 1, kind: ScheduleKind::ConstantBeta, beta }
    }

    /// `H0 (1 - 2 i / horizon)`.
    pub fn target(&self, iteration: usize) -> f64 {
        self.h0 * (1.0 - 2.0 * iteration as f64 / self.horizon as f64)
    }
}

/// Entropy loss permitted at `iteration` given the current mean entropy.
pub fn entropy_budget(schedule: &EntropySchedule, iteration: usize, h_current: f64) -> f64 {
    match schedule.kind {
        ScheduleKind::ConstantBeta => schedule.beta,
        ScheduleKind::AutoLinear => h_current - schedule.target(iteration + 1),
    }
}

/// Per-update record; fields that do not apply to an algorithm are `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Realized mean `KL(new || old)` over the batch states.
    pub kl: f64,
    pub entropy_before: f64,
    pub entropy_after: f64,
    pub beta_h: Option<f64>,
    pub eta: Option<f64>,
    pub omega: Option<f64>,
    pub dual_value: Option<f64>,
    pub dual_evaluations: usize,
    pub linesearch_s: Option<f64>,
    pub grad_norm: f64,
    pub w_norm: f64,
    pub cg_residual: f64,
    pub skipped: bool,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn entropy_change(&self) -> f64 {
        self.entropy_after - self.entropy_before
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

/// Runs the configured algorithm and owns the entropy schedule across iterations.
#[derive(Debug, Clone)]
pub struct Updater {
    cfg: UpdateConfig,
    schedule: Option<EntropySchedule>,
}

impl Updater {
    pub fn new(cfg: UpdateConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = match cfg.beta_mode {
            BetaMode::Fixed(b) => Some(EntropySchedule::constant(b)),
            _ => None,
        };
        Ok(Self { cfg, schedule })
    }

    pub fn config(&self) -> &UpdateConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> Option<&EntropySchedule> {
        self.schedule.as_ref()
    }

    /// Entropy budget for `iteration`; the auto schedule fixes `H0` on first use.
    pub fn beta_for(&mut self, iteration: usize, h_current: f64) -> Option<f64> {
        if self.cfg.beta_mode == BetaMode::Auto && self.schedule.is_none() {
            self.schedule = Some(EntropySchedule::auto(h_current, self.cfg.total_iterations));
        }
        self.schedule.as_ref().map(|s| entropy_budget(s, iteration, h_current))
    }

    pub fn step(&mut self, policy: &Policy, batch: &Batch, iteration: usize) -> Result<(Policy, Diagnostics)> {
        match self.cfg.algo {
            Algo::Copos => {
                let h = policy.entropy(&batch.states)?;
                let beta = self.beta_for(iteration, h);
                copos_update(policy, batch, &self.cfg, beta)
            }
            Algo::Tnpg => tnpg_update(policy, batch, &self.cfg),
            Algo::Trpo => trpo_update(policy, batch, &self.cfg),
            Algo::Vpg => vpg_update(policy, batch, &self.cfg),
        }
    }
}
