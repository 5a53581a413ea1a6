//! Compatible policy search.
//!
//! Natural-gradient trust-region policy updates with an explicit entropy
//! constraint. For the log-linear part of a policy (the output layer of a
//! softmax, or the natural parameters of a Gaussian) the update
//! `theta = (eta theta_old + w) / (eta + omega)` solves the KL- and
//! entropy-constrained problem exactly once the multipliers `eta`, `omega`
//! are found from the Lagrangian dual; the hidden-layer parameters follow the
//! natural gradient `w_beta / eta`.
//!
//! Modules:
//! - [`policy`]: Gaussian (natural parameters) and softmax policies over MLP features.
//! - [`compat`]: compatible features, policy gradient, Fisher-vector products, CG.
//! - [`dual`]: the Gaussian and discrete duals and their solver.
//! - [`update`]: COPOS, TNPG, TRPO and vanilla policy-gradient updates.
//! - [`envs`]: quadratic bandit, chain MDP, Field Vision RockSample.
//! - [`rollout`]: batch collection and advantages.
//! - [`analysis`]: closed-form iterates of the bandit study.
//! - [`harness`]: configuration, experiment loop, oracle suites.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod compat;
pub mod dual;
pub mod envs;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod policy;
pub mod rollout;
pub mod update;

pub use error::{Error, Result};
