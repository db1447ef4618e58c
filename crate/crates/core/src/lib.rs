//! Conflict-aware gradient adjustment for mixed-motive multi-agent learning.
//!
//! - [`gradcore`]: conflict detection, normal-plane projection and the
//!   FCGrad / Weighted / PCGrad / AgA combiners.
//! - [`testbed`]: analytic quadratic objectives and checks of the ascent
//!   guarantees.
//! - [`envs`]: Unfair Coins, Cleanup and Harvest gridworlds.
//! - [`agent`]: dual-head policy network, GAE, PPO gradients, inequity
//!   aversion, and the per-agent update.
//! - [`metrics`]: alpha-fairness, Gini, Jain.
//! - [`harness`]: configuration, training and evaluation loops, result files.

pub mod agent;
pub mod envs;
pub mod gradcore;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod testbed;

pub use gradcore::{Branch, CombineInput, CombineResult, GradError, ParamVector};
pub use metrics::FairnessReport;
