//! Per-agent learner: dual-head policy network, GAE, PPO gradients for the
//! individual and collective objectives, inequity-aversion shaping, and the
//! per-method update.

mod checkpoint;
mod gae;
mod net;
mod optim;
mod ppo;
mod shaping;
mod update;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradcore::GradError;

pub use checkpoint::{read_checkpoint, write_checkpoint, AgentState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gae::{compute_gae, discounted_returns};
pub use net::{sample_action, Forward, NetShape, PolicyNetwork, PolicyOutput};
pub use optim::{Adam, OptimizerState};
pub use ppo::{
    entropy_gradient, policy_gradients, ppo_policy_gradient, ppo_surrogate, value_gradient, PolicyGradients,
    value_loss, PpoParams,
};
pub use shaping::inequity_aversion_shape;
pub use update::{update_agent, UpdateConfig, UpdateDiagnostics, ValueSource};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("advantages missing; run compute_advantages first")]
    MissingAdvantages,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Policy-update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Col,
    Ind,
    #[serde(rename = "ia")]
    IA,
    Weighted,
    #[serde(rename = "pcgrad")]
    PCGrad,
    #[serde(rename = "aga")]
    AgA,
    #[serde(rename = "fcgrad")]
    FCGrad,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Col,
        Method::Ind,
        Method::IA,
        Method::Weighted,
        Method::PCGrad,
        Method::AgA,
        Method::FCGrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Col => "col",
            Method::Ind => "ind",
            Method::IA => "ia",
            Method::Weighted => "weighted",
            Method::PCGrad => "pcgrad",
            Method::AgA => "aga",
            Method::FCGrad => "fcgrad",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvantageStream {
    Individual,
    Collective,
}

/// Quantities filled in by [`TrajectoryBatch::compute_advantages`].
#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub adv_ind: Vec<f64>,
    pub adv_col: Vec<f64>,
    /// GAE targets for the value heads.
    pub ret_ind: Vec<f64>,
    pub ret_col: Vec<f64>,
    /// Discounted reward-to-go, used as the empirical objective values.
    pub emp_ind: Vec<f64>,
    pub emp_col: Vec<f64>,
}

/// One agent's experience, one row per (env, step).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub reward_ind: Vec<f64>,
    pub reward_col: Vec<f64>,
    pub value_ind: Vec<f64>,
    pub value_col: Vec<f64>,
    /// `true` on the last step of an episode.
    pub done: Vec<bool>,
    pub advantages: Option<Advantages>,
}

impl TrajectoryBatch {
    pub fn new(obs_dim: usize) -> Self {
        TrajectoryBatch {
            obs: Array2::zeros((0, obs_dim)),
            actions: Vec::new(),
            log_probs: Vec::new(),
            reward_ind: Vec::new(),
            reward_col: Vec::new(),
            value_ind: Vec::new(),
            value_col: Vec::new(),
            done: Vec::new(),
            advantages: None,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs.ncols()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        obs: &[f64],
        action: usize,
        log_prob: f64,
        reward_ind: f64,
        reward_col: f64,
        value_ind: f64,
        value_col: f64,
        done: bool,
    ) -> Result<(), AgentError> {
        self.obs
            .push_row(ndarray::ArrayView1::from(obs))
            .map_err(|e| AgentError::Shape(e.to_string()))?;
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.reward_ind.push(reward_ind);
        self.reward_col.push(reward_col);
        self.value_ind.push(value_ind);
        self.value_col.push(value_col);
        self.done.push(done);
        self.advantages = None;
        Ok(())
    }

    /// Runs GAE on both reward streams. `bootstrap_*` are the value estimates
    /// after the final row and only matter when it is not an episode end.
    pub fn compute_advantages(
        &mut self,
        gamma: f64,
        lambda: f64,
        bootstrap_ind: f64,
        bootstrap_col: f64,
    ) -> Result<(), AgentError> {
        let (adv_ind, ret_ind) = compute_gae(
            &self.reward_ind,
            &self.value_ind,
            bootstrap_ind,
            gamma,
            lambda,
            &self.done,
        )?;
        let (adv_col, ret_col) = compute_gae(
            &self.reward_col,
            &self.value_col,
            bootstrap_col,
            gamma,
            lambda,
            &self.done,
        )?;
        let emp_ind = discounted_returns(&self.reward_ind, gamma, &self.done, bootstrap_ind)?;
        let emp_col = discounted_returns(&self.reward_col, gamma, &self.done, bootstrap_col)?;
        self.advantages = Some(Advantages {
            adv_ind,
            adv_col,
            ret_ind,
            ret_col,
            emp_ind,
            emp_col,
        });
        Ok(())
    }

    pub fn advantages(&self) -> Result<&Advantages, AgentError> {
        self.advantages.as_ref().ok_or(AgentError::MissingAdvantages)
    }

    /// Concatenates batches in order. Advantages are kept only if every part
    /// has them.
    pub fn concat(parts: &[TrajectoryBatch]) -> Result<TrajectoryBatch, AgentError> {
        if parts.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let views: Vec<_> = parts.iter().map(|p| p.obs.view()).collect();
        let obs = ndarray::concatenate(Axis(0), &views).map_err(|e| AgentError::Shape(e.to_string()))?;
        let cat = |f: fn(&TrajectoryBatch) -> &Vec<f64>| parts.iter().flat_map(|p| f(p).iter().copied()).collect::<Vec<f64>>();
        let advantages = if parts.iter().all(|p| p.advantages.is_some()) {
            let cat_a = |f: fn(&Advantages) -> &Vec<f64>| {
                parts
                    .iter()
                    .flat_map(|p| f(p.advantages.as_ref().unwrap()).iter().copied())
                    .collect::<Vec<f64>>()
            };
            Some(Advantages {
                adv_ind: cat_a(|a| &a.adv_ind),
                adv_col: cat_a(|a| &a.adv_col),
                ret_ind: cat_a(|a| &a.ret_ind),
                ret_col: cat_a(|a| &a.ret_col),
                emp_ind: cat_a(|a| &a.emp_ind),
                emp_col: cat_a(|a| &a.emp_col),
            })
        } else {
            None
        };
        Ok(TrajectoryBatch {
            obs,
            actions: parts.iter().flat_map(|p| p.actions.iter().copied()).collect(),
            log_probs: cat(|p| &p.log_probs),
            reward_ind: cat(|p| &p.reward_ind),
            reward_col: cat(|p| &p.reward_col),
            value_ind: cat(|p| &p.value_ind),
            value_col: cat(|p| &p.value_col),
            done: parts.iter().flat_map(|p| p.done.iter().copied()).collect(),
            advantages,
        })
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> TrajectoryBatch {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        TrajectoryBatch {
            obs: self.obs.select(Axis(0), indices),
            actions: indices.iter().map(|&i| self.actions[i]).collect(),
            log_probs: pick(&self.log_probs),
            reward_ind: pick(&self.reward_ind),
            reward_col: pick(&self.reward_col),
            value_ind: pick(&self.value_ind),
            value_col: pick(&self.value_col),
            done: indices.iter().map(|&i| self.done[i]).collect(),
            advantages: self.advantages.as_ref().map(|a| Advantages {
                adv_ind: pick(&a.adv_ind),
                adv_col: pick(&a.adv_col),
                ret_ind: pick(&a.ret_ind),
                ret_col: pick(&a.ret_col),
                emp_ind: pick(&a.emp_ind),
                emp_col: pick(&a.emp_col),
            }),
        }
    }

    /// Batch means of the empirical discounted individual and collective
    /// returns.
    pub fn empirical_values(&self) -> Result<(f64, f64), AgentError> {
        let a = self.advantages()?;
        if a.emp_ind.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        Ok((mean(&a.emp_ind), mean(&a.emp_col)))
    }

    /// Batch means of the critic estimates.
    pub fn critic_values(&self) -> Result<(f64, f64), AgentError> {
        if self.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        Ok((mean(&self.value_ind), mean(&self.value_col)))
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(n: usize) -> TrajectoryBatch {
        let mut b = TrajectoryBatch::new(2);
        for t in 0..n {
            let r = t as f64;
            b.push(&[r, -r], t % 3, -1.0, r, r / 2.0, 0.1, 0.2, t + 1 == n).unwrap();
        }
        b
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("FCGrad".parse::<Method>().unwrap(), Method::FCGrad);
        assert!("nope".parse::<Method>().is_err());
    }

    #[test]
    fn advantages_absent_until_computed() {
        let mut b = batch(3);
        assert!(matches!(b.advantages(), Err(AgentError::MissingAdvantages)));
        b.compute_advantages(0.99, 0.95, 0.0, 0.0).unwrap();
        assert!(b.advantages().is_ok());
        b.push(&[0.0, 0.0], 0, 0.0, 0.0, 0.0, 0.0, 0.0, true).unwrap();
        assert!(b.advantages.is_none());
    }

    #[test]
    fn push_rejects_wrong_width() {
        let mut b = TrajectoryBatch::new(2);
        assert!(b.push(&[1.0], 0, 0.0, 0.0, 0.0, 0.0, 0.0, false).is_err());
    }

    #[test]
    fn concat_and_select() {
        let mut a = batch(3);
        let mut b = batch(2);
        a.compute_advantages(0.9, 0.9, 0.0, 0.0).unwrap();
        b.compute_advantages(0.9, 0.9, 0.0, 0.0).unwrap();
        let c = TrajectoryBatch::concat(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c.select(&[0, 1, 2]), a);
        assert_eq!(c.select(&[3, 4]), b);
        assert!(TrajectoryBatch::concat(&[]).is_err());
    }

    #[test]
    fn empirical_values_are_means_of_reward_to_go() {
        let mut b = TrajectoryBatch::new(1);
        for (r, d) in [(1.0, false), (1.0, true)] {
            b.push(&[0.0], 0, 0.0, r, 2.0 * r, 0.0, 0.0, d).unwrap();
        }
        b.compute_advantages(0.5, 1.0, 0.0, 0.0).unwrap();
        let (vi, vc) = b.empirical_values().unwrap();
        assert!((vi - (1.5 + 1.0) / 2.0).abs() < 1e-15);
        assert!((vc - (3.0 + 2.0) / 2.0).abs() < 1e-15);
    }
}
