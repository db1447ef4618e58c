use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::{Method, PpoParams, UpdateConfig, ValueSource};
use crate::envs::{CleanupConfig, CoinsConfig, HarvestConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Coins,
    Cleanup,
    Harvest,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Coins => "coins",
            EnvKind::Cleanup => "cleanup",
            EnvKind::Harvest => "harvest",
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "coins" => Ok(EnvKind::Coins),
            "cleanup" => Ok(EnvKind::Cleanup),
            "harvest" => Ok(EnvKind::Harvest),
            _ => Err(format!("unknown env {s:?}")),
        }
    }
}

/// Every knob of a training run. Keys mirror the TOML file layout; the
/// per-game tables only apply to their game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub method: Method,
    pub beta: f64,
    pub seeds: Vec<u64>,
    pub num_envs: usize,
    pub rollout_length: usize,
    pub total_updates: usize,
    pub ppo_epochs: usize,
    pub minibatches: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub learning_rate: f64,
    /// Linear decay of the step size to zero over `total_updates`.
    pub anneal_lr: bool,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub grad_clip: f64,
    pub hidden: usize,
    pub normalize_advantages: bool,
    pub value_source: ValueSource,
    pub aga_lambda: f64,
    pub hvp_eps: f64,
    pub ia_alpha: f64,
    pub ia_beta: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Argmax actions during evaluation instead of sampling.
    pub greedy_eval: bool,
    /// Compute Gini and Jain on returns shifted by the lowest possible
    /// episodic return, so they stay in range when a game allows negative
    /// rewards. Off by default: raw values are reported.
    pub shift_negative_returns: bool,
    pub coins: CoinsConfig,
    pub cleanup: CleanupConfig,
    pub harvest: HarvestConfig,
}

impl ExperimentConfig {
    /// Desk-scale defaults for `env`.
    pub fn for_env(env: EnvKind) -> Self {
        let (beta, lr, entropy, value, updates) = match env {
            EnvKind::Coins => (0.5, 1e-4, 0.1, 0.1, 300),
            EnvKind::Cleanup => (0.7, 5e-4, 0.01, 0.5, 500),
            EnvKind::Harvest => (0.8, 5e-4, 0.01, 0.5, 500),
        };
        ExperimentConfig {
            env,
            method: Method::FCGrad,
            beta,
            seeds: vec![0, 1, 2, 3],
            num_envs: 16,
            rollout_length: 200,
            total_updates: updates,
            ppo_epochs: 2,
            minibatches: 8,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            learning_rate: lr,
            anneal_lr: true,
            entropy_coef: entropy,
            value_coef: value,
            grad_clip: 0.5,
            hidden: 64,
            normalize_advantages: true,
            value_source: ValueSource::Empirical,
            aga_lambda: 1.0,
            hvp_eps: 1e-4,
            ia_alpha: 5.0,
            ia_beta: 0.05,
            eval_every: 25,
            eval_episodes: 32,
            greedy_eval: false,
            shift_negative_returns: false,
            coins: CoinsConfig::default(),
            cleanup: CleanupConfig::default(),
            harvest: HarvestConfig::default(),
        }
    }

    /// Parses TOML text, applies `key=value` overrides, fills unspecified
    /// keys from the defaults of the chosen game, and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let env = match table.get("env") {
            None => EnvKind::Coins,
            Some(toml::Value::String(s)) => s.parse().map_err(HarnessError::Config)?,
            Some(v) => return Err(HarnessError::Config(format!("env must be a string, got {v}"))),
        };
        let defaults = toml::Table::try_from(Self::for_env(env))
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let merged = merge(defaults, table);
        let cfg: ExperimentConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, HarnessError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        let unit = |name: &str, x: f64| -> Result<(), HarnessError> {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(HarnessError::Config(format!("{name} = {x} not in [0,1]")))
            }
        };
        unit("beta", self.beta)?;
        unit("gamma", self.gamma)?;
        unit("gae_lambda", self.gae_lambda)?;
        if self.seeds.is_empty() {
            return err("seeds must be nonempty".into());
        }
        for (name, v) in [
            ("num_envs", self.num_envs),
            ("rollout_length", self.rollout_length),
            ("ppo_epochs", self.ppo_epochs),
            ("minibatches", self.minibatches),
            ("hidden", self.hidden),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if self.minibatches > self.num_envs * self.rollout_length {
            return err(format!(
                "minibatches = {} exceeds batch size {}",
                self.minibatches,
                self.num_envs * self.rollout_length
            ));
        }
        for (name, v) in [
            ("clip", self.clip),
            ("learning_rate", self.learning_rate),
            ("aga_lambda", self.aga_lambda),
            ("hvp_eps", self.hvp_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{name} = {v} must be positive"));
            }
        }
        for (name, v) in [
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("grad_clip", self.grad_clip),
            ("ia_alpha", self.ia_alpha),
            ("ia_beta", self.ia_beta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} = {v} must be nonnegative"));
            }
        }
        let env_check = match self.env {
            EnvKind::Coins => self.coins.validate().map(|_| ()),
            EnvKind::Cleanup => self.cleanup.validate().map(|_| ()),
            EnvKind::Harvest => self.harvest.validate().map(|_| ()),
        };
        env_check.map_err(|e| HarnessError::Config(format!("{} config: {e}", self.env)))
    }

    pub fn update_config(&self) -> UpdateConfig {
        UpdateConfig {
            ppo: PpoParams {
                clip: self.clip,
                normalize_advantages: self.normalize_advantages,
            },
            beta: self.beta,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            grad_clip: self.grad_clip,
            aga_lambda: self.aga_lambda,
            hvp_eps: self.hvp_eps,
            value_source: self.value_source,
        }
    }

    /// Step size for update `u` (0-based).
    pub fn lr_at(&self, u: usize) -> f64 {
        if self.anneal_lr && self.total_updates > 0 {
            self.learning_rate * (1.0 - u as f64 / self.total_updates as f64)
        } else {
            self.learning_rate
        }
    }

    pub fn run_id(&self, seed: u64) -> String {
        format!("{}-{}-b{}-s{}", self.env, self.method, self.beta, seed)
    }
}

/// Recursively overlays `top` onto `base`.
fn merge(mut base: toml::Table, top: toml::Table) -> toml::Table {
    for (k, v) in top {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => {
                base.insert(k, toml::Value::Table(merge(b, t)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

/// `a.b.c=value`. The value is parsed as a TOML value, falling back to a
/// bare string.
pub fn apply_override(table: &mut toml::Table, line: &str) -> Result<(), HarnessError> {
    let (key, raw) = line
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override {line:?} is not KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(HarnessError::Config(format!("override {line:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap();
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("override key {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
