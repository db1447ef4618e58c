//! Welfare and fairness aggregates over per-agent returns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower clamp applied to each return before taking the geometric mean.
pub const GEOMEAN_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no returns given")]
    Empty,
    #[error("alpha-fairness with alpha = {alpha} needs positive returns, got {value}")]
    Domain { alpha: f64, value: f64 },
    #[error("alpha must be nonnegative, got {0}")]
    InvalidAlpha(f64),
}

/// `sum r^(1-alpha) / (1-alpha)`, or `sum ln r` at `alpha = 1`.
pub fn alpha_fairness(returns: &[f64], alpha: f64) -> Result<f64, MetricsError> {
    if returns.is_empty() {
        return Err(MetricsError::Empty);
    }
    if !(alpha >= 0.0) {
        return Err(MetricsError::InvalidAlpha(alpha));
    }
    if alpha == 0.0 {
        return Ok(returns.iter().sum());
    }
    if let Some(&value) = returns.iter().find(|r| **r <= 0.0) {
        return Err(MetricsError::Domain { alpha, value });
    }
    if alpha == 1.0 {
        return Ok(returns.iter().map(|r| r.ln()).sum());
    }
    let e = 1.0 - alpha;
    Ok(returns.iter().map(|r| r.powf(e) / e).sum())
}

/// Mean absolute pairwise difference over twice the mean. All-zero input
/// yields 0.
pub fn gini(returns: &[f64]) -> f64 {
    let n = returns.len() as f64;
    let total: f64 = returns.iter().sum();
    if returns.is_empty() || total == 0.0 {
        return 0.0;
    }
    let pairwise: f64 = returns
        .iter()
        .map(|a| returns.iter().map(|b| (a - b).abs()).sum::<f64>())
        .sum();
    pairwise / (2.0 * n * total)
}

/// `(sum r)^2 / (N sum r^2)`. All-zero input yields 1.
pub fn jain(returns: &[f64]) -> f64 {
    let n = returns.len() as f64;
    let sq: f64 = returns.iter().map(|r| r * r).sum();
    if returns.is_empty() || sq == 0.0 {
        return 1.0;
    }
    let s: f64 = returns.iter().sum();
    s * s / (n * sq)
}

/// Geometric mean with each return clamped below at [`GEOMEAN_FLOOR`].
pub fn geomean(returns: &[f64]) -> f64 {
    let n = returns.len() as f64;
    (returns.iter().map(|r| r.max(GEOMEAN_FLOOR).ln()).sum::<f64>() / n).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub per_agent_returns: Vec<f64>,
    pub mean: f64,
    pub geomean: f64,
    pub min: f64,
    pub gini: f64,
    pub jain: f64,
    /// `sum ln max(r, floor)`, the alpha = 1 utility under the same clamp.
    pub log_welfare: f64,
    /// Set when any return is negative; Gini and Jain assume nonnegative input.
    pub has_negative: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub alpha_utilities: BTreeMap<String, f64>,
}

/// Options for [`report_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ReportOptions {
    /// When set, Gini and Jain are computed on `r - shift` with `shift` the
    /// smallest possible per-episode return, so the inputs are nonnegative.
    pub nonnegative_shift: Option<f64>,
}

pub fn report(returns: &[f64]) -> Result<FairnessReport, MetricsError> {
    report_with(returns, ReportOptions::default())
}

pub fn report_with(returns: &[f64], opts: ReportOptions) -> Result<FairnessReport, MetricsError> {
    if returns.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = returns.len() as f64;
    let shifted: Vec<f64>;
    let for_inequality = match opts.nonnegative_shift {
        Some(floor) => {
            shifted = returns.iter().map(|r| r - floor).collect();
            &shifted[..]
        }
        None => returns,
    };
    Ok(FairnessReport {
        per_agent_returns: returns.to_vec(),
        mean: returns.iter().sum::<f64>() / n,
        geomean: geomean(returns),
        min: returns.iter().copied().fold(f64::INFINITY, f64::min),
        gini: gini(for_inequality),
        jain: jain(for_inequality),
        log_welfare: returns.iter().map(|r| r.max(GEOMEAN_FLOOR).ln()).sum(),
        has_negative: returns.iter().any(|r| *r < 0.0),
        alpha_utilities: BTreeMap::new(),
    })
}

impl FairnessReport {
    /// Adds `U_alpha` for each alpha where it is defined on these returns.
    pub fn with_alpha_utilities(mut self, alphas: &[f64]) -> Self {
        for &a in alphas {
            if let Ok(u) = alpha_fairness(&self.per_agent_returns, a) {
                self.alpha_utilities.insert(format!("{a}"), u);
            }
        }
        self
    }
}
