use serde::{Deserialize, Serialize};

use super::train::{train, SeedRun};
use super::{ExperimentConfig, HarnessError};

/// Final-evaluation metrics of one (beta, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub seed: u64,
    pub geomean: f64,
    pub mean: f64,
    pub min: f64,
    pub gini: f64,
}

/// Across-seed summary of GeoMean for one beta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub beta: f64,
    pub seeds: usize,
    pub geomean_mean: f64,
    pub geomean_min: f64,
    pub geomean_max: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub runs: Vec<(f64, Vec<SeedRun>)>,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

/// Trains the configured method once per beta value.
pub fn sweep_beta(cfg: &ExperimentConfig, betas: &[f64]) -> Result<SweepOutput, HarnessError> {
    if betas.is_empty() {
        return Err(HarnessError::Config("beta sweep needs at least one value".into()));
    }
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &beta in betas {
        let mut c = cfg.clone();
        c.beta = beta;
        c.validate()?;
        let seeds = train(&c)?;
        let finals: Vec<SweepRow> = seeds
            .iter()
            .filter_map(|s| {
                s.records.last().map(|r| SweepRow {
                    beta,
                    seed: s.seed,
                    geomean: r.report.geomean,
                    mean: r.report.mean,
                    min: r.report.min,
                    gini: r.report.gini,
                })
            })
            .collect();
        if !finals.is_empty() {
            let g: Vec<f64> = finals.iter().map(|r| r.geomean).collect();
            summary.push(SweepSummary {
                beta,
                seeds: g.len(),
                geomean_mean: g.iter().sum::<f64>() / g.len() as f64,
                geomean_min: g.iter().copied().fold(f64::INFINITY, f64::min),
                geomean_max: g.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
        rows.extend(finals);
        runs.push((beta, seeds));
    }
    Ok(SweepOutput { runs, rows, summary })
}

pub fn write_sweep_csv<W: std::io::Write>(w: W, summary: &[SweepSummary]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    if summary.is_empty() {
        out.write_record(["beta", "seeds", "geomean_mean", "geomean_min", "geomean_max"])?;
    }
    for s in summary {
        out.serialize(s)?;
    }
    out.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Method;
    use crate::harness::train::train_seed;
    use crate::harness::EnvKind;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::for_env(EnvKind::Coins);
        c.method = Method::FCGrad;
        c.seeds = vec![1];
        c.num_envs = 1;
        c.rollout_length = 20;
        c.coins.episode_length = 20;
        c.total_updates = 1;
        c.minibatches = 1;
        c.eval_episodes = 1;
        c.hidden = 4;
        c
    }

    #[test]
    fn single_beta_reproduces_train() {
        let c = tiny();
        let out = sweep_beta(&c, &[c.beta]).unwrap();
        let direct = train_seed(&c, 1).unwrap();
        assert_eq!(out.runs[0].1[0].records, direct.records);
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].geomean, direct.records[0].report.geomean);
    }

    #[test]
    fn five_betas_five_rows() {
        let out = sweep_beta(&tiny(), &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        assert_eq!(out.summary.len(), 5);
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &out.summary).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
    }

    #[test]
    fn rejects_empty_and_invalid() {
        assert!(sweep_beta(&tiny(), &[]).is_err());
        assert!(sweep_beta(&tiny(), &[1.5]).is_err());
    }
}
