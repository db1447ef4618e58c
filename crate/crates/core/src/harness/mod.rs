//! Experiment orchestration: configuration, the analytic verification
//! suite, training and evaluation loops, and result files.

mod config;
mod records;
mod sweep;
mod train;
mod verify;

use std::fs;
use std::path::Path;

use thiserror::Error;

pub use config::{apply_override, EnvKind, ExperimentConfig};
pub use records::{read_results, write_results, BranchCounts, ResultRow, RunRecord, RESULT_COLUMNS};
pub use sweep::{sweep_beta, write_sweep_csv, SweepOutput, SweepRow, SweepSummary};
pub use train::{
    collect_rollouts, env_shape, evaluate, init_agents, make_env, train, train_seed, EvalOutcome,
    SeedRun,
};
pub use verify::{run_verify, VerifyConfig, VerifyReport, VerifyRow};

use crate::agent::{read_checkpoint, write_checkpoint, AgentError, AgentState};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("incompatible: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Testbed(#[from] crate::testbed::TestbedError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit status: 2 for configuration problems, 3 for I/O and
    /// malformed files, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Incompatible(_) | HarnessError::Env(_) => 2,
            HarnessError::Io(_) | HarnessError::Parse { .. } | HarnessError::Csv(_) => 3,
            HarnessError::Agent(AgentError::Io(_) | AgentError::Checkpoint(_)) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| io_err(path, e))
}

/// Writes `config.toml`, `results.csv` and one checkpoint per seed under
/// `out_dir/checkpoints/`.
pub fn write_train_outputs(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    runs: &[SeedRun],
) -> Result<(), HarnessError> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    write_config(&out_dir.join("config.toml"), cfg)?;
    let records: Vec<RunRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    write_results(create(&out_dir.join("results.csv"))?, &records)?;
    for r in runs {
        save_checkpoint(
            &out_dir.join("checkpoints").join(format!("{}.ckpt", cfg.run_id(r.seed))),
            &r.agents,
        )?;
    }
    Ok(())
}

pub fn write_config(path: &Path, cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    use std::io::Write;
    let mut f = create(path)?;
    f.write_all(cfg.to_toml().as_bytes()).map_err(|e| io_err(path, e))
}

pub fn save_checkpoint(path: &Path, agents: &[AgentState]) -> Result<(), HarnessError> {
    let mut f = create(path)?;
    write_checkpoint(&mut f, agents)?;
    use std::io::Write;
    f.flush().map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<AgentState>, HarnessError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(read_checkpoint(&mut std::io::BufReader::new(f))?)
}

pub fn read_results_file(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_results(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Method;

    #[test]
    fn outputs_written_and_reloadable() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::for_env(EnvKind::Coins);
        cfg.method = Method::Col;
        cfg.seeds = vec![0];
        cfg.num_envs = 1;
        cfg.rollout_length = 10;
        cfg.coins.episode_length = 10;
        cfg.total_updates = 1;
        cfg.minibatches = 1;
        cfg.eval_episodes = 1;
        cfg.hidden = 4;
        let runs = train(&cfg).unwrap();
        write_train_outputs(dir.path(), &cfg, &runs).unwrap();
        let rows = read_results_file(&dir.path().join("results.csv")).unwrap();
        assert_eq!(rows.len(), 2);
        let back = ExperimentConfig::load(Some(&dir.path().join("config.toml")), &[]).unwrap();
        assert_eq!(back, cfg);
        let ck = load_checkpoint(&dir.path().join("checkpoints").join(format!("{}.ckpt", cfg.run_id(0)))).unwrap();
        assert_eq!(ck, runs[0].agents);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 2);
        assert_eq!(HarnessError::Io("x".into()).exit_code(), 3);
        assert_eq!(HarnessError::Parse { line: 1, msg: "x".into() }.exit_code(), 3);
    }
}
