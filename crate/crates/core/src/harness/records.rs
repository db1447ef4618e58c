use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EnvKind, HarnessError};
use crate::agent::Method;
use crate::gradcore::Branch;
use crate::metrics::FairnessReport;

/// Results CSV columns, in order.
pub const RESULT_COLUMNS: [&str; 18] = [
    "run_id",
    "env",
    "method",
    "beta",
    "seed",
    "update",
    "env_steps",
    "agent_id",
    "episodic_return",
    "mean",
    "geomean",
    "min",
    "gini",
    "jain",
    "conflict_rate",
    "branch_blend",
    "branch_proj_ind",
    "branch_proj_col",
];

/// FCGrad branch tallies over a window of updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCounts {
    pub blend: u64,
    pub proj_ind: u64,
    pub proj_col: u64,
    /// Degenerate pass-through and PCGrad's two-sided projection.
    pub other: u64,
}

impl BranchCounts {
    pub fn record(&mut self, b: Branch) {
        match b {
            Branch::NonConflictBlend => self.blend += 1,
            Branch::ProjectIndOntoColNormal => self.proj_ind += 1,
            Branch::ProjectColOntoIndNormal => self.proj_col += 1,
            Branch::ProjectBoth | Branch::PassThrough => self.other += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.blend + self.proj_ind + self.proj_col + self.other
    }
}

/// One evaluation point of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub env: EnvKind,
    pub method: Method,
    pub beta: f64,
    pub seed: u64,
    pub update: usize,
    pub env_steps: u64,
    pub report: FairnessReport,
    /// Per agent: fraction of updates since the last evaluation whose two
    /// gradients conflicted.
    pub conflict_rate: Vec<f64>,
    pub branches: Vec<BranchCounts>,
}

/// One CSV line: a record expanded per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRow {
    pub run_id: String,
    pub env: EnvKind,
    pub method: Method,
    pub beta: f64,
    pub seed: u64,
    pub update: usize,
    pub env_steps: u64,
    pub agent_id: usize,
    pub episodic_return: f64,
    pub mean: f64,
    pub geomean: f64,
    pub min: f64,
    pub gini: f64,
    pub jain: f64,
    pub conflict_rate: f64,
    pub branch_blend: u64,
    pub branch_proj_ind: u64,
    pub branch_proj_col: u64,
}

impl RunRecord {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.report
            .per_agent_returns
            .iter()
            .enumerate()
            .map(|(i, &r)| ResultRow {
                run_id: self.run_id.clone(),
                env: self.env,
                method: self.method,
                beta: self.beta,
                seed: self.seed,
                update: self.update,
                env_steps: self.env_steps,
                agent_id: i,
                episodic_return: r,
                mean: self.report.mean,
                geomean: self.report.geomean,
                min: self.report.min,
                gini: self.report.gini,
                jain: self.report.jain,
                conflict_rate: self.conflict_rate[i],
                branch_blend: self.branches[i].blend,
                branch_proj_ind: self.branches[i].proj_ind,
                branch_proj_col: self.branches[i].proj_col,
            })
            .collect()
    }
}

/// Writes the header and one row per (record, agent). An empty record list
/// still produces the header.
pub fn write_results<W: Write>(w: W, records: &[RunRecord]) -> Result<(), HarnessError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(RESULT_COLUMNS)?;
    for r in records {
        for row in r.rows() {
            out.serialize(row)?;
        }
    }
    out.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

/// Parses a results CSV, checking the header against [`RESULT_COLUMNS`].
pub fn read_results<R: Read>(r: R) -> Result<Vec<ResultRow>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    for col in RESULT_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(HarnessError::Parse {
                line: 1,
                msg: format!("missing column {col:?}"),
            });
        }
    }
    if let Some(extra) = headers.iter().find(|h| !RESULT_COLUMNS.contains(h)) {
        return Err(HarnessError::Parse {
            line: 1,
            msg: format!("unknown column {extra:?}"),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0) as usize;
        let row: ResultRow = rec.deserialize(Some(&headers)).map_err(|e| HarnessError::Parse {
            line,
            msg: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}
