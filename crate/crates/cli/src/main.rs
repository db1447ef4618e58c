mod plot;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fcgrad::agent::Method;
use fcgrad::harness::{
    evaluate, load_checkpoint, run_verify, sweep_beta, train, write_sweep_csv,
    write_train_outputs, EnvKind, ExperimentConfig, HarnessError, VerifyConfig,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "fcgrad", version, about = "Conflict-aware gradient experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the analytic checks on random quadratic objective pairs.
    Verify(VerifyArgs),
    /// Train agents and write results.csv, config.toml and checkpoints.
    Train(Common),
    /// Evaluate a checkpoint with frozen policies.
    Eval(EvalArgs),
    /// Train once per beta and tabulate final GeoMean.
    SweepBeta(SweepArgs),
    /// Render metric-vs-steps SVG plots from results CSVs.
    Plot(PlotArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// KEY=VALUE, repeatable; dotted keys reach nested tables.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    /// File keys, then `--override`, then the dedicated flags.
    fn all_overrides(&self) -> Vec<String> {
        let mut o = self.overrides.clone();
        if let Some(e) = self.env {
            o.push(format!("env=\"{e}\""));
        }
        if let Some(m) = self.method {
            o.push(format!("method=\"{m}\""));
        }
        if let Some(b) = self.beta {
            o.push(format!("beta={b:?}"));
        }
        if let Some(s) = &self.seeds {
            let list: Vec<String> = s.iter().map(u64::to_string).collect();
            o.push(format!("seeds=[{}]", list.join(",")));
        }
        o
    }

    fn experiment(&self) -> Result<ExperimentConfig, HarnessError> {
        ExperimentConfig::load(self.config.as_deref(), &self.all_overrides())
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 32)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Argmax actions instead of sampling.
    #[arg(long)]
    greedy: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated beta values.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 0.75, 1.0])]
    betas: Vec<f64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Results CSV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "plots")]
    out: PathBuf,
}

/// An error paired with the exit status it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            err: e.into(),
        }
    }
}

fn io_failure(err: anyhow::Error) -> Failure {
    Failure { code: 3, err }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.cmd {
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::SweepBeta(a) => cmd_sweep(a),
        Cmd::Plot(a) => plot::cmd_plot(&a.inputs, &a.out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn create_file(path: &Path) -> Result<fs::File, Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(io_failure)?;
    }
    fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(io_failure)
}

fn cmd_verify(a: VerifyArgs) -> Result<u8, Failure> {
    let mut o = a.overrides.clone();
    if let Some(b) = a.beta {
        o.push(format!("beta={b:?}"));
    }
    if let Some(s) = &a.seeds {
        let list: Vec<String> = s.iter().map(u64::to_string).collect();
        o.push(format!("seeds=[{}]", list.join(",")));
    }
    let cfg = VerifyConfig::load(a.config.as_deref(), &o)?;
    let report = run_verify(&cfg)?;
    let path = a.out.join("verify.csv");
    report.write_csv(create_file(&path)?)?;
    for (check, total, failed) in report.summary() {
        println!("{check:<32} {:>5} / {total} passed", total - failed);
    }
    for r in report.failures().take(20) {
        println!(
            "FAILED {} [{}] instance {} seed {} at step {:?} (margin {:.3e})",
            r.check, r.combiner, r.instance, r.seed, r.first_violation, r.worst_margin
        );
    }
    println!("report: {}", path.display());
    Ok(if report.passed() { 0 } else { 1 })
}

fn cmd_train(a: Common) -> Result<u8, Failure> {
    let cfg = a.experiment()?;
    let runs = train(&cfg)?;
    write_train_outputs(&a.out, &cfg, &runs)?;
    for r in &runs {
        if let Some(last) = r.records.last() {
            println!(
                "{}: mean {:.3} geomean {:.3} min {:.3} gini {:.3}",
                last.run_id, last.report.mean, last.report.geomean, last.report.min, last.report.gini
            );
        }
    }
    println!("results: {}", a.out.join("results.csv").display());
    Ok(0)
}

#[derive(Serialize)]
struct EvalRow {
    agent_id: usize,
    episodic_return: f64,
    mean: f64,
    geomean: f64,
    min: f64,
    gini: f64,
    jain: f64,
    green_coins: u32,
    red_coins: u32,
    apples: u32,
    waste_cleaned: u32,
}

/// The config beside a checkpoint written by `train`, if any.
fn sibling_config(ckpt: &Path) -> Option<PathBuf> {
    let p = ckpt.parent()?.parent()?.join("config.toml");
    p.exists().then_some(p)
}

fn cmd_eval(a: EvalArgs) -> Result<u8, Failure> {
    let mut common = a.common.clone();
    if common.config.is_none() {
        common.config = sibling_config(&a.checkpoint);
    }
    let cfg = common.experiment()?;
    let agents = load_checkpoint(&a.checkpoint)?;
    let nets: Vec<_> = agents.into_iter().map(|s| s.net).collect();
    let ev = evaluate(&cfg, &nets, a.episodes, a.seed, a.greedy)?;
    let path = common.out.join("eval.csv");
    let mut w = csv::Writer::from_writer(create_file(&path)?);
    for (i, (r, c)) in ev.returns.iter().zip(&ev.counters).enumerate() {
        w.serialize(EvalRow {
            agent_id: i,
            episodic_return: *r,
            mean: ev.report.mean,
            geomean: ev.report.geomean,
            min: ev.report.min,
            gini: ev.report.gini,
            jain: ev.report.jain,
            green_coins: c.green_coins,
            red_coins: c.red_coins,
            apples: c.apples,
            waste_cleaned: c.waste_cleaned,
        })
        .map_err(HarnessError::from)?;
    }
    w.flush().context("writing eval.csv").map_err(io_failure)?;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{} episodes: mean {:.4} geomean {:.4} min {:.4} gini {:.4} jain {:.4}",
        ev.episodes, ev.report.mean, ev.report.geomean, ev.report.min, ev.report.gini, ev.report.jain
    );
    for (i, (r, c)) in ev.returns.iter().zip(&ev.counters).enumerate() {
        let _ = writeln!(out, "  agent {i}: return {r:.4} events {c:?}");
    }
    Ok(0)
}

fn cmd_sweep(a: SweepArgs) -> Result<u8, Failure> {
    let cfg = a.common.experiment()?;
    let out = sweep_beta(&cfg, &a.betas)?;
    for (beta, runs) in &out.runs {
        let mut c = cfg.clone();
        c.beta = *beta;
        write_train_outputs(&a.common.out.join(format!("beta-{beta}")), &c, runs)?;
    }
    write_sweep_csv(create_file(&a.common.out.join("sweep.csv"))?, &out.summary)?;
    let mut w = csv::Writer::from_writer(create_file(&a.common.out.join("sweep_seeds.csv"))?);
    for r in &out.rows {
        w.serialize(r).map_err(HarnessError::from)?;
    }
    w.flush().context("writing sweep_seeds.csv").map_err(io_failure)?;
    println!("{:>6}  {:>10}  {:>10}  {:>10}", "beta", "geomean", "min", "max");
    for s in &out.summary {
        println!(
            "{:>6}  {:>10.4}  {:>10.4}  {:>10.4}",
            s.beta, s.geomean_mean, s.geomean_min, s.geomean_max
        );
    }
    Ok(0)
}
