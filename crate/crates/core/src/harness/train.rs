use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::records::{BranchCounts, RunRecord};
use super::{EnvKind, ExperimentConfig, HarnessError};
use crate::agent::{
    inequity_aversion_shape, sample_action, update_agent, AgentState, Method, NetShape,
    OptimizerState, PolicyNetwork, TrajectoryBatch,
};
use crate::envs::{
    CleanupEnv, CoinsEnv, Environment, EventCounters, HarvestEnv,
};
use crate::metrics::{self, FairnessReport, ReportOptions};
use crate::rng::{derive_path, derive_seed, stream};

const TAG_INIT: u64 = 1;
const TAG_ENV: u64 = 2;
const TAG_ACT: u64 = 3;
const TAG_MINIBATCH: u64 = 4;
const TAG_EVAL: u64 = 5;

pub fn make_env(cfg: &ExperimentConfig, seed: u64) -> Result<Box<dyn Environment>, HarnessError> {
    Ok(match cfg.env {
        EnvKind::Coins => Box::new(CoinsEnv::new(cfg.coins.clone(), seed)?.0),
        EnvKind::Cleanup => Box::new(CleanupEnv::new(cfg.cleanup.clone(), seed)?.0),
        EnvKind::Harvest => Box::new(HarvestEnv::new(cfg.harvest.clone(), seed)?.0),
    })
}

/// Network shape and agent count implied by the config's game.
pub fn env_shape(cfg: &ExperimentConfig) -> Result<(usize, NetShape), HarnessError> {
    let env = make_env(cfg, 0)?;
    Ok((
        env.n_agents(),
        NetShape {
            obs_dim: env.obs_dim(),
            hidden: cfg.hidden,
            n_actions: env.n_actions(),
        },
    ))
}

pub fn init_agents(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<AgentState>, HarnessError> {
    let (n, shape) = env_shape(cfg)?;
    Ok((0..n)
        .map(|i| {
            let net = PolicyNetwork::init(shape, &mut stream(seed, &[TAG_INIT, i as u64]));
            let opt = OptimizerState::new(shape.policy_len(), shape.value_len());
            AgentState { net, opt }
        })
        .collect())
}

/// One environment's contribution to an update: a batch per agent with
/// advantages computed, plus the returns of episodes that finished.
pub struct EnvRollout {
    pub batches: Vec<TrajectoryBatch>,
    pub episode_returns: Vec<Vec<f64>>,
}

fn rollout_env(
    cfg: &ExperimentConfig,
    nets: &[PolicyNetwork],
    env_seed: u64,
    act_seed: u64,
) -> Result<EnvRollout, HarnessError> {
    let mut env = make_env(cfg, env_seed)?;
    let n = env.n_agents();
    let mut rng = <crate::rng::Rng as rand::SeedableRng>::seed_from_u64(act_seed);
    let mut obs = env.reset(env_seed);
    let mut batches: Vec<TrajectoryBatch> = (0..n).map(|_| TrajectoryBatch::new(env.obs_dim())).collect();
    let mut episode_returns = Vec::new();
    let mut running = vec![0.0; n];
    let mut episode = 0u64;
    for _ in 0..cfg.rollout_length {
        let mut actions = Vec::with_capacity(n);
        let mut outs = Vec::with_capacity(n);
        for i in 0..n {
            let out = nets[i].forward(obs[i].as_slice())?;
            actions.push(sample_action(&out.probs, &mut rng));
            outs.push(out);
        }
        let step = env.step(&actions)?;
        let col = step.rewards.iter().sum::<f64>() / n as f64;
        let ind = if cfg.method == Method::IA {
            inequity_aversion_shape(&step.rewards, cfg.ia_alpha, cfg.ia_beta)?
        } else {
            step.rewards.clone()
        };
        for i in 0..n {
            let a = actions[i];
            batches[i].push(
                obs[i].as_slice(),
                a,
                outs[i].probs[a].ln(),
                ind[i],
                col,
                outs[i].v_ind,
                outs[i].v_col,
                step.done,
            )?;
            running[i] += step.rewards[i];
        }
        if step.done {
            episode_returns.push(std::mem::replace(&mut running, vec![0.0; n]));
            episode += 1;
            obs = env.reset(derive_seed(env_seed, episode));
        } else {
            obs = step.observations;
        }
    }
    let last_done = batches[0].done.last().copied().unwrap_or(true);
    for (i, b) in batches.iter_mut().enumerate() {
        let (bi, bc) = if last_done {
            (0.0, 0.0)
        } else {
            let out = nets[i].forward(obs[i].as_slice())?;
            (out.v_ind, out.v_col)
        };
        b.compute_advantages(cfg.gamma, cfg.gae_lambda, bi, bc)?;
    }
    Ok(EnvRollout {
        batches,
        episode_returns,
    })
}

/// Runs all environments of update `update` and returns one concatenated
/// batch per agent, in environment order.
pub fn collect_rollouts(
    cfg: &ExperimentConfig,
    nets: &[PolicyNetwork],
    seed: u64,
    update: usize,
) -> Result<Vec<TrajectoryBatch>, HarnessError> {
    let per_env: Vec<EnvRollout> = (0..cfg.num_envs)
        .into_par_iter()
        .map(|e| {
            let path = [TAG_ENV, update as u64, e as u64];
            rollout_env(
                cfg,
                nets,
                derive_path(seed, &path),
                derive_path(seed, &[TAG_ACT, update as u64, e as u64]),
            )
        })
        .collect::<Result<_, _>>()?;
    if log::log_enabled!(log::Level::Debug) {
        let finished: Vec<f64> = per_env
            .iter()
            .flat_map(|r| r.episode_returns.iter().map(|ep| ep.iter().sum::<f64>()))
            .collect();
        if !finished.is_empty() {
            log::debug!(
                "update {update}: {} training episodes, mean total return {:.3}",
                finished.len(),
                finished.iter().sum::<f64>() / finished.len() as f64
            );
        }
    }
    (0..nets.len())
        .map(|i| {
            let parts: Vec<TrajectoryBatch> = per_env.iter().map(|r| r.batches[i].clone()).collect();
            TrajectoryBatch::concat(&parts).map_err(HarnessError::from)
        })
        .collect()
}

/// Per-agent diagnostics accumulated between evaluations.
#[derive(Debug, Clone, Default)]
struct Window {
    updates: u64,
    conflicts: u64,
    branches: BranchCounts,
}

fn update_one(
    cfg: &ExperimentConfig,
    agent: &mut AgentState,
    batch: &TrajectoryBatch,
    seed: u64,
    update: usize,
    agent_id: usize,
    window: &mut Window,
) -> Result<(), HarnessError> {
    let ucfg = cfg.update_config();
    let lr = cfg.lr_at(update);
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let chunk = batch.len().div_ceil(cfg.minibatches);
    for epoch in 0..cfg.ppo_epochs {
        let mut rng = stream(seed, &[TAG_MINIBATCH, update as u64, agent_id as u64, epoch as u64]);
        idx.shuffle(&mut rng);
        for mb in idx.chunks(chunk) {
            let sub = batch.select(mb);
            let d = update_agent(&mut agent.net, &sub, cfg.method, &mut agent.opt, &ucfg, lr)?;
            window.updates += 1;
            window.conflicts += d.conflict as u64;
            window.branches.record(d.fcgrad_branch);
        }
    }
    Ok(())
}

/// Result of evaluating frozen policies.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    /// Per agent, mean episodic return.
    pub returns: Vec<f64>,
    pub report: FairnessReport,
    /// Per agent, events summed over all episodes.
    pub counters: Vec<EventCounters>,
    pub episodes: usize,
}

/// Plays `episodes` full episodes with the given policies.
pub fn evaluate(
    cfg: &ExperimentConfig,
    nets: &[PolicyNetwork],
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<EvalOutcome, HarnessError> {
    if episodes == 0 {
        return Err(HarnessError::Config("evaluation needs at least one episode".into()));
    }
    let (n, shape) = env_shape(cfg)?;
    if nets.len() != n {
        return Err(HarnessError::Incompatible(format!(
            "{} policies for a {n}-agent game",
            nets.len()
        )));
    }
    if let Some(bad) = nets.iter().find(|p| p.shape.obs_dim != shape.obs_dim || p.shape.n_actions != shape.n_actions) {
        return Err(HarnessError::Incompatible(format!(
            "policy shape {:?} does not fit game observation {} / actions {}",
            bad.shape, shape.obs_dim, shape.n_actions
        )));
    }
    let results: Vec<(Vec<f64>, Vec<EventCounters>)> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let env_seed = derive_path(seed, &[TAG_EVAL, e as u64]);
            let mut env = make_env(cfg, env_seed)?;
            let mut rng = stream(seed, &[TAG_EVAL, e as u64, TAG_ACT]);
            let mut obs = env.reset(env_seed);
            let mut ret = vec![0.0; n];
            let mut counters = vec![EventCounters::default(); n];
            loop {
                let mut actions = Vec::with_capacity(n);
                for i in 0..n {
                    let out = nets[i].forward(obs[i].as_slice())?;
                    actions.push(if greedy {
                        argmax(&out.probs)
                    } else {
                        sample_action(&out.probs, &mut rng)
                    });
                }
                let step = env.step(&actions)?;
                for i in 0..n {
                    ret[i] += step.rewards[i];
                    counters[i] += step.info[i];
                }
                if step.done {
                    break;
                }
                obs = step.observations;
            }
            Ok((ret, counters))
        })
        .collect::<Result<_, HarnessError>>()?;
    let mut returns = vec![0.0; n];
    let mut counters = vec![EventCounters::default(); n];
    for (r, c) in &results {
        for i in 0..n {
            returns[i] += r[i];
            counters[i] += c[i];
        }
    }
    for r in &mut returns {
        *r /= episodes as f64;
    }
    let opts = ReportOptions {
        nonnegative_shift: cfg
            .shift_negative_returns
            .then(|| make_env(cfg, seed).map(|e| e.min_episode_return()))
            .transpose()?,
    };
    let report = metrics::report_with(&returns, opts)?;
    if report.has_negative && !cfg.shift_negative_returns {
        log::debug!("negative mean return present; gini/jain computed on raw values");
    }
    Ok(EvalOutcome {
        returns,
        report,
        counters,
        episodes,
    })
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Everything one seed produces.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<RunRecord>,
    pub agents: Vec<AgentState>,
}

/// Trains all agents for one seed and evaluates every `eval_every` updates
/// and after the final update.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun, HarnessError> {
    cfg.validate()?;
    let mut agents = init_agents(cfg, seed)?;
    let n = agents.len();
    let mut windows = vec![Window::default(); n];
    let mut records = Vec::new();
    let eval_seed = derive_seed(seed, TAG_EVAL);
    for u in 0..cfg.total_updates {
        let nets: Vec<PolicyNetwork> = agents.iter().map(|a| a.net.clone()).collect();
        let batches = collect_rollouts(cfg, &nets, seed, u)?;
        agents
            .par_iter_mut()
            .zip(windows.par_iter_mut())
            .zip(batches.par_iter())
            .enumerate()
            .map(|(i, ((agent, window), batch))| update_one(cfg, agent, batch, seed, u, i, window))
            .collect::<Result<Vec<()>, HarnessError>>()?;
        let done = u + 1;
        if done % cfg.eval_every == 0 || done == cfg.total_updates {
            let nets: Vec<PolicyNetwork> = agents.iter().map(|a| a.net.clone()).collect();
            let ev = evaluate(cfg, &nets, cfg.eval_episodes, eval_seed, cfg.greedy_eval)?;
            let record = RunRecord {
                run_id: cfg.run_id(seed),
                env: cfg.env,
                method: cfg.method,
                beta: cfg.beta,
                seed,
                update: done,
                env_steps: (done * cfg.num_envs * cfg.rollout_length) as u64,
                report: ev.report,
                conflict_rate: windows
                    .iter()
                    .map(|w| if w.updates == 0 { 0.0 } else { w.conflicts as f64 / w.updates as f64 })
                    .collect(),
                branches: windows.iter().map(|w| w.branches).collect(),
            };
            log::info!(
                "{} update {done}/{}: mean {:.3} min {:.3} gini {:.3} conflict {:?}",
                record.run_id,
                cfg.total_updates,
                record.report.mean,
                record.report.min,
                record.report.gini,
                record.conflict_rate
            );
            records.push(record);
            windows.iter_mut().for_each(|w| *w = Window::default());
        }
    }
    Ok(SeedRun {
        seed,
        records,
        agents,
    })
}

/// Trains every configured seed. Results come back in seed order.
pub fn train(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>, HarnessError> {
    cfg.validate()?;
    cfg.seeds.par_iter().map(|&s| train_seed(cfg, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(env: EnvKind, method: Method) -> ExperimentConfig {
        let mut c = ExperimentConfig::for_env(env);
        c.method = method;
        c.seeds = vec![3];
        c.num_envs = 2;
        c.rollout_length = 30;
        c.total_updates = 2;
        c.minibatches = 2;
        c.eval_every = 1;
        c.eval_episodes = 2;
        c.hidden = 8;
        match env {
            EnvKind::Coins => c.coins.episode_length = 20,
            EnvKind::Cleanup => c.cleanup.episode_length = 20,
            EnvKind::Harvest => c.harvest.episode_length = 20,
        }
        c
    }

    #[test]
    fn collective_stream_is_mean_of_individual_streams() {
        for env in [EnvKind::Coins, EnvKind::Cleanup, EnvKind::Harvest] {
            let cfg = small(env, Method::FCGrad);
            let agents = init_agents(&cfg, 1).unwrap();
            let nets: Vec<_> = agents.into_iter().map(|a| a.net).collect();
            let b = collect_rollouts(&cfg, &nets, 1, 0).unwrap();
            assert_eq!(b[0].len(), cfg.num_envs * cfg.rollout_length);
            for t in 0..b[0].len() {
                let m = b.iter().map(|x| x.reward_ind[t]).sum::<f64>() / b.len() as f64;
                for x in &b {
                    assert!((x.reward_col[t] - m).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small(EnvKind::Coins, Method::FCGrad);
        let a = train_seed(&cfg, 3).unwrap();
        let b = train_seed(&cfg, 3).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.agents, b.agents);
        assert_eq!(a.records.len(), 2);
        assert!(a.records.windows(2).all(|w| w[0].env_steps <= w[1].env_steps));
    }

    #[test]
    fn col_matches_weighted_at_beta_one() {
        let col = small(EnvKind::Coins, Method::Col);
        let mut w = small(EnvKind::Coins, Method::Weighted);
        w.beta = 1.0;
        let a = train_seed(&col, 3).unwrap();
        let b = train_seed(&w, 3).unwrap();
        assert_eq!(a.agents, b.agents);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.report, y.report);
            assert_eq!(x.conflict_rate, y.conflict_rate);
        }
    }

    #[test]
    fn every_method_trains_on_every_game() {
        for env in [EnvKind::Coins, EnvKind::Cleanup, EnvKind::Harvest] {
            for m in Method::ALL {
                let mut cfg = small(env, m);
                cfg.total_updates = 1;
                let r = train_seed(&cfg, 0).unwrap();
                assert_eq!(r.records.len(), 1, "{env} {m}");
                assert!(r.agents.iter().all(|a| a.net.policy.is_finite()));
            }
        }
    }

    #[test]
    fn zero_updates_zero_records() {
        let mut cfg = small(EnvKind::Harvest, Method::Col);
        cfg.total_updates = 0;
        assert!(train_seed(&cfg, 0).unwrap().records.is_empty());
    }

    #[test]
    fn evaluation_errors_and_determinism() {
        let cfg = small(EnvKind::Coins, Method::Col);
        let nets: Vec<_> = init_agents(&cfg, 0).unwrap().into_iter().map(|a| a.net).collect();
        assert!(evaluate(&cfg, &nets, 0, 0, false).is_err());
        assert!(matches!(evaluate(&cfg, &nets[..1], 2, 0, false), Err(HarnessError::Incompatible(_))));
        let a = evaluate(&cfg, &nets, 3, 9, false).unwrap();
        let b = evaluate(&cfg, &nets, 3, 9, false).unwrap();
        assert_eq!(a, b);
        let g = evaluate(&cfg, &nets, 3, 9, true).unwrap();
        assert_eq!(g.episodes, 3);
    }

    #[test]
    fn shifted_inequality_metrics_stay_in_range() {
        let mut cfg = small(EnvKind::Coins, Method::Col);
        let nets: Vec<_> = init_agents(&cfg, 2).unwrap().into_iter().map(|a| a.net).collect();
        let raw = evaluate(&cfg, &nets, 4, 1, false).unwrap();
        cfg.shift_negative_returns = true;
        let shifted = evaluate(&cfg, &nets, 4, 1, false).unwrap();
        assert_eq!(raw.returns, shifted.returns);
        assert!((0.0..=1.0).contains(&shifted.report.gini));
        assert!(shifted.report.jain > 0.0 && shifted.report.jain <= 1.0);
    }
}
