//! End-to-end checks of the training and evaluation pipeline.

use fcgrad::agent::{Method, PolicyNetwork};
use fcgrad::harness::{
    env_shape, evaluate, read_results, train, write_results, EnvKind, ExperimentConfig, RunRecord,
    RESULT_COLUMNS,
};
use fcgrad::ParamVector;

fn tiny(env: EnvKind, method: Method) -> ExperimentConfig {
    let mut c = ExperimentConfig::for_env(env);
    c.method = method;
    c.seeds = vec![0, 1];
    c.num_envs = 2;
    c.rollout_length = 50;
    c.total_updates = 4;
    c.eval_every = 2;
    c.eval_episodes = 2;
    c.minibatches = 2;
    c.hidden = 16;
    c
}

fn csv_of(records: &[RunRecord]) -> String {
    let mut buf = Vec::new();
    write_results(&mut buf, records).unwrap();
    String::from_utf8(buf).unwrap()
}

/// Zero policy parameters give exactly uniform action probabilities.
fn uniform_policies(cfg: &ExperimentConfig) -> Vec<PolicyNetwork> {
    let (n, shape) = env_shape(cfg).unwrap();
    (0..n)
        .map(|_| {
            PolicyNetwork::from_params(shape, ParamVector::zeros(shape.policy_len()), ParamVector::zeros(shape.value_len()))
                .unwrap()
        })
        .collect()
}

#[test]
fn uniform_policies_split_coins_evenly() {
    let cfg = ExperimentConfig::for_env(EnvKind::Coins);
    let ev = evaluate(&cfg, &uniform_policies(&cfg), 200, 11, false).unwrap();
    let (g0, g1) = (ev.counters[0].green_coins as f64, ev.counters[1].green_coins as f64);
    let total = g0 + g1 + (ev.counters[0].red_coins + ev.counters[1].red_coins) as f64;
    // the two spawn corners are symmetric, so each agent should reach half
    // of the coins under identical random walks
    let share = g0 / (g0 + g1);
    assert!(total > 500.0, "too few collections: {total}");
    assert!((share - 0.5).abs() < 0.05, "green share of agent 0: {share}");
    assert!(ev.report.gini.is_finite());
}

#[test]
fn results_csv_follows_the_schema() {
    let runs = train(&tiny(EnvKind::Harvest, Method::FCGrad)).unwrap();
    let records: Vec<RunRecord> = runs.iter().flat_map(|r| r.records.clone()).collect();
    let text = csv_of(&records);
    assert_eq!(text.lines().next().unwrap(), RESULT_COLUMNS.join(","));
    let rows = read_results(text.as_bytes()).unwrap();
    // 2 seeds x 2 evaluations x agents
    assert_eq!(rows.len(), 2 * 2 * records[0].report.per_agent_returns.len());
    for r in &records {
        assert_eq!(r.env_steps as usize, r.update * 2 * 50);
    }
    for w in rows.windows(2) {
        if w[0].run_id == w[1].run_id {
            assert!(w[1].env_steps >= w[0].env_steps);
        }
    }
}

#[test]
fn diagnostics_are_logged_for_collective_only_training() {
    let runs = train(&tiny(EnvKind::Cleanup, Method::Col)).unwrap();
    for r in runs.iter().flat_map(|r| &r.records) {
        // two updates per window, ppo_epochs x minibatches optimiser steps each
        let expected = (2 * 2 * 2) as u64;
        assert!(r.branches.iter().all(|b| b.total() == expected), "{:?}", r.branches);
        assert!(r.conflict_rate.iter().all(|c| (0.0..=1.0).contains(c)));
    }
}

#[test]
fn zero_updates_give_a_header_only_csv() {
    let mut c = tiny(EnvKind::Coins, Method::FCGrad);
    c.total_updates = 0;
    let runs = train(&c).unwrap();
    assert!(runs.iter().all(|r| r.records.is_empty()));
    let text = csv_of(&[]);
    assert_eq!(text.trim_end(), RESULT_COLUMNS.join(","));
    assert!(read_results(text.as_bytes()).unwrap().is_empty());
}

#[test]
fn collective_only_equals_weighted_at_one() {
    let col = train(&tiny(EnvKind::Coins, Method::Col)).unwrap();
    let mut w = tiny(EnvKind::Coins, Method::Weighted);
    w.beta = 1.0;
    let weighted = train(&w).unwrap();
    for (a, b) in col.iter().zip(&weighted) {
        assert_eq!(a.agents, b.agents);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.report, y.report);
            assert_eq!(x.conflict_rate, y.conflict_rate);
        }
    }
}
