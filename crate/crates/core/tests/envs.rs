//! Environment invariants under random and scripted play.

use fcgrad::envs::{
    CleanupConfig, CleanupEnv, CoinColor, CoinsConfig, CoinsEnv, Environment, HarvestConfig, HarvestEnv,
};
use proptest::prelude::*;

fn games(seed: u64) -> Vec<Box<dyn Environment>> {
    vec![
        Box::new(CoinsEnv::new(CoinsConfig::default(), seed).unwrap().0),
        Box::new(CleanupEnv::new(CleanupConfig::default(), seed).unwrap().0),
        Box::new(HarvestEnv::new(HarvestConfig::default(), seed).unwrap().0),
    ]
}

/// Plays `actions` (cycled per agent) and returns observations and rewards.
fn play(env: &mut dyn Environment, seed: u64, actions: &[usize], steps: usize) -> Vec<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = env.n_agents();
    let k = env.n_actions();
    env.reset(seed);
    let mut out = Vec::new();
    for t in 0..steps {
        let a: Vec<usize> = (0..n).map(|i| actions[(t * n + i) % actions.len()] % k).collect();
        let s = env.step(&a).unwrap();
        out.push((s.observations.iter().map(|o| o.0.clone()).collect(), s.rewards));
        if s.done {
            break;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trajectories_are_determined_by_seed_and_actions(seed in any::<u64>(), actions in prop::collection::vec(0usize..8, 1..64)) {
        for (mut a, mut b) in games(seed).into_iter().zip(games(seed ^ 1)) {
            prop_assert_eq!(play(a.as_mut(), seed, &actions, 120), play(b.as_mut(), seed, &actions, 120));
        }
    }

    #[test]
    fn agents_never_share_cells_and_obs_length_is_fixed(seed in any::<u64>(), actions in prop::collection::vec(0usize..8, 1..64)) {
        for mut env in games(seed) {
            let dim = env.obs_dim();
            let n = env.n_agents();
            let k = env.n_actions();
            for o in env.reset(seed) {
                prop_assert_eq!(o.len(), dim);
            }
            for t in 0..150 {
                let a: Vec<usize> = (0..n).map(|i| actions[(t * n + i) % actions.len()] % k).collect();
                let s = env.step(&a).unwrap();
                let pos = &env.world().agent_positions;
                for i in 0..n {
                    for j in i + 1..n {
                        prop_assert_ne!(pos[i], pos[j]);
                    }
                }
                prop_assert!(s.observations.iter().all(|o| o.len() == dim));
                if s.done {
                    break;
                }
            }
        }
    }

    /// Every Coins reward comes from a collection event: +1 to the collector
    /// and -2 to the owner when the coin had the other agent's colour.
    #[test]
    fn coins_rewards_match_events(seed in any::<u64>(), actions in prop::collection::vec(0usize..5, 1..64)) {
        let cfg = CoinsConfig::default();
        let (mut env, _) = CoinsEnv::new(cfg.clone(), seed).unwrap();
        for t in 0..200 {
            let a = [actions[(2 * t) % actions.len()], actions[(2 * t + 1) % actions.len()]];
            let s = env.step(&a).unwrap();
            let collected: u32 = s.info.iter().map(|c| c.green_coins + c.red_coins).sum();
            let stolen = s.info[0].red_coins + s.info[1].green_coins;
            let expected = collected as f64 * cfg.collect_reward + stolen as f64 * cfg.theft_penalty;
            prop_assert_eq!(s.rewards.iter().sum::<f64>(), expected);
            if s.done {
                break;
            }
        }
    }
}

/// Greedy move toward `target` on the open grid, trying the other axis when
/// the first is blocked by the other agent.
fn toward(from: (usize, usize), target: (usize, usize), blocked: (usize, usize)) -> usize {
    const UP: usize = 0;
    const DOWN: usize = 1;
    const LEFT: usize = 2;
    const RIGHT: usize = 3;
    const STAY: usize = 4;
    let mut options = Vec::new();
    if target.0 < from.0 {
        options.push((LEFT, (from.0 - 1, from.1)));
    }
    if target.0 > from.0 {
        options.push((RIGHT, (from.0 + 1, from.1)));
    }
    if target.1 < from.1 {
        options.push((UP, (from.0, from.1 - 1)));
    }
    if target.1 > from.1 {
        options.push((DOWN, (from.0, from.1 + 1)));
    }
    options.into_iter().find(|(_, c)| *c != blocked).map(|(a, _)| a).unwrap_or(STAY)
}

fn scripted_collective_rate(own_colour_only: bool, seed: u64, episodes: usize) -> f64 {
    let (mut env, _) = CoinsEnv::new(CoinsConfig::default(), seed).unwrap();
    let (mut total, mut steps) = (0.0, 0usize);
    for e in 0..episodes {
        env.reset(seed.wrapping_add(e as u64));
        loop {
            let pos = env.world().agent_positions.clone();
            let actions: Vec<usize> = (0..2)
                .map(|i| match env.coin() {
                    Some((c, colour)) if !own_colour_only || colour == CoinColor::of_agent(i) => {
                        toward(pos[i], c, pos[1 - i])
                    }
                    _ => 4,
                })
                .collect();
            let s = env.step(&actions).unwrap();
            total += s.rewards.iter().sum::<f64>() / 2.0;
            steps += 1;
            if s.done {
                break;
            }
        }
    }
    total / steps as f64
}

#[test]
fn own_colour_collection_beats_collecting_everything() {
    for seed in 0..3 {
        let own = scripted_collective_rate(true, seed, 20);
        let greedy = scripted_collective_rate(false, seed, 20);
        assert!(own > greedy, "seed {seed}: own {own} vs greedy {greedy}");
    }
}
