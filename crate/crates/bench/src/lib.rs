//! Shared fixtures for the benchmarks.

use fcgrad::agent::{NetShape, PolicyNetwork, TrajectoryBatch};
use fcgrad::harness::{make_env, EnvKind, ExperimentConfig};
use fcgrad::ParamVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A pair of gradients with a negative inner product.
pub fn conflicting_pair(dim: usize, seed: u64) -> (ParamVector, ParamVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (ParamVector::new(a).unwrap(), ParamVector::new(b).unwrap());
        if a.dot(&b) < 0.0 {
            return (a, b);
        }
    }
}

/// Rolls out random actions for `steps` steps and returns one batch per
/// agent with advantages computed.
pub fn random_batches(env: EnvKind, steps: usize, hidden: usize, seed: u64) -> (Vec<PolicyNetwork>, Vec<TrajectoryBatch>) {
    let cfg = ExperimentConfig::for_env(env);
    let mut game = make_env(&cfg, seed).unwrap();
    let n = game.n_agents();
    let mut obs = game.reset(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = NetShape {
        obs_dim: obs[0].len(),
        hidden,
        n_actions: game.n_actions(),
    };
    let nets: Vec<PolicyNetwork> = (0..n).map(|_| PolicyNetwork::init(shape, &mut rng)).collect();
    let mut batches: Vec<TrajectoryBatch> = (0..n).map(|_| TrajectoryBatch::new(shape.obs_dim)).collect();
    for _ in 0..steps {
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..shape.n_actions)).collect();
        let step = game.step(&actions).unwrap();
        let col = step.rewards.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            let p = 1.0 / shape.n_actions as f64;
            batches[i]
                .push(obs[i].as_slice(), actions[i], p.ln(), step.rewards[i], col, 0.0, 0.0, step.done)
                .unwrap();
        }
        obs = if step.done { game.reset(rng.gen()) } else { step.observations };
    }
    for b in &mut batches {
        b.compute_advantages(0.99, 0.95, 0.0, 0.0).unwrap();
    }
    (nets, batches)
}
