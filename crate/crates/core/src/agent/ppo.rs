use ndarray::{Array1, Array2};

use super::{AdvantageStream, AgentError, PolicyNetwork, TrajectoryBatch};
use crate::gradcore::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoParams {
    pub clip: f64,
    /// Standardise each advantage stream per batch.
    pub normalize_advantages: bool,
}

impl Default for PpoParams {
    fn default() -> Self {
        PpoParams {
            clip: 0.2,
            normalize_advantages: true,
        }
    }
}

/// Ascent gradients of both surrogates and of the mean policy entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradients {
    pub ind: ParamVector,
    pub col: ParamVector,
    pub entropy: ParamVector,
}

fn stream_advantages(
    batch: &TrajectoryBatch,
    stream: AdvantageStream,
    normalize: bool,
) -> Result<Vec<f64>, AgentError> {
    let a = batch.advantages()?;
    let raw = match stream {
        AdvantageStream::Individual => &a.adv_ind,
        AdvantageStream::Collective => &a.adv_col,
    };
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(AgentError::NonFinite("advantage"));
    }
    if !normalize {
        return Ok(raw.clone());
    }
    let m = super::mean(raw);
    let var = raw.iter().map(|x| (x - m).powi(2)).sum::<f64>() / raw.len() as f64;
    let sd = var.sqrt() + 1e-8;
    Ok(raw.iter().map(|x| (x - m) / sd).collect())
}

fn check(batch: &TrajectoryBatch, params: &PpoParams) -> Result<(), AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    if !(params.clip > 0.0) {
        return Err(AgentError::Invalid(format!("clip must be positive, got {}", params.clip)));
    }
    Ok(())
}

fn ratios(fwd: &super::Forward, batch: &TrajectoryBatch) -> Vec<f64> {
    batch
        .actions
        .iter()
        .enumerate()
        .map(|(t, &a)| (fwd.probs[[t, a]].ln() - batch.log_probs[t]).exp())
        .collect()
}

/// Clipped surrogate `mean_t min(r_t A_t, clip(r_t) A_t)`.
pub fn ppo_surrogate(
    net: &PolicyNetwork,
    batch: &TrajectoryBatch,
    stream: AdvantageStream,
    params: &PpoParams,
) -> Result<f64, AgentError> {
    check(batch, params)?;
    let adv = stream_advantages(batch, stream, params.normalize_advantages)?;
    let fwd = net.forward_batch(batch.obs.view())?;
    let rho = ratios(&fwd, batch);
    let total: f64 = rho
        .iter()
        .zip(&adv)
        .map(|(&r, &a)| (r * a).min(r.clamp(1.0 - params.clip, 1.0 + params.clip) * a))
        .sum();
    Ok(total / batch.len() as f64)
}

fn surrogate_cotangent(
    fwd: &super::Forward,
    batch: &TrajectoryBatch,
    rho: &[f64],
    adv: &[f64],
    clip: f64,
) -> Array2<f64> {
    let n = batch.len() as f64;
    let mut d = fwd.probs.mapv(|p| -p);
    for t in 0..batch.len() {
        let (r, a) = (rho[t], adv[t]);
        let active = r * a <= r.clamp(1.0 - clip, 1.0 + clip) * a;
        let c = if active { r * a / n } else { 0.0 };
        let mut row = d.row_mut(t);
        row[batch.actions[t]] += 1.0;
        row *= c;
    }
    d
}

fn entropy_cotangent(fwd: &super::Forward) -> Array2<f64> {
    let n = fwd.probs.nrows() as f64;
    let mut d = fwd.probs.clone();
    for mut row in d.rows_mut() {
        let h: f64 = -row.iter().map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>();
        row.mapv_inplace(|p| if p > 0.0 { -p * (p.ln() + h) / n } else { 0.0 });
    }
    d
}

/// Ascent gradient of the clipped surrogate for one advantage stream.
pub fn ppo_policy_gradient(
    net: &PolicyNetwork,
    batch: &TrajectoryBatch,
    stream: AdvantageStream,
    params: &PpoParams,
) -> Result<ParamVector, AgentError> {
    check(batch, params)?;
    let adv = stream_advantages(batch, stream, params.normalize_advantages)?;
    let fwd = net.forward_batch(batch.obs.view())?;
    let rho = ratios(&fwd, batch);
    let d = surrogate_cotangent(&fwd, batch, &rho, &adv, params.clip);
    Ok(net.backprop_logits(batch.obs.view(), &fwd, &d))
}

/// Ascent gradient of the batch-mean policy entropy.
pub fn entropy_gradient(net: &PolicyNetwork, batch: &TrajectoryBatch) -> Result<ParamVector, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let fwd = net.forward_batch(batch.obs.view())?;
    Ok(net.backprop_logits(batch.obs.view(), &fwd, &entropy_cotangent(&fwd)))
}

/// Both surrogate gradients and the entropy gradient from one forward pass.
pub fn policy_gradients(
    net: &PolicyNetwork,
    batch: &TrajectoryBatch,
    params: &PpoParams,
) -> Result<PolicyGradients, AgentError> {
    check(batch, params)?;
    let adv_ind = stream_advantages(batch, AdvantageStream::Individual, params.normalize_advantages)?;
    let adv_col = stream_advantages(batch, AdvantageStream::Collective, params.normalize_advantages)?;
    let fwd = net.forward_batch(batch.obs.view())?;
    let rho = ratios(&fwd, batch);
    let x = batch.obs.view();
    Ok(PolicyGradients {
        ind: net.backprop_logits(x, &fwd, &surrogate_cotangent(&fwd, batch, &rho, &adv_ind, params.clip)),
        col: net.backprop_logits(x, &fwd, &surrogate_cotangent(&fwd, batch, &rho, &adv_col, params.clip)),
        entropy: net.backprop_logits(x, &fwd, &entropy_cotangent(&fwd)),
    })
}

fn value_targets(batch: &TrajectoryBatch) -> Result<(&[f64], &[f64]), AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let a = batch.advantages()?;
    Ok((&a.ret_ind, &a.ret_col))
}

/// `c_v * (MSE(v_ind, ret_ind) + MSE(v_col, ret_col))`.
pub fn value_loss(net: &PolicyNetwork, batch: &TrajectoryBatch, value_coef: f64) -> Result<f64, AgentError> {
    let (ri, rc) = value_targets(batch)?;
    let fwd = net.forward_batch(batch.obs.view())?;
    let n = batch.len() as f64;
    let mse = |v: &Array1<f64>, r: &[f64]| v.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    Ok(value_coef * (mse(&fwd.v_ind, ri) + mse(&fwd.v_col, rc)))
}

/// Descent gradient of [`value_loss`] over the value parameters.
pub fn value_gradient(
    net: &PolicyNetwork,
    batch: &TrajectoryBatch,
    value_coef: f64,
) -> Result<ParamVector, AgentError> {
    let (ri, rc) = value_targets(batch)?;
    let fwd = net.forward_batch(batch.obs.view())?;
    let k = 2.0 * value_coef / batch.len() as f64;
    let d_ind = Array1::from_iter(fwd.v_ind.iter().zip(ri).map(|(v, r)| k * (v - r)));
    let d_col = Array1::from_iter(fwd.v_col.iter().zip(rc).map(|(v, r)| k * (v - r)));
    Ok(net.backprop_values(&fwd, &d_ind, &d_col))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::agent::{NetShape, PolicyNetwork};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_net(seed: u64) -> PolicyNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = NetShape {
            obs_dim: 4,
            hidden: 8,
            n_actions: 3,
        };
        let mut n = PolicyNetwork::init(shape, &mut rng);
        for v in n.policy.as_mut_slice() {
            *v = rng.gen_range(-0.8..0.8);
        }
        for v in n.value.as_mut_slice() {
            *v = rng.gen_range(-0.8..0.8);
        }
        n
    }

    /// Batch collected by a slightly different policy so ratios differ from 1.
    pub(crate) fn tiny_batch(net: &PolicyNetwork, seed: u64, len: usize) -> TrajectoryBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
        let mut b = TrajectoryBatch::new(net.shape.obs_dim);
        for t in 0..len {
            let obs: Vec<f64> = (0..net.shape.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let out = net.forward(&obs).unwrap();
            let a = rng.gen_range(0..net.shape.n_actions);
            let logp = out.probs[a].ln() + rng.gen_range(-0.15..0.15);
            b.push(
                &obs,
                a,
                logp,
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                out.v_ind,
                out.v_col,
                t + 1 == len,
            )
            .unwrap();
        }
        b.compute_advantages(0.9, 0.8, 0.0, 0.0).unwrap();
        b
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        diff / scale.max(1e-12)
    }

    fn fd_policy(net: &PolicyNetwork, f: impl Fn(&PolicyNetwork) -> f64) -> Vec<f64> {
        let h = 1e-6;
        (0..net.policy.dim())
            .map(|i| {
                let mut p = net.policy.clone();
                p.as_mut_slice()[i] += h;
                let up = f(&net.with_policy(p.clone()));
                p.as_mut_slice()[i] -= 2.0 * h;
                let down = f(&net.with_policy(p));
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let net = tiny_net(seed);
            let batch = tiny_batch(&net, seed, 16);
            for stream in [AdvantageStream::Individual, AdvantageStream::Collective] {
                let p = PpoParams::default();
                let g = ppo_policy_gradient(&net, &batch, stream, &p).unwrap();
                let fd = fd_policy(&net, |n| ppo_surrogate(n, &batch, stream, &p).unwrap());
                let e = rel_err(&g, &fd);
                assert!(e < 1e-4, "seed {seed}: rel err {e}");
            }
        }
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let entropy = |n: &PolicyNetwork, b: &TrajectoryBatch| {
            let f = n.forward_batch(b.obs.view()).unwrap();
            f.probs.rows().into_iter().map(|r| -r.iter().map(|p| p * p.ln()).sum::<f64>()).sum::<f64>() / b.len() as f64
        };
        for seed in 0..5 {
            let net = tiny_net(seed);
            let batch = tiny_batch(&net, seed, 12);
            let g = entropy_gradient(&net, &batch).unwrap();
            let fd = fd_policy(&net, |n| entropy(n, &batch));
            assert!(rel_err(&g, &fd) < 1e-4);
        }
    }

    #[test]
    fn value_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let net = tiny_net(seed);
            let batch = tiny_batch(&net, seed + 100, 16);
            let g = value_gradient(&net, &batch, 0.5).unwrap();
            let h = 1e-6;
            let fd: Vec<f64> = (0..net.value.dim())
                .map(|i| {
                    let mut n = net.clone();
                    n.value.as_mut_slice()[i] += h;
                    let up = value_loss(&n, &batch, 0.5).unwrap();
                    n.value.as_mut_slice()[i] -= 2.0 * h;
                    let down = value_loss(&n, &batch, 0.5).unwrap();
                    (up - down) / (2.0 * h)
                })
                .collect();
            assert!(rel_err(&g, &fd) < 1e-4);
        }
    }

    #[test]
    fn on_policy_zero_advantages_give_zero_gradient() {
        let net = tiny_net(1);
        let mut batch = tiny_batch(&net, 1, 8);
        let fwd = net.forward_batch(batch.obs.view()).unwrap();
        for t in 0..batch.len() {
            batch.log_probs[t] = fwd.probs[[t, batch.actions[t]]].ln();
        }
        let a = batch.advantages.as_mut().unwrap();
        a.adv_ind.iter_mut().for_each(|x| *x = 0.0);
        let g = ppo_policy_gradient(&net, &batch, AdvantageStream::Individual, &PpoParams::default()).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn single_sample_unclipped_is_scaled_score() {
        let net = tiny_net(2);
        let mut batch = tiny_batch(&net, 2, 1);
        let out = net.forward(batch.obs.row(0).as_slice().unwrap()).unwrap();
        let a = batch.actions[0];
        batch.log_probs[0] = out.probs[a].ln() - 0.05;
        let adv = 0.7;
        batch.advantages.as_mut().unwrap().adv_col[0] = adv;
        let p = PpoParams {
            clip: 0.2,
            normalize_advantages: false,
        };
        let g = ppo_policy_gradient(&net, &batch, AdvantageStream::Collective, &p).unwrap();
        let rho = 0.05f64.exp();
        let score = fd_policy(&net, |n| n.forward(batch.obs.row(0).as_slice().unwrap()).unwrap().probs[a].ln());
        let expected: Vec<f64> = score.iter().map(|s| rho * adv * s).collect();
        assert!(rel_err(&g, &expected) < 1e-6);
    }

    #[test]
    fn clipped_samples_contribute_nothing() {
        let net = tiny_net(3);
        let mut batch = tiny_batch(&net, 3, 1);
        let out = net.forward(batch.obs.row(0).as_slice().unwrap()).unwrap();
        batch.log_probs[0] = out.probs[batch.actions[0]].ln() - 1.0;
        batch.advantages.as_mut().unwrap().adv_ind[0] = 1.0;
        let p = PpoParams {
            clip: 0.2,
            normalize_advantages: false,
        };
        let g = ppo_policy_gradient(&net, &batch, AdvantageStream::Individual, &p).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn value_bias_hand_derivative() {
        let shape = NetShape {
            obs_dim: 1,
            hidden: 1,
            n_actions: 2,
        };
        let net = PolicyNetwork::from_params(shape, ParamVector::zeros(shape.policy_len()), ParamVector::zeros(shape.value_len())).unwrap();
        let mut b = TrajectoryBatch::new(1);
        b.push(&[0.0], 0, 0.5f64.ln(), 0.0, 0.0, 0.0, 0.0, true).unwrap();
        b.compute_advantages(0.99, 0.95, 0.0, 0.0).unwrap();
        let a = b.advantages.as_mut().unwrap();
        a.ret_ind[0] = 1.0;
        a.ret_col[0] = 0.0;
        let g = value_gradient(&net, &b, 0.5).unwrap();
        // index 1 is the individual head bias
        assert_eq!(g[1], -(0.5 * 2.0 * (1.0 - 0.0) / 1.0));
        assert_eq!(g[3], 0.0);
    }

    #[test]
    fn perfect_values_zero_gradient() {
        let net = tiny_net(4);
        let mut batch = tiny_batch(&net, 4, 6);
        let fwd = net.forward_batch(batch.obs.view()).unwrap();
        let a = batch.advantages.as_mut().unwrap();
        a.ret_ind = fwd.v_ind.to_vec();
        a.ret_col = fwd.v_col.to_vec();
        assert_eq!(value_gradient(&net, &batch, 0.5).unwrap().norm(), 0.0);
    }

    #[test]
    fn errors() {
        let net = tiny_net(0);
        let empty = TrajectoryBatch::new(4);
        let p = PpoParams::default();
        assert!(matches!(ppo_policy_gradient(&net, &empty, AdvantageStream::Individual, &p), Err(AgentError::EmptyBatch)));
        assert!(matches!(value_gradient(&net, &empty, 0.5), Err(AgentError::EmptyBatch)));
        let mut b = tiny_batch(&net, 0, 4);
        b.advantages.as_mut().unwrap().adv_ind[0] = f64::NAN;
        assert!(matches!(ppo_policy_gradient(&net, &b, AdvantageStream::Individual, &p), Err(AgentError::NonFinite(_))));
        b.advantages = None;
        assert!(matches!(ppo_policy_gradient(&net, &b, AdvantageStream::Collective, &p), Err(AgentError::MissingAdvantages)));
    }
}
