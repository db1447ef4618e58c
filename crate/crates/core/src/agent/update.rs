use serde::{Deserialize, Serialize};

use super::ppo::policy_gradients;
use super::{value_gradient, AgentError, Method, OptimizerState, PolicyNetwork, PpoParams, TrajectoryBatch};
use crate::gradcore::{
    combine_aga, combine_fcgrad, combine_pcgrad, combine_weighted, Branch, CombineInput,
    CombineResult, FnHvp, GradError, ParamVector,
};

/// Where FCGrad's branch test reads `v_ind` and `v_col` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueSource {
    /// Batch means of discounted reward-to-go.
    #[default]
    Empirical,
    /// Batch means of the two value heads.
    Critic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateConfig {
    pub ppo: PpoParams,
    pub beta: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Global norm bound applied to the combined policy direction and to the
    /// value gradient. Non-positive disables clipping.
    pub grad_clip: f64,
    pub aga_lambda: f64,
    pub hvp_eps: f64,
    pub value_source: ValueSource,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            ppo: PpoParams::default(),
            beta: 0.5,
            entropy_coef: 0.01,
            value_coef: 0.5,
            grad_clip: 0.5,
            aga_lambda: 1.0,
            hvp_eps: 1e-4,
            value_source: ValueSource::Empirical,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDiagnostics {
    /// Output of the combiner the method actually used.
    pub combine: CombineResult,
    /// `<g_ind, g_col> < 0`, measured for every method.
    pub conflict: bool,
    /// Branch FCGrad takes on these gradients, recorded for every method.
    pub fcgrad_branch: Branch,
    pub v_ind: f64,
    pub v_col: f64,
    pub g_ind_norm: f64,
    pub g_col_norm: f64,
    /// Norm of the policy direction before clipping.
    pub direction_norm: f64,
}

fn clip_norm(g: ParamVector, bound: f64) -> ParamVector {
    let n = g.norm();
    if bound > 0.0 && n > bound {
        g.scale(bound / n)
    } else {
        g
    }
}

/// Collective-objective gradient (with entropy term) at the network's
/// current policy parameters.
fn col_gradient(
    net: &PolicyNetwork,
    batch: &TrajectoryBatch,
    cfg: &UpdateConfig,
) -> Result<ParamVector, AgentError> {
    let g = policy_gradients(net, batch, &cfg.ppo)?;
    Ok(g.col.add_scaled(cfg.entropy_coef, &g.entropy))
}

/// One optimiser step on `batch` with the given method. The policy moves by
/// ascent along the combined direction; the value heads by descent on the
/// value loss. `lr` is the step size for this call.
pub fn update_agent(
    net: &mut PolicyNetwork,
    batch: &TrajectoryBatch,
    method: Method,
    opt: &mut OptimizerState,
    cfg: &UpdateConfig,
    lr: f64,
) -> Result<UpdateDiagnostics, AgentError> {
    if opt.policy.dim() != net.policy.dim() || opt.value.dim() != net.value.dim() {
        return Err(AgentError::Shape(format!(
            "optimizer state ({}, {}) does not match network ({}, {})",
            opt.policy.dim(),
            opt.value.dim(),
            net.policy.dim(),
            net.value.dim()
        )));
    }
    let grads = policy_gradients(net, batch, &cfg.ppo)?;
    let g_ind = grads.ind.add_scaled(cfg.entropy_coef, &grads.entropy);
    let g_col = grads.col.add_scaled(cfg.entropy_coef, &grads.entropy);
    let (v_ind, v_col) = match cfg.value_source {
        ValueSource::Empirical => batch.empirical_values()?,
        ValueSource::Critic => batch.critic_values()?,
    };
    let input = CombineInput {
        g_ind: g_ind.clone(),
        g_col: g_col.clone(),
        v_ind,
        v_col,
        beta: cfg.beta,
    };
    let fc = combine_fcgrad(&input)?;
    let combine = match method {
        Method::Col => combine_weighted(&g_ind, &g_col, 1.0)?,
        Method::Ind | Method::IA => combine_weighted(&g_ind, &g_col, 0.0)?,
        Method::Weighted => combine_weighted(&g_ind, &g_col, cfg.beta)?,
        Method::PCGrad => combine_pcgrad(&g_ind, &g_col)?,
        Method::FCGrad => fc.clone(),
        Method::AgA => {
            let base = &*net;
            let eps = cfg.hvp_eps;
            let hvp = FnHvp::new(g_col.dim(), |v: &ParamVector| {
                let norm = v.norm();
                if norm == 0.0 {
                    return Ok(ParamVector::zeros(v.dim()));
                }
                let unit = v.scale(1.0 / norm);
                let at = |s: f64| {
                    col_gradient(&base.with_policy(base.policy.add_scaled(s * eps, &unit)), batch, cfg)
                        .map_err(|e| GradError::Hvp(e.to_string()))
                };
                let (up, down) = (at(1.0)?, at(-1.0)?);
                Ok(up.lincomb(norm / (2.0 * eps), &down, -norm / (2.0 * eps)))
            });
            combine_aga(&g_ind, &g_col, &hvp, cfg.aga_lambda)?
        }
    };
    let direction_norm = combine.direction.norm();
    let step = clip_norm(combine.direction.clone(), cfg.grad_clip);
    let vgrad = clip_norm(value_gradient(net, batch, cfg.value_coef)?, cfg.grad_clip);
    opt.policy.step(&mut net.policy, &step, lr, true)?;
    opt.value.step(&mut net.value, &vgrad, lr, false)?;
    Ok(UpdateDiagnostics {
        conflict: fc.conflict,
        fcgrad_branch: fc.branch,
        combine,
        v_ind,
        v_col,
        g_ind_norm: g_ind.norm(),
        g_col_norm: g_col.norm(),
        direction_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::ppo::tests::{tiny_batch, tiny_net};

    fn cfg(beta: f64) -> UpdateConfig {
        UpdateConfig {
            beta,
            ..Default::default()
        }
    }

    fn run(method: Method, beta: f64, seed: u64) -> (PolicyNetwork, UpdateDiagnostics) {
        let mut net = tiny_net(seed);
        let batch = tiny_batch(&net, seed, 16);
        let mut opt = OptimizerState::new(net.policy.dim(), net.value.dim());
        let d = update_agent(&mut net, &batch, method, &mut opt, &cfg(beta), 1e-3).unwrap();
        (net, d)
    }

    #[test]
    fn endpoint_equivalences_are_bit_exact() {
        for seed in 0..5 {
            let (col, dc) = run(Method::Col, 0.3, seed);
            let (w1, dw1) = run(Method::Weighted, 1.0, seed);
            assert_eq!(dc.combine.direction, dw1.combine.direction);
            assert_eq!(col, w1);
            let (ind, di) = run(Method::Ind, 0.3, seed);
            let (w0, dw0) = run(Method::Weighted, 0.0, seed);
            assert_eq!(di.combine.direction, dw0.combine.direction);
            assert_eq!(ind, w0);
        }
    }

    #[test]
    fn every_method_runs_and_records_conflict() {
        for m in Method::ALL {
            let (net, d) = run(m, 0.5, 7);
            assert!(net.policy.is_finite());
            let (_, col) = run(Method::Col, 0.5, 7);
            assert_eq!(d.conflict, col.conflict, "{m}");
            assert_eq!(d.fcgrad_branch, col.fcgrad_branch);
        }
    }

    /// Nearly flips the collective advantages so the two surrogate gradients
    /// conflict without being collinear, then sets returns so v_col > v_ind.
    #[test]
    fn crafted_conflict_takes_ind_projection_branch() {
        let net0 = tiny_net(5);
        let mut batch = tiny_batch(&net0, 5, 16);
        let a = batch.advantages.as_mut().unwrap();
        a.adv_col = a.adv_ind.iter().enumerate().map(|(t, x)| -x + 0.3 * (t as f64).sin()).collect();
        a.emp_ind = vec![0.0; 16];
        a.emp_col = vec![1.0; 16];
        let c = UpdateConfig {
            entropy_coef: 0.0,
            ..cfg(0.5)
        };
        let mut net = net0.clone();
        let mut opt = OptimizerState::new(net.policy.dim(), net.value.dim());
        let d = update_agent(&mut net, &batch, Method::FCGrad, &mut opt, &c, 1e-3).unwrap();
        assert!(d.conflict);
        assert_eq!(d.combine.branch, Branch::ProjectIndOntoColNormal);
        assert!(d.combine.direction.norm() > 0.0);
    }

    #[test]
    fn zero_advantages_leave_policy_unchanged_over_two_epochs() {
        let mut net = tiny_net(9);
        let mut batch = tiny_batch(&net, 9, 16);
        let a = batch.advantages.as_mut().unwrap();
        a.adv_ind = vec![0.0; 16];
        a.adv_col = vec![0.0; 16];
        let c = UpdateConfig {
            entropy_coef: 0.0,
            ..cfg(0.5)
        };
        let before = net.policy.clone();
        let mut opt = OptimizerState::new(net.policy.dim(), net.value.dim());
        for _ in 0..2 {
            for m in [Method::FCGrad, Method::Col, Method::PCGrad] {
                update_agent(&mut net, &batch, m, &mut opt, &c, 1e-2).unwrap();
            }
        }
        assert_eq!(net.policy, before);
    }

    #[test]
    fn mismatched_optimizer_state() {
        let mut net = tiny_net(0);
        let batch = tiny_batch(&net, 0, 4);
        let mut opt = OptimizerState::new(3, 3);
        assert!(matches!(
            update_agent(&mut net, &batch, Method::Col, &mut opt, &cfg(0.5), 1e-3),
            Err(AgentError::Shape(_))
        ));
    }

    #[test]
    fn critic_value_source() {
        let mut net = tiny_net(1);
        let batch = tiny_batch(&net, 1, 8);
        let mut opt = OptimizerState::new(net.policy.dim(), net.value.dim());
        let c = UpdateConfig {
            value_source: ValueSource::Critic,
            ..cfg(0.5)
        };
        let d = update_agent(&mut net, &batch, Method::FCGrad, &mut opt, &c, 1e-3).unwrap();
        assert_eq!((d.v_ind, d.v_col), batch.critic_values().unwrap());
    }
}
