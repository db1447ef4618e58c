use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::gradcore::ParamVector;

/// Adaptive-moment optimiser with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(dim: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Moves `params` along `+grad` when `ascent`, else along `-grad`.
    pub fn step(
        &mut self,
        params: &mut ParamVector,
        grad: &ParamVector,
        lr: f64,
        ascent: bool,
    ) -> Result<(), AgentError> {
        if params.dim() != self.dim() || grad.dim() != self.dim() {
            return Err(AgentError::Shape(format!(
                "optimizer state has dimension {}, params {}, gradient {}",
                self.dim(),
                params.dim(),
                grad.dim()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let sign = if ascent { 1.0 } else { -1.0 };
        let p = params.as_mut_slice();
        for i in 0..p.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            p[i] += sign * lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Separate moment estimates for the policy and value parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub policy: Adam,
    pub value: Adam,
}

impl OptimizerState {
    pub fn new(policy_dim: usize, value_dim: usize) -> Self {
        OptimizerState {
            policy: Adam::new(policy_dim),
            value: Adam::new(value_dim),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut a = Adam::new(2);
        let mut p = ParamVector::new(vec![0.0, 0.0]).unwrap();
        let g = ParamVector::new(vec![3.0, -0.5]).unwrap();
        a.step(&mut p, &g, 0.1, true).unwrap();
        assert!((p[0] - 0.1).abs() < 1e-8);
        assert!((p[1] + 0.1).abs() < 1e-8);
        a.step(&mut p, &g, 0.1, false).unwrap();
        assert!(p[0].abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut a = Adam::new(3);
        let mut p = ParamVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        let before = p.clone();
        for _ in 0..4 {
            a.step(&mut p, &ParamVector::zeros(3), 0.5, true).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn dimension_mismatch() {
        let mut a = Adam::new(2);
        let mut p = ParamVector::zeros(3);
        assert!(a.step(&mut p, &ParamVector::zeros(3), 0.1, true).is_err());
    }
}
