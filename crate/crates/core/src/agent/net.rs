//! Shared-encoder policy network with a softmax policy head and two scalar
//! value heads (individual and collective return).
//!
//! Parameters live in two flat vectors. `policy` holds, in order:
//! encoder weights (`hidden x obs_dim`, row-major), encoder bias (`hidden`),
//! policy weights (`n_actions x hidden`, row-major), policy bias
//! (`n_actions`). `value` holds: individual head weights (`hidden`), its bias,
//! collective head weights (`hidden`), its bias. The value heads read the
//! encoder features but their gradients stop there, so the encoder is shaped
//! by the policy objective only.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AgentError;
use crate::gradcore::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub obs_dim: usize,
    pub hidden: usize,
    pub n_actions: usize,
}

impl NetShape {
    pub fn policy_len(&self) -> usize {
        self.hidden * self.obs_dim + self.hidden + self.n_actions * self.hidden + self.n_actions
    }

    pub fn value_len(&self) -> usize {
        2 * (self.hidden + 1)
    }

    /// Human-readable description of the flattening order.
    pub fn order_descriptor(&self) -> String {
        let (o, h, a) = (self.obs_dim, self.hidden, self.n_actions);
        format!(
            "policy[enc.w:{h}x{o},enc.b:{h},pol.w:{a}x{h},pol.b:{a}];\
             value[ind.w:{h},ind.b:1,col.w:{h},col.b:1]"
        )
    }

    /// First eight bytes (little-endian) of the SHA-256 of the descriptor.
    pub fn order_hash(&self) -> u64 {
        let digest = Sha256::digest(self.order_descriptor().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    fn enc_w(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.obs_dim
    }
    fn enc_b(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.obs_dim;
        s..s + self.hidden
    }
    fn pol_w(&self) -> std::ops::Range<usize> {
        let s = self.enc_b().end;
        s..s + self.n_actions * self.hidden
    }
    fn pol_b(&self) -> std::ops::Range<usize> {
        let s = self.pol_w().end;
        s..s + self.n_actions
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    pub shape: NetShape,
    pub policy: ParamVector,
    pub value: ParamVector,
}

/// Batched forward pass, kept for backpropagation.
pub struct Forward {
    pub hidden: Array2<f64>,
    pub probs: Array2<f64>,
    pub v_ind: Array1<f64>,
    pub v_col: Array1<f64>,
}

/// Single-observation output.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub probs: Vec<f64>,
    pub v_ind: f64,
    pub v_col: f64,
}

impl PolicyNetwork {
    /// Uniform Glorot encoder, near-zero policy head, zero value heads.
    pub fn init(shape: NetShape, rng: &mut impl rand::Rng) -> Self {
        let mut policy = vec![0.0; shape.policy_len()];
        let limit = (6.0 / (shape.obs_dim + shape.hidden) as f64).sqrt();
        for w in &mut policy[shape.enc_w()] {
            *w = rng.gen_range(-limit..limit);
        }
        let limit = 0.01 * (6.0 / (shape.hidden + shape.n_actions) as f64).sqrt();
        for w in &mut policy[shape.pol_w()] {
            *w = rng.gen_range(-limit..limit);
        }
        PolicyNetwork {
            shape,
            policy: ParamVector::from_vec_unchecked(policy),
            value: ParamVector::zeros(shape.value_len()),
        }
    }

    pub fn from_params(
        shape: NetShape,
        policy: ParamVector,
        value: ParamVector,
    ) -> Result<Self, AgentError> {
        if policy.dim() != shape.policy_len() || value.dim() != shape.value_len() {
            return Err(AgentError::Shape(format!(
                "parameter lengths ({}, {}) do not match shape {:?}",
                policy.dim(),
                value.dim(),
                shape
            )));
        }
        Ok(PolicyNetwork {
            shape,
            policy,
            value,
        })
    }

    pub fn with_policy(&self, policy: ParamVector) -> Self {
        PolicyNetwork {
            shape: self.shape,
            policy,
            value: self.value.clone(),
        }
    }

    /// Policy parameters followed by value parameters.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.policy.as_slice().to_vec();
        v.extend_from_slice(&self.value);
        v
    }

    pub fn unflatten(shape: NetShape, flat: &[f64]) -> Result<Self, AgentError> {
        let p = shape.policy_len();
        if flat.len() != p + shape.value_len() {
            return Err(AgentError::Shape(format!(
                "flat length {} does not match {}",
                flat.len(),
                p + shape.value_len()
            )));
        }
        Self::from_params(
            shape,
            ParamVector::new(flat[..p].to_vec())?,
            ParamVector::new(flat[p..].to_vec())?,
        )
    }

    fn enc_w(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.shape.hidden, self.shape.obs_dim), &self.policy.as_slice()[self.shape.enc_w()])
            .unwrap()
    }
    fn enc_b(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.policy.as_slice()[self.shape.enc_b()])
    }
    fn pol_w(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.shape.n_actions, self.shape.hidden), &self.policy.as_slice()[self.shape.pol_w()])
            .unwrap()
    }
    fn pol_b(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.policy.as_slice()[self.shape.pol_b()])
    }
    fn head(&self, which: usize) -> (ArrayView1<'_, f64>, f64) {
        let h = self.shape.hidden;
        let off = which * (h + 1);
        (ArrayView1::from(&self.value.as_slice()[off..off + h]), self.value[off + h])
    }

    /// Action probabilities and both value estimates for one observation.
    pub fn forward(&self, obs: &[f64]) -> Result<PolicyOutput, AgentError> {
        let NetShape {
            obs_dim,
            hidden,
            n_actions,
        } = self.shape;
        if obs.len() != obs_dim {
            return Err(AgentError::Shape(format!(
                "observation length {} != {obs_dim}",
                obs.len()
            )));
        }
        let p = self.policy.as_slice();
        let enc_w = &p[self.shape.enc_w()];
        let enc_b = &p[self.shape.enc_b()];
        let mut h = vec![0.0; hidden];
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &enc_w[j * obs_dim..(j + 1) * obs_dim];
            let mut z = enc_b[j];
            for (w, x) in row.iter().zip(obs) {
                if *x != 0.0 {
                    z += w * x;
                }
            }
            *hj = z.tanh();
        }
        let pol_w = &p[self.shape.pol_w()];
        let pol_b = &p[self.shape.pol_b()];
        let mut logits: Vec<f64> = (0..n_actions)
            .map(|a| {
                pol_b[a]
                    + pol_w[a * hidden..(a + 1) * hidden]
                        .iter()
                        .zip(&h)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
            })
            .collect();
        softmax_in_place(&mut logits);
        let v = self.value.as_slice();
        let head = |off: usize| v[off + hidden] + v[off..off + hidden].iter().zip(&h).map(|(w, x)| w * x).sum::<f64>();
        Ok(PolicyOutput {
            probs: logits,
            v_ind: head(0),
            v_col: head(hidden + 1),
        })
    }

    /// Batched forward pass over rows of `obs`.
    pub fn forward_batch(&self, obs: ArrayView2<'_, f64>) -> Result<Forward, AgentError> {
        if obs.ncols() != self.shape.obs_dim {
            return Err(AgentError::Shape(format!(
                "observation width {} != {}",
                obs.ncols(),
                self.shape.obs_dim
            )));
        }
        let mut hidden = obs.dot(&self.enc_w().t());
        hidden += &self.enc_b();
        hidden.mapv_inplace(f64::tanh);
        let mut probs = hidden.dot(&self.pol_w().t());
        probs += &self.pol_b();
        for mut row in probs.rows_mut() {
            softmax_in_place(row.as_slice_mut().unwrap());
        }
        let (wi, bi) = self.head(0);
        let (wc, bc) = self.head(1);
        let v_ind = hidden.dot(&wi) + bi;
        let v_col = hidden.dot(&wc) + bc;
        Ok(Forward {
            hidden,
            probs,
            v_ind,
            v_col,
        })
    }

    /// Gradient of `sum_t dlogits[t] . logits[t]` with respect to the policy
    /// parameters, i.e. backpropagation of a logit-space cotangent.
    pub(crate) fn backprop_logits(
        &self,
        obs: ArrayView2<'_, f64>,
        fwd: &Forward,
        dlogits: &Array2<f64>,
    ) -> ParamVector {
        let shape = self.shape;
        let mut grad = vec![0.0; shape.policy_len()];
        let d_pol_w = dlogits.t().dot(&fwd.hidden);
        let d_pol_b = dlogits.sum_axis(Axis(0));
        let mut dz = dlogits.dot(&self.pol_w());
        ndarray::Zip::from(&mut dz)
            .and(&fwd.hidden)
            .for_each(|d, &h| *d *= 1.0 - h * h);
        let d_enc_w = dz.t().dot(&obs);
        let d_enc_b = dz.sum_axis(Axis(0));
        grad[shape.enc_w()].copy_from_slice(d_enc_w.as_standard_layout().as_slice().unwrap());
        grad[shape.enc_b()].copy_from_slice(d_enc_b.as_slice().unwrap());
        grad[shape.pol_w()].copy_from_slice(d_pol_w.as_standard_layout().as_slice().unwrap());
        grad[shape.pol_b()].copy_from_slice(d_pol_b.as_slice().unwrap());
        ParamVector::from_vec_unchecked(grad)
    }

    /// Gradient with respect to the value parameters given per-sample
    /// cotangents on the two heads.
    pub(crate) fn backprop_values(
        &self,
        fwd: &Forward,
        d_ind: &Array1<f64>,
        d_col: &Array1<f64>,
    ) -> ParamVector {
        let h = self.shape.hidden;
        let mut grad = vec![0.0; self.shape.value_len()];
        for (off, d) in [(0, d_ind), (h + 1, d_col)] {
            let dw = fwd.hidden.t().dot(d);
            grad[off..off + h].copy_from_slice(dw.as_slice().unwrap());
            grad[off + h] = d.sum();
        }
        ParamVector::from_vec_unchecked(grad)
    }

    /// Rows `range` of the forward cache, used by tests.
    #[doc(hidden)]
    pub fn probs_rows(fwd: &Forward, range: std::ops::Range<usize>) -> Array2<f64> {
        fwd.probs.slice(s![range, ..]).to_owned()
    }
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Categorical draw from `probs`.
pub fn sample_action(probs: &[f64], rng: &mut impl rand::Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
