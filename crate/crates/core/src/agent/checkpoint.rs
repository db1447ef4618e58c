//! Binary checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "FCGC"
//! version      u32
//! n_agents     u32
//! per agent:
//!   obs_dim, hidden, n_actions      u32 x 3
//!   order_hash                      u64  (NetShape::order_hash)
//!   policy_len, value_len           u64 x 2
//!   policy params                   f64 x policy_len
//!   value params                    f64 x value_len
//!   policy adam: t u64, m f64 x policy_len, v f64 x policy_len
//!   value adam:  t u64, m f64 x value_len,  v f64 x value_len
//! ```

use std::io::{Read, Write};

use super::{Adam, AgentError, NetShape, OptimizerState, PolicyNetwork};
use crate::gradcore::ParamVector;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FCGC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub net: PolicyNetwork,
    pub opt: OptimizerState,
}

fn put_u32(w: &mut impl Write, x: u32) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}
fn put_u64(w: &mut impl Write, x: u64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}
fn put_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
fn get_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
fn get_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

fn put_adam(w: &mut impl Write, a: &Adam) -> std::io::Result<()> {
    put_u64(w, a.t)?;
    put_f64s(w, &a.m)?;
    put_f64s(w, &a.v)
}

fn get_adam(r: &mut impl Read, n: usize) -> std::io::Result<Adam> {
    let mut a = Adam::new(n);
    a.t = get_u64(r)?;
    a.m = get_f64s(r, n)?;
    a.v = get_f64s(r, n)?;
    Ok(a)
}

pub fn write_checkpoint(w: &mut impl Write, agents: &[AgentState]) -> Result<(), AgentError> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    put_u32(w, agents.len() as u32)?;
    for a in agents {
        let s = a.net.shape;
        for d in [s.obs_dim, s.hidden, s.n_actions] {
            put_u32(w, d as u32)?;
        }
        put_u64(w, s.order_hash())?;
        put_u64(w, a.net.policy.dim() as u64)?;
        put_u64(w, a.net.value.dim() as u64)?;
        put_f64s(w, &a.net.policy)?;
        put_f64s(w, &a.net.value)?;
        if a.opt.policy.dim() != a.net.policy.dim() || a.opt.value.dim() != a.net.value.dim() {
            return Err(AgentError::Checkpoint("optimizer state does not match network".into()));
        }
        put_adam(w, &a.opt.policy)?;
        put_adam(w, &a.opt.value)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Vec<AgentState>, AgentError> {
    let bad = |m: String| AgentError::Checkpoint(m);
    let mut magic = [0; 4];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = get_u32(r)? as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let shape = NetShape {
            obs_dim: get_u32(r)? as usize,
            hidden: get_u32(r)? as usize,
            n_actions: get_u32(r)? as usize,
        };
        let hash = get_u64(r)?;
        if hash != shape.order_hash() {
            return Err(bad(format!("agent {i}: flattening order hash mismatch")));
        }
        let (pl, vl) = (get_u64(r)? as usize, get_u64(r)? as usize);
        if pl != shape.policy_len() || vl != shape.value_len() {
            return Err(bad(format!("agent {i}: parameter lengths do not match shape")));
        }
        let policy = ParamVector::new(get_f64s(r, pl)?)?;
        let value = ParamVector::new(get_f64s(r, vl)?)?;
        let net = PolicyNetwork::from_params(shape, policy, value)?;
        let opt = OptimizerState {
            policy: get_adam(r, pl)?,
            value: get_adam(r, vl)?,
        };
        out.push(AgentState { net, opt });
    }
    Ok(out)
}
