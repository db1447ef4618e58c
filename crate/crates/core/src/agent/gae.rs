use super::AgentError;

fn check(len: usize, others: &[usize], gamma: f64, lambda: f64) -> Result<(), AgentError> {
    if others.iter().any(|&l| l != len) {
        return Err(AgentError::Shape(format!(
            "misaligned sequences: {len} vs {others:?}"
        )));
    }
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(AgentError::Invalid(format!(
            "gamma {gamma} and lambda {lambda} must lie in [0,1]"
        )));
    }
    Ok(())
}

/// Generalised advantage estimation. `done[t]` marks the last step of an
/// episode; `bootstrap` is the value after the final step when it is not
/// terminal. Returns `(advantages, advantages + values)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
    done: &[bool],
) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
    let n = rewards.len();
    check(n, &[values.len(), done.len()], gamma, lambda)?;
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if done[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Discounted reward-to-go within each episode segment.
pub fn discounted_returns(
    rewards: &[f64],
    gamma: f64,
    done: &[bool],
    bootstrap: f64,
) -> Result<Vec<f64>, AgentError> {
    check(rewards.len(), &[done.len()], gamma, 0.0)?;
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        if done[t] {
            acc = 0.0;
        }
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    Ok(out)
}
