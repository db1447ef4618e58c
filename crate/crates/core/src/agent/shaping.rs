use super::AgentError;

/// Inequity-aversion reward shaping. `alpha_ia` weighs disadvantageous gaps,
/// `beta_ia` advantageous ones, each averaged over the other agents.
pub fn inequity_aversion_shape(
    rewards: &[f64],
    alpha_ia: f64,
    beta_ia: f64,
) -> Result<Vec<f64>, AgentError> {
    let n = rewards.len();
    if n < 2 {
        return Err(AgentError::Invalid(format!(
            "inequity aversion needs at least 2 agents, got {n}"
        )));
    }
    let k = 1.0 / (n - 1) as f64;
    Ok(rewards
        .iter()
        .map(|&ri| {
            let (mut envy, mut guilt) = (0.0, 0.0);
            for &rj in rewards {
                envy += (rj - ri).max(0.0);
                guilt += (ri - rj).max(0.0);
            }
            ri - alpha_ia * k * envy - beta_ia * k * guilt
        })
        .collect())
}
