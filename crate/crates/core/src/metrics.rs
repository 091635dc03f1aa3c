//! Reward and rate summaries.

use crate::error::{Error, Result};

/// Running mean `r_a(t) = (1/t) Σ_{i≤t} r^i`.
pub fn metric_average_reward(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::InvalidArgument(
            "average reward of an empty log".into(),
        ));
    }
    let mut acc = 0.0;
    Ok(rewards
        .iter()
        .enumerate()
        .map(|(i, r)| {
            acc += r;
            acc / (i + 1) as f64
        })
        .collect())
}

/// `R_a = max(0, (T_c − T)/T_c) · R`: the rate left after `t_interact`
/// of every `t_c` slots are spent interacting with the channel.
pub fn metric_avg_achievable_rate(rate: f64, t_interact: f64, t_c: f64) -> Result<f64> {
    if !(t_c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "coherence time must be > 0, got {t_c}"
        )));
    }
    Ok(((t_c - t_interact) / t_c).max(0.0) * rate)
}
