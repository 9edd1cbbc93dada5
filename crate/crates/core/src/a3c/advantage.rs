use crate::error::{Error, Result};
use crate::features::StateObservation;

/// One transition shipped from a worker: `(s_t, a_t, r_t)` plus whether
/// `s_{t+1}` ended the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceSample {
    pub obs: StateObservation,
    /// 1-based level.
    pub action: usize,
    pub reward: f64,
    pub is_terminal: bool,
}

/// n-step discounted returns `Σ_{i<k} γ^i r_{t+i} + γ^k · bootstrap`, where
/// `k` runs to the end of the rollout. A terminal sample cuts the
/// bootstrap chain.
pub fn n_step_returns(samples: &[ExperienceSample], bootstrap_value: f64, gamma: f64) -> Vec<f64> {
    let mut running = bootstrap_value;
    let mut out = vec![0.0; samples.len()];
    for (t, sample) in samples.iter().enumerate().rev() {
        if sample.is_terminal {
            running = 0.0;
        }
        running = sample.reward + gamma * running;
        out[t] = running;
    }
    out
}

/// `A_t = n-step return − V(s_t)`.
pub fn n_step_advantages(
    samples: &[ExperienceSample],
    bootstrap_value: f64,
    values: &[f64],
    gamma: f64,
) -> Result<Vec<f64>> {
    if values.len() != samples.len() {
        return Err(Error::LengthMismatch {
            expected: samples.len(),
            got: values.len(),
        });
    }
    Ok(n_step_returns(samples, bootstrap_value, gamma)
        .into_iter()
        .zip(values)
        .map(|(ret, v)| ret - v)
        .collect())
}
