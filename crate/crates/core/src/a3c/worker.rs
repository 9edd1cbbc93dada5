use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::a3c::advantage::{n_step_returns, ExperienceSample};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::features::{NormalizationStats, StateObservation};
use crate::nn::{
    actor_output_grad, backward, critic_output_grad, entropy, forward, forward_from_prefix,
    vector_prefix, Gradients, NetInput, NetworkParams,
};
use crate::reward::QoEProfile;
use crate::trace::VideoTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Draw from π(·|s).
    Stochastic,
    /// Always take the most probable action (test hook).
    Greedy,
}

/// Samples a 1-based action from a probability vector.
pub fn sample_action(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i + 1;
        }
    }
    // rounding left u above the cumulative sum; take the last non-zero entry
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
        + 1
}

/// 1-based argmax; ties go to the lower level.
pub fn argmax_action(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best + 1
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub samples: Vec<ExperienceSample>,
    /// State after the last sample when the episode continues.
    pub bootstrap: Option<StateObservation>,
}

/// Steps `env` from `obs` for at most `rollout_len` chunks, stopping early at
/// the end of the episode.
pub fn worker_rollout(
    env: &mut Env,
    obs: StateObservation,
    actor: &NetworkParams,
    rollout_len: usize,
    rng: &mut impl Rng,
    mode: SamplingMode,
) -> Result<Rollout> {
    let rollout_len = rollout_len.max(1);
    let ahead = env.lookahead(rollout_len)?;
    if ahead.is_empty() {
        return Err(Error::EpisodeFinished);
    }
    let inputs: Vec<NetInput<'_>> = ahead.iter().map(NetInput::from).collect();
    let prefix = vector_prefix(actor, &inputs)?;
    let mut samples = Vec::with_capacity(rollout_len);
    let mut current = obs;
    for (i, upcoming) in ahead.iter().enumerate() {
        debug_assert_eq!(upcoming.vectors(), current.vectors());
        let probs = forward_from_prefix(actor, &prefix, i, &current.scalars())?;
        let action = match mode {
            SamplingMode::Stochastic => sample_action(&probs, rng),
            SamplingMode::Greedy => argmax_action(&probs),
        };
        let step = env.step(action)?;
        if !step.reward.is_finite() {
            return Err(Error::invalid(
                "reward",
                Some(env.cursor() - 1),
                "non-finite reward",
            ));
        }
        let next = step.next_obs;
        samples.push(ExperienceSample {
            obs: current,
            action,
            reward: step.reward,
            is_terminal: step.done,
        });
        match next {
            Some(n) => current = n,
            None => {
                return Ok(Rollout {
                    samples,
                    bootstrap: None,
                })
            }
        }
    }
    Ok(Rollout {
        samples,
        bootstrap: Some(current),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub mean_advantage: f64,
    pub mean_entropy: f64,
    pub value_loss: f64,
    pub mean_reward: f64,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct Update {
    /// Ascent direction.
    pub actor: Gradients,
    /// Descent direction.
    pub critic: Gradients,
    pub stats: UpdateStats,
}

/// Summed actor and critic gradients over one rollout. Critic targets are
/// the n-step returns; the actor objective is
/// `Σ_t [A_t · ln π(a_t|s_t) + β · H(π(·|s_t))]`.
pub fn compute_update(
    rollout: &Rollout,
    actor: &NetworkParams,
    critic: &NetworkParams,
    gamma: f64,
    beta: f64,
) -> Result<Update> {
    let samples = &rollout.samples;
    if samples.is_empty() {
        return Err(Error::ShapeMismatch("empty rollout".into()));
    }
    let k = samples.len();

    let mut critic_inputs: Vec<NetInput<'_>> =
        samples.iter().map(|s| NetInput::from(&s.obs)).collect();
    if let Some(b) = &rollout.bootstrap {
        critic_inputs.push(NetInput::from(b));
    }
    let critic_trace = forward(critic, &critic_inputs)?;
    let all_values = critic_trace.values();
    let bootstrap_value = if rollout.bootstrap.is_some() {
        all_values[k]
    } else {
        0.0
    };
    let values = &all_values[..k];
    let returns = n_step_returns(samples, bootstrap_value, gamma);
    let advantages: Vec<f64> = returns.iter().zip(values).map(|(r, v)| r - v).collect();

    let actor_inputs: Vec<NetInput<'_>> = samples.iter().map(|s| NetInput::from(&s.obs)).collect();
    let actor_trace = forward(actor, &actor_inputs)?;
    let actions: Vec<usize> = samples.iter().map(|s| s.action).collect();
    let d_actor = actor_output_grad(&actor_trace, &actions, &advantages, beta)?;
    let actor_grads = backward(actor, &actor_trace, &d_actor)?;

    // the bootstrap row only supplies V(s_{t+k}); it gets no gradient
    let mut targets = returns.clone();
    if rollout.bootstrap.is_some() {
        targets.push(bootstrap_value);
    }
    let d_critic = critic_output_grad(&critic_trace, &targets)?;
    let critic_grads = backward(critic, &critic_trace, &d_critic)?;

    if !actor_grads.is_finite() || !critic_grads.is_finite() {
        return Err(Error::NonFiniteGradient { iteration: None });
    }

    let probs = actor_trace.probs().expect("actor trace");
    let mean_entropy = probs
        .rows()
        .into_iter()
        .map(|r| entropy(r.as_slice().expect("row-major")))
        .sum::<f64>()
        / k as f64;
    let kf = k as f64;
    let stats = UpdateStats {
        mean_advantage: advantages.iter().sum::<f64>() / kf,
        mean_entropy,
        value_loss: advantages.iter().map(|a| a * a).sum::<f64>() / kf,
        mean_reward: samples.iter().map(|s| s.reward).sum::<f64>() / kf,
        samples: k,
    };
    Ok(Update {
        actor: actor_grads,
        critic: critic_grads,
        stats,
    })
}

/// Immutable parameter snapshot published by the central store.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub actor: Arc<NetworkParams>,
    pub critic: Arc<NetworkParams>,
    /// Global iterations applied before this snapshot.
    pub version: u64,
    pub beta: f64,
}

/// A learning agent: owns an environment cursor and a seeded generator.
pub(crate) struct Worker {
    pub id: usize,
    traces: Arc<Vec<Arc<VideoTrace>>>,
    profile: Arc<QoEProfile>,
    norm: NormalizationStats,
    rng: ChaCha8Rng,
    episode: Option<(Env, StateObservation)>,
    rollout_len: usize,
    gamma: f64,
}

impl Worker {
    pub fn new(
        id: usize,
        traces: Arc<Vec<Arc<VideoTrace>>>,
        profile: Arc<QoEProfile>,
        norm: NormalizationStats,
        seed: u64,
        rollout_len: usize,
        gamma: f64,
    ) -> Self {
        Self {
            id,
            traces,
            profile,
            norm,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(id as u64)),
            episode: None,
            rollout_len,
            gamma,
        }
    }

    pub fn work(&mut self, snapshot: &Snapshot) -> Result<Update> {
        let (mut env, obs) = match self.episode.take() {
            Some(ep) => ep,
            None => {
                let pick = self.rng.random_range(0..self.traces.len());
                Env::reset(self.traces[pick].clone(), self.profile.clone(), self.norm)?
            }
        };
        let rollout = worker_rollout(
            &mut env,
            obs,
            &snapshot.actor,
            self.rollout_len,
            &mut self.rng,
            SamplingMode::Stochastic,
        )?;
        if let Some(next) = &rollout.bootstrap {
            self.episode = Some((env, next.clone()));
        }
        compute_update(
            &rollout,
            &snapshot.actor,
            &snapshot.critic,
            self.gamma,
            snapshot.beta,
        )
    }
}
