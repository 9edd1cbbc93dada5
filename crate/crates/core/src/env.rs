//! Chunk-level MDP over a single trace.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{assemble_state, NormalizationStats, StateObservation};
use crate::reward::{chunk_reward, QoEProfile};
use crate::trace::{check_level, FrameRateLadder, VideoTrace};

#[derive(Debug, Clone)]
pub struct Env {
    trace: Arc<VideoTrace>,
    ladder: FrameRateLadder,
    profile: Arc<QoEProfile>,
    norm: NormalizationStats,
    cursor: usize,
    last_level: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub reward: f64,
    pub next_obs: Option<StateObservation>,
    pub done: bool,
}

impl Env {
    /// Starts an episode at chunk 0 with the previous decision set to the
    /// original frame rate (top level).
    pub fn reset(
        trace: Arc<VideoTrace>,
        profile: Arc<QoEProfile>,
        norm: NormalizationStats,
    ) -> Result<(Self, StateObservation)> {
        let ladder = trace.ladder()?;
        let env = Env {
            last_level: ladder.len(),
            trace,
            ladder,
            profile,
            norm,
            cursor: 0,
        };
        let obs = env.observe()?;
        Ok((env, obs))
    }

    fn observe(&self) -> Result<StateObservation> {
        assemble_state(&self.trace, self.cursor, self.last_level, &self.norm)
    }

    pub fn step(&mut self, action: usize) -> Result<Step> {
        if self.done() {
            return Err(Error::EpisodeFinished);
        }
        check_level(action, self.ladder.len())?;
        let chunk = &self.trace.chunks[self.cursor];
        let reward = chunk_reward(chunk, action, &self.profile, &self.ladder)?.total;
        self.last_level = action;
        self.cursor += 1;
        let done = self.done();
        let next_obs = if done { None } else { Some(self.observe()?) };
        Ok(Step {
            reward,
            next_obs,
            done,
        })
    }

    /// Observations for the next `k` chunks (fewer near the end), assuming
    /// the previous decision stays at the current level. Only the
    /// last-level input of each differs from what `step` will return.
    pub fn lookahead(&self, k: usize) -> Result<Vec<StateObservation>> {
        let end = (self.cursor + k).min(self.trace.n_chunks());
        (self.cursor..end)
            .map(|i| assemble_state(&self.trace, i, self.last_level, &self.norm))
            .collect()
    }

    pub fn done(&self) -> bool {
        self.cursor == self.trace.n_chunks()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn last_level(&self) -> usize {
        self.last_level
    }

    pub fn levels(&self) -> usize {
        self.ladder.len()
    }

    pub fn trace(&self) -> &Arc<VideoTrace> {
        &self.trace
    }

    pub fn profile(&self) -> &QoEProfile {
        &self.profile
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub chunks_per_sec: f64,
    pub simulated_hours_per_minute: f64,
    pub steps: u64,
    pub wall_seconds: f64,
}

/// Runs uniformly random policies over random traces for the given budget.
pub fn throughput_benchmark(
    dataset: &[VideoTrace],
    budget: Duration,
    seed: u64,
) -> Result<ThroughputReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let norm = crate::features::compute_norm_stats(dataset)?;
    let traces: Vec<Arc<VideoTrace>> = dataset.iter().cloned().map(Arc::new).collect();
    let profile = Arc::new(QoEProfile::qoe_q());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let start = Instant::now();
    let mut steps = 0u64;
    let mut simulated = 0.0;
    while start.elapsed() < budget {
        let trace = traces[rng.random_range(0..traces.len())].clone();
        let duration = trace.chunk_duration_s;
        let (mut env, _) = Env::reset(trace, profile.clone(), norm)?;
        loop {
            let action = rng.random_range(1..=env.levels());
            let step = env.step(action)?;
            steps += 1;
            simulated += duration;
            if step.done {
                break;
            }
        }
    }
    let wall = start.elapsed().as_secs_f64();
    Ok(ThroughputReport {
        chunks_per_sec: steps as f64 / wall,
        simulated_hours_per_minute: (simulated / 3600.0) / (wall / 60.0),
        steps,
        wall_seconds: wall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::compute_norm_stats;
    use crate::reward::episode_reward;
    use crate::trace::{generate_synthetic, MotionProfile};

    fn setup(n: usize) -> (Arc<VideoTrace>, Arc<QoEProfile>, NormalizationStats) {
        let t = generate_synthetic(MotionProfile::Hybrid { switch_period: 1 }, n, 4).unwrap();
        let norm = compute_norm_stats(std::slice::from_ref(&t)).unwrap();
        (Arc::new(t), Arc::new(QoEProfile::qoe_b()), norm)
    }

    #[test]
    fn reset_starts_at_top_level() {
        let (t, p, n) = setup(3);
        let (env, obs) = Env::reset(t.clone(), p.clone(), n).unwrap();
        assert_eq!(obs.phi, 1.0);
        assert_eq!(obs.delta, 1.0);
        assert_eq!(env.cursor(), 0);
        let (_, again) = Env::reset(t, p, n).unwrap();
        assert_eq!(obs, again);
    }

    #[test]
    fn single_chunk_episode() {
        let (t, p, n) = setup(1);
        let (mut env, _) = Env::reset(t, p, n).unwrap();
        let s = env.step(2).unwrap();
        assert!(s.done);
        assert!(s.next_obs.is_none());
        assert!(matches!(env.step(2), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn step_rewards_sum_to_episode_reward() {
        let (t, p, n) = setup(3);
        let actions = [2, 5, 1];
        let (mut env, _) = Env::reset(t.clone(), p.clone(), n).unwrap();
        let total: f64 = actions.iter().map(|&a| env.step(a).unwrap().reward).sum();
        assert!((total - episode_reward(&t, &actions, &p).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn action_is_fed_back_as_phi() {
        let (t, p, n) = setup(3);
        let (mut env, _) = Env::reset(t, p, n).unwrap();
        let s = env.step(2).unwrap();
        assert_eq!(s.next_obs.unwrap().phi, 0.4);
        assert!(matches!(env.step(0), Err(Error::LevelOutOfRange { .. })));
        assert!(matches!(env.step(6), Err(Error::LevelOutOfRange { .. })));
    }

    #[test]
    fn benchmark_reports_positive_rate() {
        let (t, _, _) = setup(4);
        let r = throughput_benchmark(&[(*t).clone()], Duration::from_millis(50), 0).unwrap();
        assert!(r.chunks_per_sec > 0.0);
        assert!(r.simulated_hours_per_minute > 0.0);
        let json = serde_json::to_value(r).unwrap();
        assert!(json.get("simulated_hours_per_minute").is_some());
        assert!(throughput_benchmark(&[], Duration::from_millis(1), 0).is_err());
    }
}
