use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::a3c::argmax_action;
use crate::env::Env;
use crate::error::{Error, Result};
use crate::features::{assemble_from_context, ChunkContext};
use crate::nn::{forward_from_prefix, vector_prefix, Checkpoint, Head, NetInput};
use crate::reward::QoEProfile;
use crate::trace::VideoTrace;

/// Maps a decision on a `source`-level ladder onto a `target`-level ladder:
/// `a' = clamp(round_half_up(target / source · a), 1, target)`.
pub fn transform_action(action: usize, source: usize, target: usize) -> Result<usize> {
    if target < 1 {
        return Err(Error::InvalidRange(
            "target level count must be >= 1".into(),
        ));
    }
    if source < 1 {
        return Err(Error::InvalidRange(
            "source level count must be >= 1".into(),
        ));
    }
    if action < 1 || action > source {
        return Err(Error::InvalidRange(format!(
            "action {action} outside [1, {source}]"
        )));
    }
    // floor(t·a/s + 1/2) in exact integer arithmetic
    let scaled = (2 * target * action + source) / (2 * source);
    Ok(scaled.clamp(1, target))
}

/// One chunk's worth of client-side features plus the decision context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub frame_diffs: Vec<f64>,
    pub sizes_by_level: Vec<u64>,
    #[serde(default)]
    pub prev_mean_diff: Option<f64>,
    #[serde(default)]
    pub next_mean_diff: Option<f64>,
    pub original_fps: u32,
    /// Previous decision on the model's ladder, 1-based.
    pub last_level: usize,
    pub qoe_profile_name: String,
    /// Number of levels the client can actually play; defaults to the model's.
    #[serde(default)]
    pub target_levels: Option<usize>,
}

impl DecisionRequest {
    /// The request the client would send for chunk `idx` of `trace`.
    pub fn from_trace(
        trace: &VideoTrace,
        idx: usize,
        last_level: usize,
        qoe_profile_name: &str,
    ) -> Result<Self> {
        let chunk = trace.chunks.get(idx).ok_or(Error::IndexOutOfRange {
            index: idx,
            len: trace.n_chunks(),
        })?;
        Ok(Self {
            frame_diffs: chunk.frame_diffs.clone(),
            sizes_by_level: chunk.sizes_by_level.clone(),
            prev_mean_diff: idx.checked_sub(1).map(|i| trace.chunks[i].mean_diff()),
            next_mean_diff: trace.chunks.get(idx + 1).map(|c| c.mean_diff()),
            original_fps: trace.original_fps,
            last_level,
            qoe_profile_name: qoe_profile_name.to_string(),
            target_levels: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// 1-based level on the target ladder.
    pub level: usize,
    pub fps_value: f64,
    /// π(·|s) over the model's levels.
    pub distribution: Vec<f64>,
}

fn model_levels(ckpt: &Checkpoint) -> Result<usize> {
    match ckpt.actor.topology().head {
        Head::Actor { actions } => Ok(actions),
        Head::Critic => Err(Error::ShapeMismatch(
            "checkpoint actor has a critic head".into(),
        )),
    }
}

/// Deterministic (argmax) decision for one chunk.
pub fn decide(ckpt: &Checkpoint, request: &DecisionRequest) -> Result<Decision> {
    if request.qoe_profile_name != ckpt.profile_name {
        return Err(Error::CheckpointMissing(request.qoe_profile_name.clone()));
    }
    let m = model_levels(ckpt)?;
    if request.sizes_by_level.len() != m {
        return Err(Error::BadRequest(format!(
            "sizes_by_level has {} entries, model expects {m}",
            request.sizes_by_level.len()
        )));
    }
    if request.original_fps == 0 {
        return Err(Error::BadRequest("original_fps must be positive".into()));
    }
    let target = request.target_levels.unwrap_or(m);
    let obs = assemble_from_context(
        &ChunkContext {
            frame_diffs: &request.frame_diffs,
            sizes_by_level: &request.sizes_by_level,
            prev_mean_diff: request.prev_mean_diff,
            next_mean_diff: request.next_mean_diff,
            original_fps: request.original_fps,
            last_level: request.last_level,
        },
        &ckpt.norm,
    )?;
    let prefix = vector_prefix(&ckpt.actor, &[NetInput::from(&obs)])?;
    let distribution = forward_from_prefix(&ckpt.actor, &prefix, 0, &obs.scalars())?;
    let raw = argmax_action(&distribution);
    let level = if target == m {
        raw
    } else {
        transform_action(raw, m, target)?
    };
    Ok(Decision {
        level,
        fps_value: request.original_fps as f64 * level as f64 / target as f64,
        distribution,
    })
}

/// Walks a whole trace with argmax decisions, feeding each one back as the
/// previous level of the next chunk.
pub fn schedule_video(
    ckpt: &Checkpoint,
    trace: &VideoTrace,
    profile: &QoEProfile,
) -> Result<Vec<usize>> {
    let m = model_levels(ckpt)?;
    if trace.levels() != m {
        return Err(Error::BadRequest(format!(
            "trace has {} levels, model expects {m}",
            trace.levels()
        )));
    }
    trace.validate()?;
    let (mut env, mut obs) = Env::reset(
        Arc::new(trace.clone()),
        Arc::new(profile.clone()),
        ckpt.norm,
    )?;
    let ahead = env.lookahead(trace.n_chunks())?;
    let inputs: Vec<NetInput<'_>> = ahead.iter().map(NetInput::from).collect();
    let prefix = vector_prefix(&ckpt.actor, &inputs)?;
    let mut levels = Vec::with_capacity(trace.n_chunks());
    loop {
        let probs = forward_from_prefix(&ckpt.actor, &prefix, env.cursor(), &obs.scalars())?;
        let level = argmax_action(&probs);
        levels.push(level);
        match env.step(level)?.next_obs {
            Some(next) => obs = next,
            None => return Ok(levels),
        }
    }
}
