//! Per-chunk QoE reward with quality, quality-step, bonus, penalty and
//! energy terms, plus the exhaustive per-chunk oracle.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{check_level, ChunkRecord, FrameRateLadder, VideoTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoEProfile {
    pub name: String,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub bonus_threshold: f64,
    pub bonus_value: f64,
    pub penalty_threshold: f64,
    pub penalty_value: f64,
}

impl QoEProfile {
    /// Quality-first preset.
    pub fn qoe_q() -> Self {
        Self {
            name: "qoe_q".into(),
            mu1: 7.0,
            mu2: 2.5,
            mu3: 14.0,
            bonus_threshold: 98.0,
            bonus_value: 5.0,
            penalty_threshold: 90.0,
            penalty_value: 15.0,
        }
    }

    /// Battery-first preset.
    pub fn qoe_b() -> Self {
        Self {
            name: "qoe_b".into(),
            mu1: 4.0,
            mu2: 2.0,
            mu3: 17.0,
            bonus_threshold: 98.0,
            bonus_value: 2.0,
            penalty_threshold: 85.0,
            penalty_value: 15.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "qoe_q" => Ok(Self::qoe_q()),
            "qoe_b" => Ok(Self::qoe_b()),
            other => Err(Error::UnknownProfile(other.to_string())),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let profile: QoEProfile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        profile.validate()?;
        Ok(profile)
    }

    /// A preset name, or else a path to a profile JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::preset(name_or_path) {
            Ok(p) => Ok(p),
            Err(_) if Path::new(name_or_path).exists() => Self::load(name_or_path),
            Err(e) => Err(e),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.mu1, self.mu2, self.mu3]
            .iter()
            .any(|mu| !(mu.is_finite() && *mu >= 0.0))
        {
            return Err(Error::invalid(
                "mu",
                None,
                "scaling factors must be finite and >= 0",
            ));
        }
        for (field, t) in [
            ("bonus_threshold", self.bonus_threshold),
            ("penalty_threshold", self.penalty_threshold),
        ] {
            if !(0.0..=100.0).contains(&t) {
                return Err(Error::invalid(
                    field,
                    None,
                    "threshold must lie in [0, 100]",
                ));
            }
        }
        if !(self.penalty_value.is_finite() && self.penalty_value >= 0.0)
            || !self.bonus_value.is_finite()
        {
            return Err(Error::invalid(
                "penalty_value",
                None,
                "bonus/penalty must be finite, penalty >= 0",
            ));
        }
        Ok(())
    }
}

/// Weighted reward terms for one chunk; `total` combines them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub quality_term: f64,
    pub quality_diff_term: f64,
    pub bonus: f64,
    pub penalty: f64,
    pub energy_term: f64,
    pub total: f64,
}

pub fn chunk_reward(
    chunk: &ChunkRecord,
    level: usize,
    profile: &QoEProfile,
    ladder: &FrameRateLadder,
) -> Result<RewardBreakdown> {
    let m = chunk.levels();
    check_level(level, m)?;
    if ladder.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            got: ladder.len(),
        });
    }
    let quality = chunk.quality_by_level[level - 1];
    let quality_diff = if level > 1 {
        quality - chunk.quality_by_level[level - 2]
    } else {
        0.0
    };
    let quality_term = profile.mu1 * quality / 100.0;
    let quality_diff_term = profile.mu2 * quality_diff / 100.0;
    let bonus = if quality >= profile.bonus_threshold {
        profile.bonus_value
    } else {
        0.0
    };
    let penalty = if quality < profile.penalty_threshold {
        profile.penalty_value
    } else {
        0.0
    };
    let energy_term = profile.mu3 * ladder.ratio(level)?;
    Ok(RewardBreakdown {
        quality_term,
        quality_diff_term,
        bonus,
        penalty,
        energy_term,
        total: quality_term + quality_diff_term + bonus - penalty - energy_term,
    })
}

pub fn episode_reward(trace: &VideoTrace, levels: &[usize], profile: &QoEProfile) -> Result<f64> {
    if levels.len() != trace.n_chunks() {
        return Err(Error::LengthMismatch {
            expected: trace.n_chunks(),
            got: levels.len(),
        });
    }
    let ladder = trace.ladder()?;
    trace
        .chunks
        .iter()
        .zip(levels)
        .map(|(c, &l)| chunk_reward(c, l, profile, &ladder).map(|r| r.total))
        .sum()
}

/// Best level for one chunk; ties go to the lower level.
pub fn best_level(
    chunk: &ChunkRecord,
    profile: &QoEProfile,
    ladder: &FrameRateLadder,
) -> Result<usize> {
    let mut best = (1, f64::NEG_INFINITY);
    for level in 1..=chunk.levels() {
        let total = chunk_reward(chunk, level, profile, ladder)?.total;
        if total > best.1 {
            best = (level, total);
        }
    }
    Ok(best.0)
}

/// Per-chunk argmax of the reward. Exact episode optimum because no reward
/// term depends on another chunk's action.
pub fn greedy_oracle(trace: &VideoTrace, profile: &QoEProfile) -> Result<Vec<usize>> {
    let ladder = trace.ladder()?;
    trace
        .chunks
        .iter()
        .map(|c| best_level(c, profile, &ladder))
        .collect()
}
