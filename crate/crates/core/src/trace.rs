//! Trace data model: per-video chunk records, the frame-rate ladder, JSON
//! (de)serialization, and a synthetic generator with known motion profiles.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEVELS: usize = 5;
pub const DEFAULT_CHUNK_SECONDS: f64 = 2.0;
pub const SUPPORTED_FPS: [u32; 3] = [24, 30, 60];

/// Quality surrogate scale and exponent: `Q = 100 - c * i * (1 - r)^e`.
pub const QUALITY_SCALE: f64 = 60.0;
pub const QUALITY_EXPONENT: f64 = 1.2;
/// Relative size of the lowest frame rate compared to the original.
pub const MIN_SIZE_FRACTION: f64 = 0.81;
pub const BASE_CHUNK_BYTES: f64 = 400_000.0;
pub const DIFF_NOISE_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub index: usize,
    pub frame_diffs: Vec<f64>,
    pub sizes_by_level: Vec<u64>,
    pub quality_by_level: Vec<f64>,
}

impl ChunkRecord {
    pub fn mean_diff(&self) -> f64 {
        self.frame_diffs.iter().sum::<f64>() / self.frame_diffs.len() as f64
    }

    pub fn diff_sum(&self) -> f64 {
        self.frame_diffs.iter().sum()
    }

    pub fn levels(&self) -> usize {
        self.quality_by_level.len()
    }

    /// Quality at a 1-based level.
    pub fn quality(&self, level: usize) -> Result<f64> {
        check_level(level, self.levels())?;
        Ok(self.quality_by_level[level - 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTrace {
    pub video_id: String,
    pub original_fps: u32,
    pub chunk_duration_s: f64,
    pub category_tag: String,
    pub chunks: Vec<ChunkRecord>,
}

impl VideoTrace {
    pub fn n_chunks(&self) -> usize {
        self.chunks.len()
    }

    /// Number of frame-rate levels (m). Assumes a validated trace.
    pub fn levels(&self) -> usize {
        self.chunks.first().map_or(0, ChunkRecord::levels)
    }

    pub fn ladder(&self) -> Result<FrameRateLadder> {
        FrameRateLadder::new(self.original_fps, self.levels())
    }

    /// Frames per chunk at the original frame rate.
    pub fn frames_per_chunk(&self) -> usize {
        (self.chunk_duration_s * self.original_fps as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_FPS.contains(&self.original_fps) {
            return Err(Error::invalid(
                "original_fps",
                None,
                format!("{} not in {:?}", self.original_fps, SUPPORTED_FPS),
            ));
        }
        if !(self.chunk_duration_s.is_finite() && self.chunk_duration_s > 0.0) {
            return Err(Error::invalid("chunk_duration_s", None, "must be positive"));
        }
        if self.chunks.is_empty() {
            return Err(Error::invalid("chunks", None, "trace has no chunks"));
        }
        let max_diffs = self.frames_per_chunk().saturating_sub(1);
        if max_diffs == 0 {
            return Err(Error::invalid(
                "chunk_duration_s",
                None,
                "chunk shorter than two frames",
            ));
        }
        let m = self.levels();
        if m < 2 {
            return Err(Error::invalid(
                "quality_by_level",
                Some(0),
                "need at least 2 levels",
            ));
        }
        for (pos, chunk) in self.chunks.iter().enumerate() {
            let at = Some(pos);
            if chunk.index != pos {
                return Err(Error::invalid(
                    "index",
                    at,
                    format!("expected {pos}, found {}", chunk.index),
                ));
            }
            let n = chunk.frame_diffs.len();
            if n == 0 || n > max_diffs {
                return Err(Error::invalid(
                    "frame_diffs",
                    at,
                    format!("length {n} outside [1, {max_diffs}]"),
                ));
            }
            if let Some(d) = chunk.frame_diffs.iter().find(|d| !(0.0..=1.0).contains(*d)) {
                return Err(Error::invalid(
                    "frame_diffs",
                    at,
                    format!("value {d} outside [0, 1]"),
                ));
            }
            if chunk.quality_by_level.len() != m || chunk.sizes_by_level.len() != m {
                return Err(Error::invalid(
                    "sizes_by_level",
                    at,
                    format!(
                        "expected {m} levels, found {} sizes and {} qualities",
                        chunk.sizes_by_level.len(),
                        chunk.quality_by_level.len()
                    ),
                ));
            }
            if let Some(q) = chunk
                .quality_by_level
                .iter()
                .find(|q| !(0.0..=100.0).contains(*q))
            {
                return Err(Error::invalid(
                    "quality_by_level",
                    at,
                    format!("value {q} outside [0, 100]"),
                ));
            }
            if chunk.quality_by_level.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::invalid(
                    "quality_by_level",
                    at,
                    "quality must be non-decreasing in level (monotonicity)",
                ));
            }
            if chunk.sizes_by_level.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::invalid(
                    "sizes_by_level",
                    at,
                    "sizes must be non-decreasing in level",
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_level(level: usize, m: usize) -> Result<()> {
    if level == 0 || level > m {
        return Err(Error::LevelOutOfRange { level, max: m });
    }
    Ok(())
}

/// The m selectable frame rates for a video, `original_fps * i / m` for `i = 1..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRateLadder {
    original_fps: f64,
    levels: Vec<f64>,
}

impl FrameRateLadder {
    pub fn new(original_fps: u32, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid(
                "levels",
                None,
                format!("ladder needs m >= 2, got {m}"),
            ));
        }
        if original_fps == 0 {
            return Err(Error::invalid("original_fps", None, "must be positive"));
        }
        let fps = original_fps as f64;
        let levels = (1..=m).map(|i| fps * i as f64 / m as f64).collect();
        Ok(Self {
            original_fps: fps,
            levels,
        })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn original_fps(&self) -> f64 {
        self.original_fps
    }

    /// Frame rate at a 1-based level.
    pub fn fps(&self, level: usize) -> Result<f64> {
        check_level(level, self.levels.len())?;
        Ok(self.levels[level - 1])
    }

    /// `fps(level) / original_fps`, in (0, 1].
    pub fn ratio(&self, level: usize) -> Result<f64> {
        Ok(self.fps(level)? / self.original_fps)
    }
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<VideoTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text)
}

pub fn parse_trace(text: &str) -> Result<VideoTrace> {
    let trace: VideoTrace = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    trace.validate()?;
    Ok(trace)
}

pub fn save_trace(trace: &VideoTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    trace.validate()?;
    let text = serde_json::to_string_pretty(trace).expect("trace serialization cannot fail");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Loads every `*.json` trace in a directory, sorted by file name.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<VideoTrace>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    paths.iter().map(load_trace).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionProfile {
    Static,
    Dynamic,
    /// Alternates static and dynamic blocks of `switch_period` chunks, starting static.
    Hybrid {
        switch_period: usize,
    },
}

impl MotionProfile {
    pub const DEFAULT_SWITCH_PERIOD: usize = 3;

    pub fn category(&self) -> &'static str {
        match self {
            MotionProfile::Static => "static",
            MotionProfile::Dynamic => "dynamic",
            MotionProfile::Hybrid { .. } => "hybrid",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            MotionProfile::Hybrid { switch_period: 0 } => Err(Error::InvalidProfile(
                "hybrid switch_period must be >= 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for MotionProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MotionProfile::Hybrid { switch_period } => write!(f, "hybrid:{switch_period}"),
            other => f.write_str(other.category()),
        }
    }
}

impl FromStr for MotionProfile {
    type Err = Error;

    /// Accepts `static`, `dynamic`, `hybrid` or `hybrid:<period>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, period) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let profile = match (name, period) {
            ("static", None) => MotionProfile::Static,
            ("dynamic", None) => MotionProfile::Dynamic,
            ("hybrid", None) => MotionProfile::Hybrid {
                switch_period: Self::DEFAULT_SWITCH_PERIOD,
            },
            ("hybrid", Some(p)) => MotionProfile::Hybrid {
                switch_period: p
                    .parse()
                    .map_err(|_| Error::InvalidProfile(format!("bad switch period {p:?}")))?,
            },
            _ => return Err(Error::InvalidProfile(s.to_string())),
        };
        profile.validate()?;
        Ok(profile)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub original_fps: u32,
    pub levels: usize,
    pub chunk_duration_s: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            original_fps: 60,
            levels: DEFAULT_LEVELS,
            chunk_duration_s: DEFAULT_CHUNK_SECONDS,
        }
    }
}

/// Surrogate quality at a frame-rate ratio for a chunk of the given motion intensity.
pub fn surrogate_quality(intensity: f64, fps_ratio: f64) -> f64 {
    100.0 - QUALITY_SCALE * intensity * (1.0 - fps_ratio).max(0.0).powf(QUALITY_EXPONENT)
}

/// Surrogate chunk size in bytes; grows with motion, frame rate and quality.
pub fn surrogate_size(intensity: f64, fps_ratio: f64, quality: f64) -> u64 {
    let base = BASE_CHUNK_BYTES * (1.0 + intensity);
    let slope = MIN_SIZE_FRACTION + (1.0 - MIN_SIZE_FRACTION) * fps_ratio;
    (base * slope * quality / 100.0).round() as u64
}

/// Builds the chunk record implied by the surrogate models for a given intensity.
pub fn surrogate_chunk(
    index: usize,
    frame_diffs: Vec<f64>,
    intensity: f64,
    ladder: &FrameRateLadder,
) -> ChunkRecord {
    let ratios: Vec<f64> = ladder
        .levels()
        .iter()
        .map(|l| l / ladder.original_fps())
        .collect();
    let quality_by_level: Vec<f64> = ratios
        .iter()
        .map(|&r| surrogate_quality(intensity, r))
        .collect();
    let sizes_by_level = ratios
        .iter()
        .zip(&quality_by_level)
        .map(|(&r, &q)| surrogate_size(intensity, r, q))
        .collect();
    ChunkRecord {
        index,
        frame_diffs,
        sizes_by_level,
        quality_by_level,
    }
}

/// Per-chunk motion intensities the generator uses for `(profile, n_chunks, seed)`.
pub fn motion_intensities(profile: MotionProfile, n_chunks: usize, seed: u64) -> Result<Vec<f64>> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, dynamic: bool| {
        if dynamic {
            rng.random_range(0.7..=1.0)
        } else {
            rng.random_range(0.0..=0.15)
        }
    };
    Ok((0..n_chunks)
        .map(|k| match profile {
            MotionProfile::Static => draw(&mut rng, false),
            MotionProfile::Dynamic => draw(&mut rng, true),
            MotionProfile::Hybrid { switch_period } => draw(&mut rng, (k / switch_period) % 2 == 1),
        })
        .collect())
}

pub fn generate_synthetic(
    profile: MotionProfile,
    n_chunks: usize,
    seed: u64,
) -> Result<VideoTrace> {
    generate_synthetic_with(&SynthOptions::default(), profile, n_chunks, seed)
}

pub fn generate_synthetic_with(
    opts: &SynthOptions,
    profile: MotionProfile,
    n_chunks: usize,
    seed: u64,
) -> Result<VideoTrace> {
    if n_chunks == 0 {
        return Err(Error::InvalidProfile("n_chunks must be >= 1".into()));
    }
    let intensities = motion_intensities(profile, n_chunks, seed)?;
    let ladder = FrameRateLadder::new(opts.original_fps, opts.levels)?;
    let n_diffs = (opts.chunk_duration_s * opts.original_fps as f64).round() as usize - 1;

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let noise = Normal::new(0.0, DIFF_NOISE_SIGMA).expect("valid sigma");

    let chunks = intensities
        .iter()
        .enumerate()
        .map(|(k, &intensity)| {
            let diffs = (0..n_diffs)
                .map(|_| round6((intensity + noise.sample(&mut noise_rng)).clamp(0.0, 1.0)))
                .collect();
            surrogate_chunk(k, diffs, intensity, &ladder)
        })
        .collect();

    let trace = VideoTrace {
        video_id: format!("synth-{}-{seed}", profile.category()),
        original_fps: opts.original_fps,
        chunk_duration_s: opts.chunk_duration_s,
        category_tag: profile.category().to_string(),
        chunks,
    };
    trace.validate()?;
    Ok(trace)
}

pub(crate) fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}
