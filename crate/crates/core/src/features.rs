//! Luminance-difference features and RL state assembly.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{self, check_level, ChunkRecord, FrameRateLadder, VideoTrace};

/// Neighbor chunks averaged into `tau` (one before, one after).
pub const TAU_LEN: usize = 2;
/// Raw diff slots: 2 s at 60 FPS.
pub const P_LEN: usize = 120;
/// Top/bottom decile slots.
pub const DECILE_LEN: usize = 12;
/// Reference frame rate used to scale `delta`.
pub const REFERENCE_FPS: f64 = 60.0;

const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(
                "frame",
                None,
                "width and height must be >= 1",
            ));
        }
        if width * height != pixels.len() {
            return Err(Error::invalid(
                "frame",
                None,
                format!(
                    "{width}x{height} needs {} pixels, got {}",
                    width * height,
                    pixels.len()
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn same_dims(&self, other: &GrayFrame) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }
}

/// Mean absolute luma difference, normalized to [0, 1].
pub fn y_diff(a: &GrayFrame, b: &GrayFrame) -> Result<f64> {
    a.same_dims(b)?;
    let total: u64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| x.abs_diff(y) as u64)
        .sum();
    Ok(total as f64 / (a.pixels.len() as f64 * 255.0))
}

/// Single-window SSIM over the whole frame (population statistics).
pub fn ssim(a: &GrayFrame, b: &GrayFrame) -> Result<f64> {
    a.same_dims(b)?;
    let n = a.pixels.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean = |p: &[u8]| p.iter().map(|&v| v as f64).sum::<f64>() / nf;
    let (mu_a, mu_b) = (mean(&a.pixels), mean(&b.pixels));
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.pixels.iter().zip(&b.pixels) {
        let (dx, dy) = (x as f64 - mu_a, y as f64 - mu_b);
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    var_a /= nf;
    var_b /= nf;
    cov /= nf;
    let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
    let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
    Ok(num / den)
}

/// Consecutive-frame Y-diffs for one chunk.
pub fn chunk_features(frames: &[GrayFrame]) -> Result<Vec<f64>> {
    if frames.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: frames.len(),
        });
    }
    frames.windows(2).map(|w| y_diff(&w[0], &w[1])).collect()
}

/// Reads a binary PGM (P5) file with maxval <= 255.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayFrame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayFrame> {
    let bad = |msg: &str| Error::Parse {
        line: 1,
        message: format!("pgm: {msg}"),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header field"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let [width, height, maxval] = header;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit maxval supported"));
    }
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| bad("truncated raster"))?;
    let pixels = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&v| ((v.min(maxval as u8) as f64) * 255.0 / maxval as f64).round() as u8)
            .collect()
    };
    GrayFrame::new(width, height, pixels)
}

pub fn write_pgm(frame: &GrayFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads every `*.pgm` in a directory in lexicographic order.
pub fn load_frame_dir(dir: impl AsRef<Path>) -> Result<Vec<GrayFrame>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    paths.iter().map(read_pgm).collect()
}

/// Splits a frame sequence into chunks and builds a trace. Sizes and
/// qualities come from the surrogate models driven by each chunk's mean diff,
/// since raw frames carry neither.
pub fn extract_trace(
    frames: &[GrayFrame],
    fps: u32,
    chunk_duration_s: f64,
    levels: usize,
    video_id: &str,
    category_tag: &str,
) -> Result<VideoTrace> {
    let per_chunk = (chunk_duration_s * fps as f64).round() as usize;
    if per_chunk < 2 {
        return Err(Error::invalid(
            "chunk_duration_s",
            None,
            "chunk shorter than two frames",
        ));
    }
    if frames.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: frames.len(),
        });
    }
    let ladder = FrameRateLadder::new(fps, levels)?;
    let mut chunks = Vec::new();
    for group in frames.chunks(per_chunk) {
        if group.len() < 2 {
            // a single trailing frame has no diff of its own
            break;
        }
        let diffs: Vec<f64> = chunk_features(group)?
            .into_iter()
            .map(trace::round6)
            .collect();
        let intensity = diffs.iter().sum::<f64>() / diffs.len() as f64;
        chunks.push(trace::surrogate_chunk(
            chunks.len(),
            diffs,
            intensity,
            &ladder,
        ));
    }
    let trace = VideoTrace {
        video_id: video_id.to_string(),
        original_fps: fps,
        chunk_duration_s,
        category_tag: category_tag.to_string(),
        chunks,
    };
    trace.validate()?;
    Ok(trace)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Seeded synthetic frame pairs: a smooth textured base frame against a
/// copy that is shifted (motion) and corrupted with noise of varying strength.
pub fn synthetic_frame_pairs(
    seed: u64,
    n_pairs: usize,
    size: usize,
) -> Vec<(GrayFrame, GrayFrame)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_pairs)
        .map(|_| {
            let fx = rng.random_range(0.05..0.4);
            let fy = rng.random_range(0.05..0.4);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let brightness = rng.random_range(60.0..190.0);
            let contrast = rng.random_range(30.0..60.0);
            let texture = |x: f64, y: f64| {
                brightness
                    + contrast
                        * ((fx * x + phase).sin() * (fy * y).cos()
                            + 0.5 * (0.7 * fx * x + fy * y).sin())
            };
            let shift = rng.random_range(0.0..6.0);
            let sigma: f64 = rng.random_range(0.0..35.0);
            let noise = Normal::new(0.0, sigma.max(1e-9)).expect("valid sigma");
            let mut a = Vec::with_capacity(size * size);
            let mut b = Vec::with_capacity(size * size);
            for y in 0..size {
                for x in 0..size {
                    let (xf, yf) = (x as f64, y as f64);
                    a.push(texture(xf, yf).round().clamp(0.0, 255.0) as u8);
                    let moved = texture(xf + shift, yf) + noise.sample(&mut rng);
                    b.push(moved.round().clamp(0.0, 255.0) as u8);
                }
            }
            (
                GrayFrame::new(size, size, a).expect("square frame"),
                GrayFrame::new(size, size, b).expect("square frame"),
            )
        })
        .collect()
}

/// Pearson correlation between Y-diff and SSIM over the synthetic corpus.
pub fn ydiff_ssim_correlation(seed: u64, n_pairs: usize) -> Result<f64> {
    let pairs = synthetic_frame_pairs(seed, n_pairs, 32);
    let mut diffs = Vec::with_capacity(n_pairs);
    let mut sims = Vec::with_capacity(n_pairs);
    for (a, b) in &pairs {
        diffs.push(y_diff(a, b)?);
        sims.push(ssim(a, b)?);
    }
    pearson(&diffs, &sims)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub max_chunk_size: u64,
}

pub fn compute_norm_stats(dataset: &[VideoTrace]) -> Result<NormalizationStats> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let max_chunk_size = dataset
        .iter()
        .flat_map(|t| &t.chunks)
        .flat_map(|c| c.sizes_by_level.iter().copied())
        .max()
        .unwrap_or(0);
    Ok(NormalizationStats { max_chunk_size })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateObservation {
    pub tau: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub m_vec: Vec<f64>,
    pub n_vec: Vec<f64>,
    pub phi: f64,
    pub delta: f64,
    pub valid_len_p: usize,
}

impl StateObservation {
    /// Vector inputs in network order: tau, p, q, m_vec, n_vec.
    pub fn vectors(&self) -> [&[f64]; 5] {
        [&self.tau, &self.p, &self.q, &self.m_vec, &self.n_vec]
    }

    pub fn scalars(&self) -> [f64; 2] {
        [self.phi, self.delta]
    }
}

/// The raw inputs needed to build a state for one upcoming chunk.
#[derive(Debug, Clone, Copy)]
pub struct ChunkContext<'a> {
    pub frame_diffs: &'a [f64],
    pub sizes_by_level: &'a [u64],
    pub prev_mean_diff: Option<f64>,
    pub next_mean_diff: Option<f64>,
    pub original_fps: u32,
    pub last_level: usize,
}

pub fn assemble_state(
    trace: &VideoTrace,
    next_chunk_idx: usize,
    last_level: usize,
    norm: &NormalizationStats,
) -> Result<StateObservation> {
    let n = trace.n_chunks();
    if next_chunk_idx >= n {
        return Err(Error::IndexOutOfRange {
            index: next_chunk_idx,
            len: n,
        });
    }
    let chunk = &trace.chunks[next_chunk_idx];
    let prev = next_chunk_idx
        .checked_sub(1)
        .map(|i| trace.chunks[i].mean_diff());
    let next = trace
        .chunks
        .get(next_chunk_idx + 1)
        .map(ChunkRecord::mean_diff);
    assemble_from_context(
        &ChunkContext {
            frame_diffs: &chunk.frame_diffs,
            sizes_by_level: &chunk.sizes_by_level,
            prev_mean_diff: prev,
            next_mean_diff: next,
            original_fps: trace.original_fps,
            last_level,
        },
        norm,
    )
}

pub fn assemble_from_context(
    ctx: &ChunkContext<'_>,
    norm: &NormalizationStats,
) -> Result<StateObservation> {
    let diffs = ctx.frame_diffs;
    let m = ctx.sizes_by_level.len();
    check_level(ctx.last_level, m)?;
    if diffs.is_empty() || diffs.len() > P_LEN {
        return Err(Error::invalid(
            "frame_diffs",
            None,
            format!("length {} outside [1, {P_LEN}]", diffs.len()),
        ));
    }
    if diffs.iter().any(|d| !(0.0..=1.0).contains(d)) {
        return Err(Error::invalid(
            "frame_diffs",
            None,
            "values must lie in [0, 1]",
        ));
    }
    for neighbor in [ctx.prev_mean_diff, ctx.next_mean_diff]
        .into_iter()
        .flatten()
    {
        if !(0.0..=1.0).contains(&neighbor) {
            return Err(Error::invalid(
                "neighbor_mean_diffs",
                None,
                "values must lie in [0, 1]",
            ));
        }
    }
    let own_mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let tau = vec![
        ctx.prev_mean_diff.unwrap_or(own_mean),
        ctx.next_mean_diff.unwrap_or(own_mean),
    ];

    let mut p = diffs.to_vec();
    p.resize(P_LEN, 0.0);

    let take = decile_count(diffs.len());
    let mut sorted = diffs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut m_vec: Vec<f64> = sorted[..take].to_vec();
    m_vec.resize(DECILE_LEN, 0.0);
    let mut q: Vec<f64> = sorted.iter().rev().take(take).copied().collect();
    q.resize(DECILE_LEN, 0.0);

    let scale = norm.max_chunk_size as f64;
    let n_vec = ctx
        .sizes_by_level
        .iter()
        .map(|&s| {
            if scale > 0.0 {
                (s as f64 / scale).min(1.0)
            } else {
                0.0
            }
        })
        .collect();

    Ok(StateObservation {
        tau,
        p,
        q,
        m_vec,
        n_vec,
        phi: ctx.last_level as f64 / m as f64,
        delta: (ctx.original_fps as f64 / REFERENCE_FPS).min(1.0),
        valid_len_p: diffs.len(),
    })
}

/// `ceil(0.1 * i)`, capped at the decile slot count.
pub fn decile_count(i: usize) -> usize {
    i.div_ceil(10).clamp(1, DECILE_LEN)
}
