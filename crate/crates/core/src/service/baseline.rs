use crate::error::{Error, Result};
use crate::trace::VideoTrace;

/// Threshold baseline on the summed frame differences of each chunk:
/// `level = 1 + #{thresholds < sum}`. Needs `m − 1` ascending cut points.
pub fn evso_baseline(trace: &VideoTrace, thresholds: &[f64]) -> Result<Vec<usize>> {
    let m = trace.levels();
    if thresholds.len() + 1 != m {
        return Err(Error::BadThresholds(format!(
            "need {} thresholds for {m} levels, got {}",
            m - 1,
            thresholds.len()
        )));
    }
    if thresholds.iter().any(|t| !t.is_finite()) {
        return Err(Error::BadThresholds("thresholds must be finite".into()));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::BadThresholds("thresholds must be ascending".into()));
    }
    Ok(trace
        .chunks
        .iter()
        .map(|c| {
            let sum = c.diff_sum();
            1 + thresholds.iter().filter(|&&t| t < sum).count()
        })
        .collect())
}

/// Cut points at evenly spaced quantiles (20/40/60/80% for five levels) of
/// the per-chunk diff sums over `dataset`, interpolating linearly between
/// order statistics.
pub fn default_evso_thresholds(dataset: &[VideoTrace], levels: usize) -> Result<Vec<f64>> {
    if levels < 2 {
        return Err(Error::BadThresholds(format!(
            "need >= 2 levels, got {levels}"
        )));
    }
    let mut sums: Vec<f64> = dataset
        .iter()
        .flat_map(|t| t.chunks.iter().map(|c| c.diff_sum()))
        .collect();
    if sums.is_empty() {
        return Err(Error::EmptyDataset);
    }
    sums.sort_by(f64::total_cmp);
    Ok((1..levels)
        .map(|i| quantile(&sums, i as f64 / levels as f64))
        .collect())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Constant level `clamp(round_half_up(fraction · m), 1, m)` for every chunk.
pub fn naive_baseline(trace: &VideoTrace, fraction: f64) -> Result<Vec<usize>> {
    Ok(vec![
        naive_level(trace.levels(), fraction)?;
        trace.n_chunks()
    ])
}

pub fn naive_level(levels: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidRange(format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    let level = (fraction * levels as f64 + 0.5).floor() as usize;
    Ok(level.clamp(1, levels))
}
