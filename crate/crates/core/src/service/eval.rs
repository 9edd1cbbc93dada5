use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::reward::{episode_reward, greedy_oracle, QoEProfile};
use crate::service::baseline::{default_evso_thresholds, evso_baseline, naive_baseline};
use crate::service::policy::schedule_video;
use crate::trace::VideoTrace;

pub const OVERALL: &str = "overall";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Model,
    Oracle,
    Evso,
    #[serde(rename = "naive-60")]
    Naive60,
    #[serde(rename = "naive-40")]
    Naive40,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Model,
        PolicyKind::Oracle,
        PolicyKind::Evso,
        PolicyKind::Naive60,
        PolicyKind::Naive40,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Model => "model",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Evso => "evso",
            PolicyKind::Naive60 => "naive-60",
            PolicyKind::Naive40 => "naive-40",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyScore {
    /// Mean selected frame rate as a percentage of the original.
    pub fps_pct: f64,
    /// Mean per-chunk quality of the selected levels.
    pub quality_pct: f64,
    pub reward: f64,
}

/// Scores a per-chunk level schedule on one trace.
pub fn score_schedule(
    trace: &VideoTrace,
    levels: &[usize],
    profile: &QoEProfile,
) -> Result<PolicyScore> {
    if levels.len() != trace.n_chunks() || levels.is_empty() {
        return Err(Error::LengthMismatch {
            expected: trace.n_chunks(),
            got: levels.len(),
        });
    }
    let ladder = trace.ladder()?;
    let n = levels.len() as f64;
    let mut fps = 0.0;
    let mut quality = 0.0;
    for (chunk, &level) in trace.chunks.iter().zip(levels) {
        fps += ladder.ratio(level)?;
        quality += chunk.quality(level)?;
    }
    Ok(PolicyScore {
        fps_pct: 100.0 * fps / n,
        quality_pct: quality / n,
        reward: episode_reward(trace, levels, profile)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEvaluation {
    pub video_id: String,
    pub category: String,
    pub scores: BTreeMap<PolicyKind, PolicyScore>,
    pub model_levels: Vec<usize>,
    pub oracle_levels: Vec<usize>,
}

impl TraceEvaluation {
    pub fn score(&self, policy: PolicyKind) -> &PolicyScore {
        &self.scores[&policy]
    }

    /// Chunks where the model picked the oracle's level.
    pub fn agreeing_chunks(&self) -> usize {
        self.model_levels
            .iter()
            .zip(&self.oracle_levels)
            .filter(|(a, b)| a == b)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub category: String,
    pub policy: PolicyKind,
    pub fps_pct: f64,
    pub quality_pct: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub traces: Vec<TraceEvaluation>,
    /// One row per (category, policy), categories sorted, then the overall rows.
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    pub const CSV_HEADER: &'static str = "category,policy,fps_pct,quality_pct,mean_reward";

    pub fn categories(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for row in &self.rows {
            if !seen.contains(&row.category.as_str()) {
                seen.push(&row.category);
            }
        }
        seen
    }

    pub fn row(&self, category: &str, policy: PolicyKind) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.category == category && r.policy == policy)
    }

    /// Fraction of all chunks on which the model matched the oracle.
    pub fn oracle_agreement(&self) -> f64 {
        let agree: usize = self
            .traces
            .iter()
            .map(TraceEvaluation::agreeing_chunks)
            .sum();
        let total: usize = self.traces.iter().map(|t| t.oracle_levels.len()).sum();
        agree as f64 / total.max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.4},{:.4},{:.4}",
                r.category,
                r.policy.name(),
                r.fps_pct,
                r.quality_pct,
                r.mean_reward
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Human-readable table: one line per category plus the overall line,
    /// `FPS% / quality%` for every policy.
    pub fn table(&self) -> String {
        let mut out = format!("{:<10}", "category");
        for p in PolicyKind::ALL {
            let _ = write!(out, " | {:>15}", p.name());
        }
        out.push('\n');
        for category in self.categories() {
            let _ = write!(out, "{category:<10}");
            for p in PolicyKind::ALL {
                if let Some(r) = self.row(category, p) {
                    let _ = write!(out, " | {:>6.1}% /{:>6.1}%", r.fps_pct, r.quality_pct);
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Threshold-baseline cut points; quantiles of the evaluated set when absent.
    pub evso_thresholds: Option<Vec<f64>>,
}

pub fn evaluate(
    ckpt: &Checkpoint,
    dataset: &[VideoTrace],
    profile: &QoEProfile,
) -> Result<EvaluationReport> {
    evaluate_with(ckpt, dataset, profile, &EvalOptions::default())
}

pub fn evaluate_with(
    ckpt: &Checkpoint,
    dataset: &[VideoTrace],
    profile: &QoEProfile,
    options: &EvalOptions,
) -> Result<EvaluationReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let thresholds = match &options.evso_thresholds {
        Some(t) => t.clone(),
        None => default_evso_thresholds(dataset, dataset[0].levels())?,
    };

    let mut traces = Vec::with_capacity(dataset.len());
    for trace in dataset {
        let model_levels = schedule_video(ckpt, trace, profile)?;
        let oracle_levels = greedy_oracle(trace, profile)?;
        let mut scores = BTreeMap::new();
        for policy in PolicyKind::ALL {
            let levels = match policy {
                PolicyKind::Model => model_levels.clone(),
                PolicyKind::Oracle => oracle_levels.clone(),
                PolicyKind::Evso => evso_baseline(trace, &thresholds)?,
                PolicyKind::Naive60 => naive_baseline(trace, 0.6)?,
                PolicyKind::Naive40 => naive_baseline(trace, 0.4)?,
            };
            scores.insert(policy, score_schedule(trace, &levels, profile)?);
        }
        traces.push(TraceEvaluation {
            video_id: trace.video_id.clone(),
            category: trace.category_tag.clone(),
            scores,
            model_levels,
            oracle_levels,
        });
    }

    let mut categories: Vec<&str> = traces.iter().map(|t| t.category.as_str()).collect();
    categories.sort_unstable();
    categories.dedup();
    let mut rows = Vec::new();
    for category in categories.into_iter().chain([OVERALL]) {
        let members: Vec<&TraceEvaluation> = traces
            .iter()
            .filter(|t| category == OVERALL || t.category == category)
            .collect();
        let n = members.len() as f64;
        for policy in PolicyKind::ALL {
            let mean = |f: fn(&PolicyScore) -> f64| {
                members.iter().map(|t| f(t.score(policy))).sum::<f64>() / n
            };
            rows.push(ReportRow {
                category: category.to_string(),
                policy,
                fps_pct: mean(|s| s.fps_pct),
                quality_pct: mean(|s| s.quality_pct),
                mean_reward: mean(|s| s.reward),
            });
        }
    }
    Ok(EvaluationReport { traces, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::compute_norm_stats;
    use crate::nn::{build_network, Head};
    use crate::trace::{generate_synthetic, MotionProfile};

    fn data() -> Vec<VideoTrace> {
        vec![
            generate_synthetic(MotionProfile::Static, 6, 1).unwrap(),
            generate_synthetic(MotionProfile::Dynamic, 6, 2).unwrap(),
            generate_synthetic(MotionProfile::Dynamic, 4, 3).unwrap(),
        ]
    }

    fn ckpt(data: &[VideoTrace]) -> Checkpoint {
        Checkpoint {
            actor: build_network(Head::Actor { actions: 5 }, 5, 1, 8, 1).unwrap(),
            critic: build_network(Head::Critic, 5, 1, 8, 2).unwrap(),
            norm: compute_norm_stats(data).unwrap(),
            profile_name: "qoe_b".into(),
        }
    }

    #[test]
    fn report_shape_and_oracle_dominance() {
        let d = data();
        let profile = QoEProfile::qoe_b();
        let report = evaluate(&ckpt(&d), &d, &profile).unwrap();
        assert_eq!(report.categories(), vec!["dynamic", "static", OVERALL]);
        assert_eq!(report.rows.len(), 3 * PolicyKind::ALL.len());
        assert_eq!(report.table().lines().count(), 1 + 3);
        assert_eq!(report.to_csv().lines().count(), 1 + 15);
        for t in &report.traces {
            assert!(t.score(PolicyKind::Oracle).reward >= t.score(PolicyKind::Model).reward - 1e-9);
            assert_eq!(
                t.oracle_levels,
                greedy_oracle(
                    d.iter().find(|x| x.video_id == t.video_id).unwrap(),
                    &profile
                )
                .unwrap()
            );
        }
        for r in &report.rows {
            assert!((0.0..=100.0).contains(&r.fps_pct));
            assert!((0.0..=100.0).contains(&r.quality_pct));
        }
        // category rows are unweighted means over traces
        let dyn_model: Vec<f64> = report
            .traces
            .iter()
            .filter(|t| t.category == "dynamic")
            .map(|t| t.score(PolicyKind::Model).fps_pct)
            .collect();
        let row = report.row("dynamic", PolicyKind::Model).unwrap();
        assert!((row.fps_pct - dyn_model.iter().sum::<f64>() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn naive_full_rate_scores() {
        let d = data();
        let t = &d[0];
        let s = score_schedule(t, &vec![5; t.n_chunks()], &QoEProfile::qoe_b()).unwrap();
        assert!((s.fps_pct - 100.0).abs() < 1e-12);
        let top = t.chunks.iter().map(|c| c.quality(5).unwrap()).sum::<f64>() / t.n_chunks() as f64;
        assert!((s.quality_pct - top).abs() < 1e-12);
        // quality falls with the naive fraction
        let q = |f| {
            score_schedule(t, &naive_baseline(t, f).unwrap(), &QoEProfile::qoe_b())
                .unwrap()
                .quality_pct
        };
        assert!(q(1.0) >= q(0.6) && q(0.6) >= q(0.4));
    }

    #[test]
    fn empty_dataset() {
        let d = data();
        assert!(matches!(
            evaluate(&ckpt(&d), &[], &QoEProfile::qoe_b()),
            Err(Error::EmptyDataset)
        ));
    }
}
