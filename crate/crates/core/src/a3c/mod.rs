//! Asynchronous advantage actor-critic training: n-step advantages, worker
//! rollouts, and a central parameter store fed by parallel workers.

mod advantage;
mod trainer;
mod worker;

pub use advantage::{n_step_advantages, n_step_returns, ExperienceSample};
pub use trainer::{train, write_metrics_csv, BetaSchedule, MetricsRow, TrainConfig, TrainOutcome};
pub use worker::{
    argmax_action, compute_update, sample_action, worker_rollout, Rollout, SamplingMode, Snapshot,
    Update, UpdateStats,
};
