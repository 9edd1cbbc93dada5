//! Serving trained policies: per-chunk decisions, whole-video schedules,
//! baseline policies, the evaluation harness, and the HTTP front end.

mod baseline;
mod eval;
mod http;
mod policy;

pub use baseline::{default_evso_thresholds, evso_baseline, naive_baseline, naive_level};
pub use eval::{
    evaluate, evaluate_with, score_schedule, EvalOptions, EvaluationReport, PolicyKind,
    PolicyScore, ReportRow, TraceEvaluation, OVERALL,
};
pub use http::{router, serve, PolicyStore, ScheduleRequest, ScheduleResponse};
pub use policy::{decide, schedule_video, transform_action, Decision, DecisionRequest};
