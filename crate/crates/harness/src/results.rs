//! On-disk result schemas.

use std::collections::BTreeMap;

use lrlab_core::continual::{Method, TaskReport};
use lrlab_core::metrics::EvalRecord;
use serde::{Deserialize, Serialize};

/// Upper bound on stored loss-trace points per task.
pub const TRACE_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    /// Every task trained within its retry budget.
    Ok,
    /// At least one task exhausted its retries and kept the previous model.
    Partial,
    /// The run aborted and produced no records.
    Error,
}

/// Per-task training summary as stored in a run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub position: usize,
    pub concept: String,
    pub restarts: usize,
    pub restart_steps: Vec<usize>,
    pub steps: usize,
    pub optimizer_updates: usize,
    pub failed: bool,
    /// Replayed item counts keyed by source task position (0-based).
    pub replayed: BTreeMap<usize, usize>,
    pub buffer_after: BTreeMap<usize, usize>,
    /// Every `loss_trace_stride`-th per-step loss of the final attempt.
    pub loss_trace_stride: usize,
    pub loss_trace: Vec<f64>,
}

impl TaskSummary {
    pub fn from_report(report: &TaskReport) -> Self {
        let stride = report.loss_trace.len().div_ceil(TRACE_POINTS).max(1);
        Self {
            position: report.position,
            concept: report.concept.clone(),
            restarts: report.restarts,
            restart_steps: report.restart_steps.clone(),
            steps: report.steps,
            optimizer_updates: report.optimizer_updates,
            failed: report.failed,
            replayed: report.replayed.clone(),
            buffer_after: report.buffer_after.clone(),
            loss_trace_stride: stride,
            loss_trace: report.loss_trace.iter().step_by(stride).copied().collect(),
        }
    }
}

/// Contents of `runs/<method>_seed<k>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub config_hash: String,
    pub method: Method,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Concept names in training order.
    pub order: Vec<String>,
    pub buffer_capacity: usize,
    pub tasks: Vec<TaskSummary>,
    pub records: Vec<EvalRecord>,
}

impl RunFile {
    pub fn file_name(method: Method, seed: u64) -> String {
        format!("{}_seed{seed}.json", method.name())
    }

    pub fn failed_tasks(&self) -> Vec<usize> {
        self.tasks.iter().filter(|t| t.failed).map(|t| t.position).collect()
    }
}

/// One row of `aggregate.csv`: a single (method, seed, k, ℓ) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub config_hash: String,
    pub method: String,
    pub seed: u64,
    pub tasks_learned: usize,
    pub eval_task: usize,
    pub ia: f64,
    pub ta: f64,
    pub diversity: f64,
}

impl AggregateRow {
    pub const HEADER: [&'static str; 8] = [
        "config_hash",
        "method",
        "seed",
        "tasks_learned",
        "eval_task",
        "ia",
        "ta",
        "diversity",
    ];

    pub fn new(config_hash: &str, r: &EvalRecord) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            method: r.method.clone(),
            seed: r.seed,
            tasks_learned: r.tasks_learned,
            eval_task: r.eval_task,
            ia: r.ia,
            ta: r.ta,
            diversity: r.diversity,
        }
    }

    pub fn record(&self) -> EvalRecord {
        EvalRecord {
            method: self.method.clone(),
            seed: self.seed,
            tasks_learned: self.tasks_learned,
            eval_task: self.eval_task,
            ia: self.ia,
            ta: self.ta,
            diversity: self.diversity,
        }
    }
}

/// One row of `tfr.csv`: the forgetting rate of one metric after `tasks_learned` tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfrRow {
    pub config_hash: String,
    pub method: String,
    pub seed: u64,
    pub metric: String,
    pub tasks_learned: usize,
    pub tfr: f64,
}

impl TfrRow {
    pub const HEADER: [&'static str; 6] = ["config_hash", "method", "seed", "metric", "tasks_learned", "tfr"];
}

/// One row of `summary.csv`. `eval_task` is empty for forgetting rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub metric: String,
    pub tasks_learned: usize,
    pub eval_task: Option<usize>,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; empty for a single seed.
    pub std: Option<f64>,
}

impl SummaryRow {
    pub const HEADER: [&'static str; 7] = ["method", "metric", "tasks_learned", "eval_task", "n", "mean", "std"];
}

/// One row of `significance.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    /// `"A vs B"`, differences taken as A − B.
    pub comparison: String,
    pub metric: String,
    /// 1-based task position, or `overall` for forgetting rates.
    pub task: String,
    pub raw_p: f64,
    pub adj_p: f64,
    pub reject: bool,
}

impl SignificanceRow {
    pub const HEADER: [&'static str; 6] = ["comparison", "metric", "task", "raw_p", "adj_p", "reject"];
}

/// One row of `curves.csv`: mean ± std of a metric for one learned concept
/// as more tasks are learned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub order: String,
    pub method: String,
    pub metric: String,
    pub eval_task: usize,
    pub concept: String,
    /// Tasks learned.
    pub x: usize,
    pub y: f64,
    /// Sample standard deviation across seeds; 0 for a single seed.
    pub err: f64,
    pub n: usize,
}

impl CurveRow {
    pub const HEADER: [&'static str; 9] = [
        "order",
        "method",
        "metric",
        "eval_task",
        "concept",
        "x",
        "y",
        "err",
        "n",
    ];
}
