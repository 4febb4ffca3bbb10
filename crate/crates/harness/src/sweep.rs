//! Ablation sweeps: one full experiment per point, plus a cross-point table.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{Metric, ResultSet};
use crate::config::{ExperimentConfig, MemoryBudgets, TaskOrder};
use crate::error::{HarnessError, Result};
use crate::io::{create_dir, write_csv};
use crate::run::{run_experiment, Completion, RunOptions, RunOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda,
    Memory,
    TaskOrder,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Memory => "memory",
            SweepAxis::TaskOrder => "task_order",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepAxis::Lambda),
            "memory" | "memory_size" => Ok(SweepAxis::Memory),
            "task_order" | "order" => Ok(SweepAxis::TaskOrder),
            other => Err(HarnessError::config(
                "axis",
                format!("unknown axis `{other}` (expected lambda, memory or task_order)"),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// Subdirectory name.
    pub label: String,
    pub value: String,
    pub config: ExperimentConfig,
}

/// The configs of every point along `axis`.
pub fn sweep_points(base: &ExperimentConfig, axis: SweepAxis) -> Result<Vec<SweepPoint>> {
    base.validate()?;
    let replay = base.methods.iter().any(|m| m.uses_replay());
    if matches!(axis, SweepAxis::Lambda | SweepAxis::Memory) && !replay {
        return Err(HarnessError::config(
            "methods",
            format!("the {} axis needs at least one replay method", axis.name()),
        ));
    }
    let points = match axis {
        SweepAxis::Lambda => {
            if base.sweep.lambda_values.is_empty() {
                return Err(HarnessError::config("sweep.lambda_values", "must not be empty"));
            }
            base.sweep
                .lambda_values
                .iter()
                .map(|&l| SweepPoint {
                    label: format!("lambda_{l}"),
                    value: l.to_string(),
                    config: ExperimentConfig {
                        lambda_memory: l,
                        ..base.clone()
                    },
                })
                .collect()
        }
        SweepAxis::Memory => MemoryBudgets::NAMES
            .iter()
            .map(|&name| SweepPoint {
                label: format!("memory_{name}"),
                value: name.to_string(),
                config: ExperimentConfig {
                    memory_budget: name.to_string(),
                    ..base.clone()
                },
            })
            .collect(),
        SweepAxis::TaskOrder => [TaskOrder::Forward, TaskOrder::Reversed]
            .into_iter()
            .map(|order| SweepPoint {
                label: format!("order_{}", order.name()),
                value: order.name().to_string(),
                config: ExperimentConfig {
                    task_order: order,
                    ..base.clone()
                },
            })
            .collect(),
    };
    Ok(points)
}

/// One row of `sweep_<axis>.csv`: a seed-level summary of one method at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub point: String,
    pub value: String,
    pub method: String,
    /// Replay buffer capacity in items; 0 without replay.
    pub capacity: usize,
    /// `tfr_ia`, `tfr_ta` (after the last task), `final_task_ia`,
    /// `final_task_ta` (last task right after learning it) or
    /// `first_task_diversity` (first task after the last).
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: Option<f64>,
}

impl SweepRow {
    pub const HEADER: [&'static str; 9] = [
        "axis", "point", "value", "method", "capacity", "metric", "n", "mean", "std",
    ];
}

/// Per-seed values of the cross-point quantities of one method.
pub fn point_metrics(results: &ResultSet, method: &str) -> Vec<(&'static str, Vec<f64>)> {
    let n = results.tasks();
    vec![
        ("tfr_ia", results.tfr_values(method, Metric::Ia, n)),
        ("tfr_ta", results.tfr_values(method, Metric::Ta, n)),
        ("final_task_ia", results.cell_values(method, Metric::Ia, n, n)),
        ("final_task_ta", results.cell_values(method, Metric::Ta, n, n)),
        (
            "first_task_diversity",
            results.cell_values(method, Metric::Diversity, n, 1),
        ),
    ]
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub axis: SweepAxis,
    pub points: Vec<(SweepPoint, RunOutcome)>,
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    pub fn completion(&self) -> Completion {
        if self.points.iter().all(|(_, o)| o.completion() == Completion::Clean) {
            Completion::Clean
        } else {
            Completion::Partial
        }
    }
}

/// Runs every point into `<out>/<label>/` and writes `<out>/sweep_<axis>.csv`.
pub fn run_sweep(base: &ExperimentConfig, axis: SweepAxis, options: &RunOptions) -> Result<SweepOutcome> {
    let points = sweep_points(base, axis)?;
    create_dir(&options.out_dir)?;
    let mut done = Vec::new();
    let mut rows = Vec::new();
    for point in points {
        let opts = RunOptions {
            out_dir: options.out_dir.join(&point.label),
            ..options.clone()
        };
        let outcome = run_experiment(&point.config, &opts)?;
        for method in outcome.results.methods() {
            let capacity = outcome.manifest.capacities.get(&method).copied().unwrap_or(0);
            for (metric, values) in point_metrics(&outcome.results, &method) {
                let Ok(ms) = lrlab_core::stats::mean_std(&values) else {
                    continue;
                };
                rows.push(SweepRow {
                    axis: axis.name().to_string(),
                    point: point.label.clone(),
                    value: point.value.clone(),
                    method: method.clone(),
                    capacity,
                    metric: metric.to_string(),
                    n: values.len(),
                    mean: ms.mean,
                    std: ms.std,
                });
            }
        }
        done.push((point, outcome));
    }
    write_csv(
        &options.out_dir.join(format!("sweep_{}.csv", axis.name())),
        &rows,
        &SweepRow::HEADER,
    )?;
    Ok(SweepOutcome {
        axis,
        points: done,
        rows,
    })
}
