//! Experiment execution: one independent job per (method, seed), merged by a
//! single-threaded reducer that writes every results file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lrlab_core::continual::{run_sequence, Method};
use lrlab_core::latentspace::TaskSuite;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{all_pairs, ResultSet, FDR_Q};
use crate::config::{ExperimentConfig, TaskOrder};
use crate::error::{HarnessError, Result};
use crate::io::{atomic_write, create_dir, read_csv, read_json, write_csv, write_json};
use crate::report::{render, ReportInput};
use crate::results::{AggregateRow, CurveRow, RunFile, RunStatus, SignificanceRow, SummaryRow, TaskSummary, TfrRow};

pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const TFR_CSV: &str = "tfr.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_MD: &str = "summary.md";
pub const SIGNIFICANCE_CSV: &str = "significance.csv";
pub const CURVES_CSV: &str = "curves.csv";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const RUNS_DIR: &str = "runs";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads; 0 lets rayon choose.
    pub jobs: usize,
    /// Added to every configured seed.
    pub seed_offset: u64,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            jobs: 0,
            seed_offset: 0,
        }
    }
}

/// Whether every run finished cleanly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Completion {
    Clean,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub method: Method,
    pub seed: u64,
    pub file: String,
    pub status: RunStatus,
    pub failed_tasks: Vec<usize>,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsPolicy {
    pub test: String,
    pub exact_up_to: usize,
    pub zero_differences: String,
    pub correction: String,
    pub q: f64,
    pub family: String,
    pub std: String,
}

impl Default for StatisticsPolicy {
    fn default() -> Self {
        Self {
            test: "two-sided Wilcoxon signed-rank, paired by seed".into(),
            exact_up_to: lrlab_core::stats::EXACT_WILCOXON_MAX,
            zero_differences: "dropped before ranking; all-zero differences give p = 1".into(),
            correction: "Benjamini-Hochberg".into(),
            q: FDR_Q,
            family: "per metric, across all method pairs and tasks (final row for ia, ta, diversity; final forgetting rate for tfr_ia, tfr_ta)".into(),
            std: "sample standard deviation (n - 1)".into(),
        }
    }
}

/// Contents of `manifest.json`. Holds no timestamps so that reruns are
/// byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub task_order: TaskOrder,
    /// Concept names in training order.
    pub concepts: Vec<String>,
    pub seeds: Vec<u64>,
    pub seed_offset: u64,
    pub memory_budget_bytes: u64,
    /// Buffer capacity (items) per method.
    pub capacities: BTreeMap<String, usize>,
    pub runs: Vec<RunEntry>,
    pub statistics: StatisticsPolicy,
    pub status: Completion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significance_note: Option<String>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub runs: Vec<RunFile>,
    pub results: ResultSet,
}

impl RunOutcome {
    pub fn completion(&self) -> Completion {
        self.manifest.status
    }
}

fn run_job(
    config: &ExperimentConfig,
    hash: &str,
    suite: &TaskSuite<f64>,
    order: &[usize],
    method: Method,
    seed: u64,
) -> RunFile {
    let sequence = config.sequence_config(method);
    let capacity = sequence
        .method
        .buffer_capacity(suite.spec.data_dim, suite.spec.latent_dim)
        .unwrap_or(0);
    match run_sequence(&sequence, suite, order, seed) {
        Ok(run) => RunFile {
            config_hash: hash.to_string(),
            method,
            seed,
            status: if run.any_failed() {
                RunStatus::Partial
            } else {
                RunStatus::Ok
            },
            error: None,
            order: run.order.clone(),
            buffer_capacity: capacity,
            tasks: run.tasks.iter().map(TaskSummary::from_report).collect(),
            records: run.records,
        },
        Err(e) => RunFile {
            config_hash: hash.to_string(),
            method,
            seed,
            status: RunStatus::Error,
            error: Some(e.to_string()),
            order: order.iter().map(|&i| suite.tasks[i].name.clone()).collect(),
            buffer_capacity: capacity,
            tasks: Vec::new(),
            records: Vec::new(),
        },
    }
}

/// Runs every (method × seed) job of `config` and writes all results under
/// `options.out_dir`.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let hash = config.hash();
    let suite: TaskSuite<f64> = TaskSuite::generate(&config.suite)?;
    let order = config.task_order.indices(suite.num_tasks());
    let seeds: Vec<u64> = config
        .seeds
        .iter()
        .map(|s| {
            s.checked_add(options.seed_offset)
                .ok_or_else(|| HarnessError::config("seeds", format!("seed {s} overflows with the offset")))
        })
        .collect::<Result<_>>()?;
    let runs_dir = options.out_dir.join(RUNS_DIR);
    create_dir(&runs_dir)?;

    let jobs: Vec<(Method, u64)> = config
        .methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| HarnessError::config("jobs", e.to_string()))?;
    let runs: Vec<RunFile> = pool.install(|| {
        jobs.par_iter()
            .map(|&(method, seed)| {
                let run = run_job(config, &hash, &suite, &order, method, seed);
                write_json(&runs_dir.join(RunFile::file_name(method, seed)), &run).map(|_| run)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let capacities = config
        .methods
        .iter()
        .map(|&m| {
            let c = config
                .method_config(m)
                .buffer_capacity(suite.spec.data_dim, suite.spec.latent_dim)?;
            Ok((m.name().to_string(), c))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let status = if runs.iter().all(|r| r.status == RunStatus::Ok) {
        Completion::Clean
    } else {
        Completion::Partial
    };
    let mut manifest = Manifest {
        config_hash: hash.clone(),
        task_order: config.task_order,
        concepts: order.iter().map(|&i| suite.tasks[i].name.clone()).collect(),
        seeds,
        seed_offset: options.seed_offset,
        memory_budget_bytes: config.budget_bytes(),
        capacities,
        runs: runs
            .iter()
            .map(|r| RunEntry {
                method: r.method,
                seed: r.seed,
                file: format!("{RUNS_DIR}/{}", RunFile::file_name(r.method, r.seed)),
                status: r.status,
                failed_tasks: r.failed_tasks(),
                restarts: r.tasks.iter().map(|t| t.restarts).sum(),
            })
            .collect(),
        statistics: StatisticsPolicy::default(),
        status,
        significance_note: None,
        config: config.clone(),
    };

    let results = ResultSet::new(runs.iter().flat_map(|r| r.records.iter().cloned()))?;
    let significance = write_tables(&options.out_dir, &hash, &manifest, &results, &runs)?;
    manifest.significance_note = significance.err();
    write_json(&options.out_dir.join(MANIFEST_JSON), &manifest)?;
    Ok(RunOutcome {
        out_dir: options.out_dir.clone(),
        manifest,
        runs,
        results,
    })
}

/// Writes the aggregate, forgetting, summary, significance and curve tables
/// plus the markdown summary. Returns why significance was skipped, if it was.
fn write_tables(
    dir: &Path,
    hash: &str,
    manifest: &Manifest,
    results: &ResultSet,
    runs: &[RunFile],
) -> Result<std::result::Result<(), String>> {
    let aggregate: Vec<AggregateRow> = results.records().map(|r| AggregateRow::new(hash, r)).collect();
    write_csv(&dir.join(AGGREGATE_CSV), &aggregate, &AggregateRow::HEADER)?;
    write_csv(&dir.join(TFR_CSV), &results.tfr_rows(hash), &TfrRow::HEADER)?;
    write_csv(&dir.join(SUMMARY_CSV), &results.summary_rows(), &SummaryRow::HEADER)?;
    let significance = significance_for(results);
    if let Ok(rows) = &significance {
        write_csv(&dir.join(SIGNIFICANCE_CSV), rows, &SignificanceRow::HEADER)?;
    }
    write_curves(dir, manifest, results)?;
    let md = render(&ReportInput {
        config_hash: hash,
        order: manifest.task_order.name(),
        concepts: &manifest.concepts,
        seeds: &manifest.seeds,
        results,
        significance: &significance,
        runs,
    });
    atomic_write(&dir.join(SUMMARY_MD), md.as_bytes())?;
    Ok(significance.map(|_| ()))
}

fn significance_for(results: &ResultSet) -> std::result::Result<Vec<SignificanceRow>, String> {
    results
        .significance(&all_pairs(&results.methods()))
        .map_err(|e| e.to_string())
}

fn write_curves(dir: &Path, manifest: &Manifest, results: &ResultSet) -> Result<Vec<CurveRow>> {
    let rows = results.curve_rows(manifest.task_order.name(), &manifest.concepts);
    write_csv(&dir.join(CURVES_CSV), &rows, &CurveRow::HEADER)?;
    Ok(rows)
}

/// Loads `aggregate.csv` from a results directory.
pub fn load_results(dir: &Path) -> Result<(String, ResultSet)> {
    let path = dir.join(AGGREGATE_CSV);
    let rows: Vec<AggregateRow> = read_csv(&path)?;
    if rows.is_empty() {
        return Err(HarnessError::results(&path, "no evaluation rows"));
    }
    let hash = rows[0].config_hash.clone();
    if let Some(bad) = rows.iter().find(|r| r.config_hash != hash) {
        return Err(HarnessError::results(
            &path,
            format!("rows from two configs ({hash} and {})", bad.config_hash),
        ));
    }
    Ok((hash, ResultSet::new(rows.iter().map(AggregateRow::record))?))
}

/// Recomputes `significance.csv` from a results directory. Every seed must be
/// present for every method.
pub fn stats_command(dir: &Path) -> Result<Vec<SignificanceRow>> {
    let (_, results) = load_results(dir)?;
    for method in results.methods() {
        if results.seeds(&method).len() < 2 {
            return Err(HarnessError::results(
                dir.join(AGGREGATE_CSV),
                format!("method `{method}` has fewer than two seeds"),
            ));
        }
    }
    let rows = results.significance(&all_pairs(&results.methods()))?;
    write_csv(&dir.join(SIGNIFICANCE_CSV), &rows, &SignificanceRow::HEADER)?;
    Ok(rows)
}

/// Rewrites `curves.csv` from a results directory.
pub fn report_command(dir: &Path) -> Result<Vec<CurveRow>> {
    let (_, results) = load_results(dir)?;
    let manifest: Manifest = read_json(&dir.join(MANIFEST_JSON))?;
    write_curves(dir, &manifest, &results)
}
