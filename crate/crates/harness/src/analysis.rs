//! Reductions over evaluation records: forgetting rates, per-cell summaries,
//! paired significance tests and curve data.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use lrlab_core::continual::Method;
use lrlab_core::metrics::{tfr, EvalRecord, MetricMatrix};
use lrlab_core::stats::{benjamini_hochberg, mean_std, wilcoxon_signed_rank, PairedSample};

use crate::error::{HarnessError, Result};
use crate::results::{CurveRow, SignificanceRow, SummaryRow, TfrRow};

/// False discovery rate for Benjamini–Hochberg.
pub const FDR_Q: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Ia,
    Ta,
    Diversity,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ia, Metric::Ta, Metric::Diversity];
    /// Metrics with a forgetting rate.
    pub const FORGETTING: [Metric; 2] = [Metric::Ia, Metric::Ta];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ia => "ia",
            Metric::Ta => "ta",
            Metric::Diversity => "diversity",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Ia => "IA",
            Metric::Ta => "TA",
            Metric::Diversity => "Diversity",
        }
    }

    pub fn tfr_name(self) -> String {
        format!("tfr_{}", self.name())
    }

    pub fn of(self, r: &EvalRecord) -> f64 {
        match self {
            Metric::Ia => r.ia,
            Metric::Ta => r.ta,
            Metric::Diversity => r.diversity,
        }
    }
}

/// Display label for a stored method name.
pub fn method_label(name: &str) -> String {
    Method::from_str(name)
        .map(|m| m.label().to_string())
        .unwrap_or_else(|_| name.to_string())
}

fn method_rank(name: &str) -> (usize, String) {
    let rank = Method::ALL
        .iter()
        .position(|m| m.name() == name)
        .unwrap_or(Method::ALL.len());
    (rank, name.to_string())
}

type CellKey = (usize, usize);

/// Evaluation records indexed by method, seed and cell.
#[derive(Debug, Clone, Default)]
pub struct ResultSet {
    cells: BTreeMap<(usize, String), BTreeMap<u64, BTreeMap<CellKey, EvalRecord>>>,
}

impl ResultSet {
    pub fn new(records: impl IntoIterator<Item = EvalRecord>) -> Result<Self> {
        let mut set = Self::default();
        for r in records {
            let key = (r.tasks_learned, r.eval_task);
            let by_seed = set.cells.entry(method_rank(&r.method)).or_default();
            let (method, seed) = (r.method.clone(), r.seed);
            if by_seed.entry(seed).or_default().insert(key, r).is_some() {
                return Err(HarnessError::results(
                    "aggregate",
                    format!("duplicate row for {method} seed {seed} cell {key:?}"),
                ));
            }
        }
        Ok(set)
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Method names in canonical order.
    pub fn methods(&self) -> Vec<String> {
        self.cells.keys().map(|(_, m)| m.clone()).collect()
    }

    pub fn seeds(&self, method: &str) -> Vec<u64> {
        self.by_seed(method)
            .map(|s| s.keys().copied().collect())
            .unwrap_or_default()
    }

    /// Largest number of tasks learned in any record.
    pub fn tasks(&self) -> usize {
        self.records().map(|r| r.tasks_learned).max().unwrap_or(0)
    }

    fn by_seed(&self, method: &str) -> Option<&BTreeMap<u64, BTreeMap<CellKey, EvalRecord>>> {
        self.cells.get(&method_rank(method))
    }

    /// All records in canonical order: method, seed, tasks learned, evaluated task.
    pub fn records(&self) -> impl Iterator<Item = &EvalRecord> {
        self.cells.values().flat_map(|s| s.values()).flat_map(|c| c.values())
    }

    pub fn get(&self, method: &str, seed: u64, k: usize, l: usize) -> Option<&EvalRecord> {
        self.by_seed(method)?.get(&seed)?.get(&(k, l))
    }

    pub fn matrix(&self, method: &str, seed: u64, metric: Metric) -> MetricMatrix {
        let cells = self.by_seed(method).and_then(|s| s.get(&seed));
        let n = cells.and_then(|c| c.keys().map(|k| k.0).max()).unwrap_or(0);
        let mut m = MetricMatrix::new(n);
        for r in cells.into_iter().flat_map(|c| c.values()) {
            m.set(r.tasks_learned, r.eval_task, metric.of(r));
        }
        m
    }

    /// Forgetting rate of one run after `k` tasks, if its matrix has the cells.
    pub fn tfr(&self, method: &str, seed: u64, metric: Metric, k: usize) -> Option<f64> {
        tfr(&self.matrix(method, seed, metric), k).ok().flatten()
    }

    /// Forgetting rates for every run and every `k ≥ 2`.
    pub fn tfr_rows(&self, config_hash: &str) -> Vec<TfrRow> {
        let mut rows = Vec::new();
        for method in self.methods() {
            for seed in self.seeds(&method) {
                for metric in Metric::FORGETTING {
                    let m = self.matrix(&method, seed, metric);
                    for k in 2..=m.size() {
                        if let Ok(Some(value)) = tfr(&m, k) {
                            rows.push(TfrRow {
                                config_hash: config_hash.to_string(),
                                method: method.clone(),
                                seed,
                                metric: metric.name().to_string(),
                                tasks_learned: k,
                                tfr: value,
                            });
                        }
                    }
                }
            }
        }
        rows
    }

    /// Per-seed values of one cell, in seed order.
    pub fn cell_values(&self, method: &str, metric: Metric, k: usize, l: usize) -> Vec<f64> {
        self.seeds(method)
            .into_iter()
            .filter_map(|s| self.get(method, s, k, l).map(|r| metric.of(r)))
            .collect()
    }

    pub fn tfr_values(&self, method: &str, metric: Metric, k: usize) -> Vec<f64> {
        self.seeds(method)
            .into_iter()
            .filter_map(|s| self.tfr(method, s, metric, k))
            .collect()
    }

    /// Mean ± std per (method, metric, k, ℓ) plus forgetting rates per (method, k).
    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        let n = self.tasks();
        for method in self.methods() {
            for metric in Metric::ALL {
                for k in 1..=n {
                    for l in 1..=k {
                        if let Some(row) = summarize(
                            &method,
                            metric.name(),
                            k,
                            Some(l),
                            &self.cell_values(&method, metric, k, l),
                        ) {
                            rows.push(row);
                        }
                    }
                }
            }
            for metric in Metric::FORGETTING {
                for k in 2..=n {
                    if let Some(row) = summarize(
                        &method,
                        &metric.tfr_name(),
                        k,
                        None,
                        &self.tfr_values(&method, metric, k),
                    ) {
                        rows.push(row);
                    }
                }
            }
        }
        rows
    }

    /// Values of `a` and `b` paired by seed. Every seed present for either
    /// method must be present, with the requested value, for both.
    pub fn paired(&self, a: &str, b: &str, value: impl Fn(&str, u64) -> Option<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let seeds: BTreeSet<u64> = self.seeds(a).into_iter().chain(self.seeds(b)).collect();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for seed in seeds {
            for (method, out) in [(a, &mut xs), (b, &mut ys)] {
                let v = value(method, seed).ok_or_else(|| HarnessError::Unpaired {
                    method: method.to_string(),
                    seed,
                })?;
                out.push(v);
            }
        }
        Ok((xs, ys))
    }

    /// Wilcoxon signed-rank tests for every method pair on the final row of
    /// each metric and on the final forgetting rates, Benjamini–Hochberg
    /// adjusted within each metric across all pairs and tasks.
    pub fn significance(&self, pairs: &[(String, String)]) -> Result<Vec<SignificanceRow>> {
        let n = self.tasks();
        let mut rows = Vec::new();
        let mut push_family = |family: Vec<(String, String, String, f64)>| -> Result<()> {
            let p: Vec<f64> = family.iter().map(|f| f.3).collect();
            let adj = benjamini_hochberg(&p, FDR_Q)?;
            for (i, (comparison, metric, task, raw_p)) in family.into_iter().enumerate() {
                rows.push(SignificanceRow {
                    comparison,
                    metric,
                    task,
                    raw_p,
                    adj_p: adj.adjusted[i],
                    reject: adj.reject[i],
                });
            }
            Ok(())
        };
        let label = |a: &str, b: &str| format!("{} vs {}", method_label(a), method_label(b));
        for metric in Metric::ALL {
            let mut family = Vec::new();
            for (a, b) in pairs {
                for l in 1..=n {
                    let (x, y) = self.paired(a, b, |m, s| self.get(m, s, n, l).map(|r| metric.of(r)))?;
                    let p = wilcoxon_signed_rank(&PairedSample::new(x, y, metric.name(), l.to_string())?).p_value;
                    family.push((label(a, b), metric.name().to_string(), l.to_string(), p));
                }
            }
            push_family(family)?;
        }
        for metric in Metric::FORGETTING {
            let mut family = Vec::new();
            if n >= 2 {
                for (a, b) in pairs {
                    let (x, y) = self.paired(a, b, |m, s| self.tfr(m, s, metric, n))?;
                    let p = wilcoxon_signed_rank(&PairedSample::new(x, y, metric.tfr_name(), "overall")?).p_value;
                    family.push((label(a, b), metric.tfr_name(), "overall".to_string(), p));
                }
            }
            push_family(family)?;
        }
        Ok(rows)
    }

    /// Curve data per (method, metric, ℓ): x = tasks learned, y = mean, err = std.
    pub fn curve_rows(&self, order: &str, concepts: &[String]) -> Vec<CurveRow> {
        let mut rows = Vec::new();
        let n = self.tasks();
        for method in self.methods() {
            for metric in Metric::ALL {
                for l in 1..=n {
                    for k in l..=n {
                        let values = self.cell_values(&method, metric, k, l);
                        let Ok(ms) = mean_std(&values) else { continue };
                        rows.push(CurveRow {
                            order: order.to_string(),
                            method: method.clone(),
                            metric: metric.name().to_string(),
                            eval_task: l,
                            concept: concepts.get(l - 1).cloned().unwrap_or_default(),
                            x: k,
                            y: ms.mean,
                            err: ms.std.unwrap_or(0.0),
                            n: values.len(),
                        });
                    }
                }
            }
        }
        rows
    }
}

fn summarize(method: &str, metric: &str, k: usize, l: Option<usize>, values: &[f64]) -> Option<SummaryRow> {
    let ms = mean_std(values).ok()?;
    Some(SummaryRow {
        method: method.to_string(),
        metric: metric.to_string(),
        tasks_learned: k,
        eval_task: l,
        n: values.len(),
        mean: ms.mean,
        std: ms.std,
    })
}

/// Every unordered pair of `methods`, in list order.
pub fn all_pairs(methods: &[String]) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for (i, a) in methods.iter().enumerate() {
        for b in &methods[i + 1..] {
            pairs.push((a.clone(), b.clone()));
        }
    }
    pairs
}
