//! Markdown summary of one experiment.

use std::fmt::Write;

use crate::analysis::{method_label, Metric, ResultSet};
use crate::results::{RunFile, RunStatus, SignificanceRow};

pub struct ReportInput<'a> {
    pub config_hash: &'a str,
    pub order: &'a str,
    pub concepts: &'a [String],
    pub seeds: &'a [u64],
    pub results: &'a ResultSet,
    /// Significance rows, or the reason they could not be computed.
    pub significance: &'a Result<Vec<SignificanceRow>, String>,
    pub runs: &'a [RunFile],
}

fn cell(values: &[f64]) -> String {
    match lrlab_core::stats::mean_std(values) {
        Ok(ms) => match ms.std {
            Some(sd) => format!("{:.3} ± {:.3}", ms.mean, sd),
            None => format!("{:.3}", ms.mean),
        },
        Err(_) => "n/a".into(),
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    lrlab_core::stats::mean_std(values).ok().map(|m| m.mean)
}

fn table_header(out: &mut String, first: &str, columns: &[String]) {
    let _ = writeln!(out, "| {first} | {} |", columns.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(columns.len()));
}

pub fn render(input: &ReportInput<'_>) -> String {
    let set = input.results;
    let n = set.tasks();
    let methods = set.methods();
    let mut out = String::new();
    let _ = writeln!(out, "# Results\n");
    let _ = writeln!(out, "- config: `{}`", input.config_hash);
    let _ = writeln!(out, "- task order ({}): {}", input.order, input.concepts.join(" → "));
    let _ = writeln!(out, "- seeds: {} ({:?})", input.seeds.len(), input.seeds);
    let _ = writeln!(out, "\nCells are mean ± sample std across seeds after all {n} tasks.\n");

    let concept_cols: Vec<String> = (1..=n)
        .map(|l| {
            input
                .concepts
                .get(l - 1)
                .cloned()
                .unwrap_or_else(|| format!("task {l}"))
        })
        .collect();
    for metric in Metric::ALL {
        let _ = writeln!(out, "## {}\n", metric.label());
        table_header(&mut out, "Method", &concept_cols);
        for m in &methods {
            let cells: Vec<String> = (1..=n).map(|l| cell(&set.cell_values(m, metric, n, l))).collect();
            let _ = writeln!(out, "| {} | {} |", method_label(m), cells.join(" | "));
        }
        out.push('\n');
    }

    let _ = writeln!(out, "## Forgetting\n");
    table_header(&mut out, "Method", &["TFR-IA".to_string(), "TFR-TA".to_string()]);
    for m in &methods {
        let cells: Vec<String> = Metric::FORGETTING
            .iter()
            .map(|&mt| cell(&set.tfr_values(m, mt, n)))
            .collect();
        let _ = writeln!(out, "| {} | {} |", method_label(m), cells.join(" | "));
    }
    out.push('\n');

    let _ = writeln!(out, "## Significant differences\n");
    match input.significance {
        Ok(rows) if !rows.is_empty() => {
            let _ = writeln!(
                out,
                "Two-sided Wilcoxon signed-rank on seed-paired values, Benjamini–Hochberg at q = 0.05 within each metric. \
                 Per-task metrics count significant tasks; forgetting rates show the adjusted p value (* = significant).\n"
            );
            let metric_cols: Vec<String> = Metric::ALL
                .iter()
                .map(|m| m.label().to_string())
                .chain(Metric::FORGETTING.iter().map(|m| format!("TFR-{}", m.label())))
                .collect();
            let mut comparisons: Vec<&str> = Vec::new();
            for r in rows {
                if !comparisons.contains(&r.comparison.as_str()) {
                    comparisons.push(&r.comparison);
                }
            }
            table_header(&mut out, "Comparison", &metric_cols);
            for c in comparisons {
                let mut cells = Vec::new();
                for metric in Metric::ALL {
                    let hits: Vec<_> = rows
                        .iter()
                        .filter(|r| r.comparison == c && r.metric == metric.name())
                        .collect();
                    let sig = hits.iter().filter(|r| r.reject).count();
                    cells.push(format!("{sig}/{}", hits.len()));
                }
                for metric in Metric::FORGETTING {
                    let name = metric.tfr_name();
                    let text = rows
                        .iter()
                        .find(|r| r.comparison == c && r.metric == name)
                        .map(|r| format!("{:.4}{}", r.adj_p, if r.reject { "*" } else { "" }))
                        .unwrap_or_else(|| "n/a".into());
                    cells.push(text);
                }
                let _ = writeln!(out, "| {c} | {} |", cells.join(" | "));
            }
            out.push('\n');
        }
        Ok(_) => {
            let _ = writeln!(out, "Needs at least two methods.\n");
        }
        Err(reason) => {
            let _ = writeln!(out, "Not computed: {reason}\n");
        }
    }

    if methods.iter().any(|m| m == "slr") && methods.iter().any(|m| m == "lr") && n >= 2 {
        let slr = mean(&set.tfr_values("slr", Metric::Ia, n));
        let lr = mean(&set.tfr_values("lr", Metric::Ia, n));
        if let (Some(slr), Some(lr)) = (slr, lr) {
            let p = match input.significance {
                Ok(rows) => rows
                    .iter()
                    .find(|r| r.metric == "tfr_ia" && (r.comparison == "LR vs SLR" || r.comparison == "SLR vs LR"))
                    .map(|r| format!(", adjusted p = {:.4}", r.adj_p))
                    .unwrap_or_default(),
                Err(_) => String::new(),
            };
            let verdict = if slr > lr {
                "SLR forgets more than LR, the direction reported at full scale"
            } else {
                "SLR does not forget more than LR here; the full-scale finding that similarity retrieval hurts is not replicated at this scale"
            };
            let _ = writeln!(out, "## SLR vs LR\n");
            let _ = writeln!(out, "> **Mean TFR-IA: SLR {slr:.4}, LR {lr:.4}{p}.** {verdict}.\n");
        }
    }

    let _ = writeln!(out, "## Failures\n");
    let troubled: Vec<&RunFile> = input.runs.iter().filter(|r| r.status != RunStatus::Ok).collect();
    if troubled.is_empty() {
        let _ = writeln!(out, "None.");
    }
    for r in troubled {
        let what = match (&r.error, r.failed_tasks()) {
            (Some(e), _) => format!("error: {e}"),
            (None, tasks) => format!("tasks {tasks:?} exhausted their retries and kept the previous model"),
        };
        let _ = writeln!(out, "- {} seed {}: {what}", r.method.label(), r.seed);
    }
    let restarts: usize = input.runs.iter().flat_map(|r| &r.tasks).map(|t| t.restarts).sum();
    let _ = writeln!(out, "\nTotal restarts across all runs: {restarts}.");
    out
}
