//! Results files written by a run: schemas, row counts, golden values,
//! determinism and the derived tables.

use std::fs;
use std::path::Path;

use lrlab_core::continual::Method;
use lrlab_core::stats::mean_std;
use lrlab_harness::analysis::Metric;
use lrlab_harness::io::read_csv;
use lrlab_harness::results::{AggregateRow, CurveRow, RunFile, SummaryRow, TfrRow};
use lrlab_harness::run::{report_command, Manifest, AGGREGATE_CSV, CURVES_CSV, MANIFEST_JSON, SUMMARY_CSV, TFR_CSV};
use lrlab_harness::{run_experiment, Completion, ExperimentConfig, RunOptions, TaskOrder};

const MINIMAL: &str = r#"
version = 1
methods = ["naive"]
seeds = [0]

[suite]
names = ["dog", "cat"]
"#;

/// Short training so that full method × seed grids stay fast.
fn quick(methods: &[Method], seeds: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        methods: methods.to_vec(),
        seeds: (0..seeds).collect(),
        n_eval: 3,
        ..Default::default()
    };
    c.pretrain.steps = 200;
    c.training.max_steps = 60;
    c.training.min_steps = 0;
    c
}

fn run_in(dir: &Path, config: &ExperimentConfig) -> lrlab_harness::RunOutcome {
    run_experiment(config, &RunOptions::new(dir)).unwrap()
}

#[test]
fn minimal_config_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
    let outcome = run_in(dir.path(), &config);
    assert_eq!(outcome.completion(), Completion::Clean);
    let csv = fs::read_to_string(dir.path().join(AGGREGATE_CSV)).unwrap();
    let golden = include_str!("golden/minimal_aggregate.csv");
    assert_eq!(csv, golden);
    let rows: Vec<AggregateRow> = read_csv(&dir.path().join(AGGREGATE_CSV)).unwrap();
    let cells: Vec<(usize, usize)> = rows.iter().map(|r| (r.tasks_learned, r.eval_task)).collect();
    assert_eq!(cells, vec![(1, 1), (2, 1), (2, 2)]);
    assert!(rows.iter().all(|r| r.config_hash == config.hash()));
}

#[test]
fn header_is_the_documented_schema() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &quick(&[Method::Naive], 1));
    let header = |name: &str| {
        fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(header(AGGREGATE_CSV), AggregateRow::HEADER.join(","));
    assert_eq!(header(TFR_CSV), TfrRow::HEADER.join(","));
    assert_eq!(header(SUMMARY_CSV), SummaryRow::HEADER.join(","));
    assert_eq!(header(CURVES_CSV), CurveRow::HEADER.join(","));
}

#[test]
fn full_grid_has_750_rows_and_is_reproducible() {
    let config = quick(&Method::ALL, 10);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_in(a.path(), &config);
    let rows: Vec<AggregateRow> = read_csv(&a.path().join(AGGREGATE_CSV)).unwrap();
    assert_eq!(rows.len(), 5 * 10 * 15);
    assert_eq!(first.runs.len(), 50);

    let opts = RunOptions {
        jobs: 1,
        ..RunOptions::new(b.path())
    };
    run_experiment(&config, &opts).unwrap();
    for name in [
        AGGREGATE_CSV,
        TFR_CSV,
        SUMMARY_CSV,
        CURVES_CSV,
        MANIFEST_JSON,
        "summary.md",
        "significance.csv",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs between runs"
        );
    }
}

#[test]
fn run_files_and_manifest_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        task_order: TaskOrder::Reversed,
        ..quick(&[Method::Er, Method::Lr], 2)
    };
    let outcome = run_in(dir.path(), &config);
    let manifest: Manifest = lrlab_harness::io::read_json(&dir.path().join(MANIFEST_JSON)).unwrap();
    assert_eq!(manifest, outcome.manifest);
    assert_eq!(manifest.config, config);
    assert_eq!(manifest.concepts.first().map(String::as_str), Some("plushie"));
    assert_eq!(manifest.capacities["er"], 10);
    assert_eq!(manifest.capacities["lr"], 80);
    assert_eq!(manifest.runs.len(), 4);
    for entry in &manifest.runs {
        let run: RunFile = lrlab_harness::io::read_json(&dir.path().join(&entry.file)).unwrap();
        assert_eq!(
            (run.method, run.seed, run.status),
            (entry.method, entry.seed, entry.status)
        );
        assert_eq!(run.order, manifest.concepts);
        assert_eq!(run.records.len(), 15);
        assert!(run.tasks.iter().all(|t| t.loss_trace.len() <= 100));
    }
    let leftovers: Vec<_> = fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn seed_offset_shifts_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        seed_offset: 100,
        ..RunOptions::new(dir.path())
    };
    let outcome = run_experiment(&quick(&[Method::Naive], 2), &opts).unwrap();
    assert_eq!(outcome.manifest.seeds, vec![100, 101]);
    assert!(dir.path().join("runs/naive_seed101.json").exists());
}

#[test]
fn curves_carry_mean_and_std_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_in(dir.path(), &quick(&[Method::Naive, Method::Lr], 10));
    let curves: Vec<CurveRow> = read_csv(&dir.path().join(CURVES_CSV)).unwrap();
    assert_eq!(curves.len(), 2 * 3 * 15);
    for row in &curves {
        let metric = Metric::ALL.into_iter().find(|m| m.name() == row.metric).unwrap();
        let values = outcome.results.cell_values(&row.method, metric, row.x, row.eval_task);
        let ms = mean_std(&values).unwrap();
        assert_eq!(row.n, 10);
        assert_eq!(row.y, ms.mean);
        assert_eq!(row.err, ms.std.unwrap());
        assert_eq!(row.order, "forward");
        assert_eq!(row.concept, outcome.manifest.concepts[row.eval_task - 1]);
    }
    // The report command reproduces the file from the aggregate table.
    let before = fs::read(dir.path().join(CURVES_CSV)).unwrap();
    fs::remove_file(dir.path().join(CURVES_CSV)).unwrap();
    report_command(dir.path()).unwrap();
    assert_eq!(fs::read(dir.path().join(CURVES_CSV)).unwrap(), before);
}

#[test]
fn single_seed_curves_have_zero_error_bars() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        task_order: TaskOrder::Reversed,
        ..quick(&[Method::Slr], 1)
    };
    run_in(dir.path(), &config);
    let curves: Vec<CurveRow> = read_csv(&dir.path().join(CURVES_CSV)).unwrap();
    assert!(!curves.is_empty());
    assert!(curves.iter().all(|r| r.err == 0.0 && r.n == 1 && r.order == "reversed"));
}

#[test]
fn summary_and_tfr_tables_agree_with_records() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_in(dir.path(), &quick(&[Method::Naive], 3));
    let tfr: Vec<TfrRow> = read_csv(&dir.path().join(TFR_CSV)).unwrap();
    // Two metrics, k = 2..=5, three seeds.
    assert_eq!(tfr.len(), 2 * 4 * 3);
    let summary: Vec<SummaryRow> = read_csv(&dir.path().join(SUMMARY_CSV)).unwrap();
    let final_tfr = summary
        .iter()
        .find(|r| r.metric == "tfr_ia" && r.tasks_learned == 5)
        .unwrap();
    let values: Vec<f64> = tfr
        .iter()
        .filter(|r| r.metric == "ia" && r.tasks_learned == 5)
        .map(|r| r.tfr)
        .collect();
    assert_eq!(final_tfr.eval_task, None);
    assert_eq!(final_tfr.mean, mean_std(&values).unwrap().mean);
    let by_hand = |seed: u64| {
        let r = |k, l| outcome.results.get("naive", seed, k, l).unwrap().ia;
        (1..5).map(|l| r(l, l) - r(5, l)).sum::<f64>() / 4.0
    };
    for (i, v) in values.iter().enumerate() {
        assert!((v - by_hand(i as u64)).abs() < 1e-12);
    }
}

#[test]
fn exhausted_retries_mark_the_run_partial() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = quick(&[Method::Naive], 1);
    config.training.loss_threshold_plain = 1e-6;
    config.training.warmup_steps = 5;
    config.training.max_steps = 20;
    let outcome = run_in(dir.path(), &config);
    assert_eq!(outcome.completion(), Completion::Partial);
    assert_eq!(outcome.manifest.runs[0].failed_tasks, vec![1, 2, 3, 4, 5]);
    // Failed tasks keep the previous model but are still evaluated.
    assert_eq!(outcome.runs[0].records.len(), 15);
    let md = fs::read_to_string(dir.path().join("summary.md")).unwrap();
    assert!(md.contains("exhausted their retries"), "{md}");
}
