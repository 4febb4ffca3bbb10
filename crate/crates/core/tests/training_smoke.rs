//! Short real training runs. "Reaching" a loss means the trainer's smoothed
//! loss falls below it, which is what triggers early stopping.

use lrlab_core::continual::{
    pretrain, run_sequence, train_task, Method, MethodConfig, PretrainConfig, SequenceConfig, TrainContext,
};
use lrlab_core::diffusion::{DiffusionSchedule, ScheduleConfig};
use lrlab_core::latentspace::{TaskSuite, TaskSuiteSpec};
use lrlab_core::metrics::{tfr, MetricMatrix};
use lrlab_core::numerics::{DenoiserConfig, DenoiserNet};
use lrlab_core::replay::MemoryBuffer;
use lrlab_core::rng::{RngStreams, StreamKind};
use lrlab_core::stats::mean_std;

fn pretrained(seed: u64, schedule: &DiffusionSchedule<f64>) -> DenoiserNet<f64> {
    let mut rng = RngStreams::new(seed).stream(StreamKind::Init, 0, 0);
    let net = DenoiserNet::new(DenoiserConfig::default(), &mut rng).unwrap();
    pretrain(net, schedule, &PretrainConfig::default(), &mut rng).unwrap()
}

/// Seeds out of 10 whose Naive run reaches `target` within 800 steps.
fn seeds_reaching(spec: &TaskSuiteSpec, target: f64) -> usize {
    let suite: TaskSuite<f64> = TaskSuite::generate(spec).unwrap();
    let schedule = DiffusionSchedule::linear(&ScheduleConfig::default()).unwrap();
    let mut cfg = MethodConfig::new(Method::Naive);
    cfg.early_stop_loss = Some(target);
    (0..10)
        .filter(|&seed| {
            let ctx = TrainContext {
                suite: &suite,
                schedule: &schedule,
                streams: RngStreams::new(seed),
            };
            let out = train_task(&ctx, pretrained(seed, &schedule), &[0], 1, &cfg, &MemoryBuffer::new(0)).unwrap();
            !out.failed && out.steps < cfg.max_steps
        })
        .count()
}

#[test]
fn two_gaussian_mixture_reaches_loss_point_one() {
    let spec = TaskSuiteSpec {
        names: vec!["mixture".into()],
        components_per_task: 2,
        ..Default::default()
    };
    let hits = seeds_reaching(&spec, 0.1);
    assert!(hits >= 9, "{hits}/10 seeds");
}

#[test]
fn single_point_dataset_reaches_loss_point_zero_five() {
    let spec = TaskSuiteSpec {
        names: vec!["point".into()],
        components_per_task: 1,
        component_std: 0.0,
        samples_per_task: 1,
        prompt_variants: 0,
        ..Default::default()
    };
    let hits = seeds_reaching(&spec, 0.05);
    assert!(hits >= 9, "{hits}/10 seeds");
}

#[test]
fn offline_keeps_first_task_alignment() {
    let mut spec = TaskSuiteSpec::default();
    spec.names.truncate(2);
    let suite: TaskSuite<f64> = TaskSuite::generate(&spec).unwrap();
    let cfg = SequenceConfig::new(Method::Offline);
    let (mut first, mut after) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let run = run_sequence(&cfg, &suite, &[0, 1], seed).unwrap();
        first.push(run.record(1, 1).unwrap().ia);
        after.push(run.record(2, 1).unwrap().ia);
    }
    let spread = mean_std(&first).unwrap().std.unwrap();
    let diffs: Vec<f64> = after.iter().zip(&first).map(|(a, b)| a - b).collect();
    let shift = mean_std(&diffs).unwrap().mean;
    assert!(shift.abs() < spread, "I21 - I11 = {shift}, seed spread {spread}");
}

#[test]
fn offline_final_metrics_ignore_task_order() {
    let suite: TaskSuite<f64> = TaskSuite::generate(&TaskSuiteSpec::default()).unwrap();
    let cfg = SequenceConfig::new(Method::Offline);
    let forward: Vec<usize> = (0..5).collect();
    let reversed: Vec<usize> = (0..5).rev().collect();
    let final_tfr = |order: &[usize]| -> Vec<f64> {
        (0..10)
            .map(|seed| {
                let run = run_sequence(&cfg, &suite, order, seed).unwrap();
                let mut m = MetricMatrix::new(5);
                for r in &run.records {
                    m.set(r.tasks_learned, r.eval_task, r.ia);
                }
                tfr(&m, 5).unwrap().unwrap()
            })
            .collect()
    };
    let f = mean_std(&final_tfr(&forward)).unwrap();
    let r = mean_std(&final_tfr(&reversed)).unwrap();
    let spread = f.std.unwrap().max(r.std.unwrap());
    assert!((f.mean - r.mean).abs() < spread, "{f:?} vs {r:?}");
}
