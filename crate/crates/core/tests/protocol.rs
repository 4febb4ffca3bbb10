//! Training-protocol conformance: method reductions, restarts, step
//! accounting, buffer population and hygiene, determinism.

use std::cell::Cell;

use lrlab_core::continual::{
    pretrain, run_sequence, train_task, train_task_with_hook, Method, MethodConfig, PretrainConfig, SequenceConfig,
    TrainContext,
};
use lrlab_core::diffusion::{DiffusionSchedule, ScheduleConfig};
use lrlab_core::latentspace::{TaskSuite, TaskSuiteSpec};
use lrlab_core::numerics::{DenoiserConfig, DenoiserNet};
use lrlab_core::replay::{MemoryBuffer, PayloadKind};
use lrlab_core::rng::{RngStreams, StreamKind};

fn suite(tasks: usize) -> TaskSuite<f64> {
    let mut spec = TaskSuiteSpec::default();
    spec.names.truncate(tasks);
    TaskSuite::generate(&spec).unwrap()
}

fn param_bits(net: &DenoiserNet<f64>) -> Vec<u64> {
    net.layers()
        .iter()
        .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).map(|v| v.to_bits()))
        .collect()
}

/// A pre-trained starting point, as in a full run.
fn fresh_net(seed: u64) -> DenoiserNet<f64> {
    let mut rng = RngStreams::new(seed).stream(StreamKind::Init, 0, 0);
    let net = DenoiserNet::new(DenoiserConfig::default(), &mut rng).unwrap();
    let schedule = DiffusionSchedule::linear(&ScheduleConfig::default()).unwrap();
    pretrain(net, &schedule, &PretrainConfig::default(), &mut rng).unwrap()
}

struct Fixture {
    suite: TaskSuite<f64>,
    schedule: DiffusionSchedule<f64>,
}

impl Fixture {
    fn new() -> Self {
        Self {
            suite: suite(1),
            schedule: DiffusionSchedule::linear(&ScheduleConfig::default()).unwrap(),
        }
    }

    fn ctx(&self, seed: u64) -> TrainContext<'_, f64> {
        TrainContext {
            suite: &self.suite,
            schedule: &self.schedule,
            streams: RngStreams::new(seed),
        }
    }
}

#[test]
fn zero_lambda_replay_reproduces_naive() {
    let suite = suite(3);
    let order = [0, 1, 2];
    let mut naive = SequenceConfig::new(Method::Naive);
    naive.pretrain.steps = 500;
    let reference = run_sequence(&naive, &suite, &order, 5).unwrap();
    for method in [Method::Er, Method::Lr, Method::Slr] {
        let mut cfg = naive.clone();
        cfg.method = MethodConfig::new(method);
        cfg.method.lambda_memory = 0.0;
        cfg.method.loss_threshold = naive.method.loss_threshold;
        let run = run_sequence(&cfg, &suite, &order, 5).unwrap();
        assert!(
            run.tasks[1].replayed.values().sum::<usize>() > 0,
            "{method} never replayed"
        );
        assert_eq!(param_bits(&run.model), param_bits(&reference.model), "{method}");
        for (a, b) in run.tasks.iter().zip(&reference.tasks) {
            assert_eq!(a.loss_trace, b.loss_trace);
            assert_eq!(a.restarts, b.restarts);
        }
        for (a, b) in run.records.iter().zip(&reference.records) {
            assert_eq!((a.ia, a.ta, a.diversity), (b.ia, b.ta, b.diversity));
        }
    }
}

#[test]
fn spike_at_step_150_restarts_once() {
    let fx = Fixture::new();
    let cfg = MethodConfig::new(Method::Naive);
    let spike = |attempt: usize, step: usize, loss: f64| if attempt == 0 && step == 150 { 100.0 } else { loss };
    let out = train_task_with_hook(
        &fx.ctx(1),
        fresh_net(1),
        &[0],
        1,
        &cfg,
        &MemoryBuffer::new(0),
        Some(&spike),
    )
    .unwrap();
    assert_eq!(out.restarts, 1);
    assert_eq!(out.restart_steps, vec![150]);
    assert!(!out.failed);
    assert_eq!(out.steps, 800);
}

#[test]
fn restart_reseeds_the_attempt() {
    let fx = Fixture::new();
    let cfg = MethodConfig::new(Method::Naive);
    let spike = |attempt: usize, step: usize, loss: f64| if attempt == 0 && step == 150 { 100.0 } else { loss };
    let clean = train_task(&fx.ctx(1), fresh_net(1), &[0], 1, &cfg, &MemoryBuffer::new(0)).unwrap();
    let restarted = train_task_with_hook(
        &fx.ctx(1),
        fresh_net(1),
        &[0],
        1,
        &cfg,
        &MemoryBuffer::new(0),
        Some(&spike),
    )
    .unwrap();
    assert_ne!(clean.loss_trace, restarted.loss_trace);
}

#[test]
fn thresholds_separate_plain_and_replay_methods() {
    let fx = Fixture::new();
    // Smoothed loss settles at 1.25 during the first attempt only.
    let plateau = |attempt: usize, step: usize, loss: f64| if attempt == 0 && step >= 150 { 1.25 } else { loss };
    for (method, expected) in [
        (Method::Naive, 1),
        (Method::Offline, 1),
        (Method::Er, 0),
        (Method::Lr, 0),
        (Method::Slr, 0),
    ] {
        let cfg = MethodConfig::new(method);
        let out = train_task_with_hook(
            &fx.ctx(2),
            fresh_net(2),
            &[0],
            1,
            &cfg,
            &MemoryBuffer::new(0),
            Some(&plateau),
        )
        .unwrap();
        assert_eq!(out.restarts, expected, "{method}");
    }
}

#[test]
fn persistent_breach_fails_after_five_retries() {
    let fx = Fixture::new();
    let cfg = MethodConfig::new(Method::Lr);
    let attempts = Cell::new(0usize);
    let always = |attempt: usize, step: usize, _loss: f64| {
        attempts.set(attempts.get().max(attempt + 1));
        if step >= 60 {
            2.0
        } else {
            0.1
        }
    };
    let start = fresh_net(3);
    let out = train_task_with_hook(
        &fx.ctx(3),
        start.clone(),
        &[0],
        1,
        &cfg,
        &MemoryBuffer::new(0),
        Some(&always),
    )
    .unwrap();
    assert!(out.failed);
    assert_eq!(out.restarts, 5);
    assert_eq!(attempts.get(), 6);
    assert_eq!(out.restart_steps.len(), 6);
    assert_eq!(param_bits(&out.model), param_bits(&start));
}

#[test]
fn spikes_during_warmup_are_ignored() {
    let fx = Fixture::new();
    let cfg = MethodConfig::new(Method::Naive);
    let early = |_: usize, step: usize, loss: f64| if step == 20 { 100.0 } else { loss };
    let out = train_task_with_hook(
        &fx.ctx(4),
        fresh_net(4),
        &[0],
        1,
        &cfg,
        &MemoryBuffer::new(0),
        Some(&early),
    )
    .unwrap();
    assert_eq!(out.restarts, 0);
}

#[test]
fn early_stop_waits_for_min_steps() {
    let fx = Fixture::new();
    let mut cfg = MethodConfig::new(Method::Naive);
    cfg.early_stop_loss = Some(1e6);
    let out = train_task(&fx.ctx(5), fresh_net(5), &[0], 1, &cfg, &MemoryBuffer::new(0)).unwrap();
    assert_eq!(out.steps, 100);
    assert_eq!(out.optimizer_updates, 25);

    cfg.min_steps = 101;
    let out = train_task(&fx.ctx(5), fresh_net(5), &[0], 1, &cfg, &MemoryBuffer::new(0)).unwrap();
    assert_eq!(out.steps, 101);
    assert_eq!(out.optimizer_updates, 26);
}

#[test]
fn optimizer_updates_are_ceil_of_micro_steps() {
    let fx = Fixture::new();
    for (max_steps, accumulation) in [(800, 4), (103, 4), (7, 3), (5, 1)] {
        let mut cfg = MethodConfig::new(Method::Naive);
        cfg.max_steps = max_steps;
        cfg.min_steps = 0;
        cfg.grad_accumulation = accumulation;
        let out = train_task(&fx.ctx(6), fresh_net(6), &[0], 1, &cfg, &MemoryBuffer::new(0)).unwrap();
        assert_eq!(out.steps, max_steps);
        assert_eq!(out.optimizer_updates, max_steps.div_ceil(accumulation));
        assert_eq!(out.optimizer_updates, cfg.optimizer_updates(out.steps));
    }
}

#[test]
fn buffer_after_first_task_holds_only_that_task() {
    let suite = suite(1);
    for (method, kind, capacity) in [
        (Method::Lr, PayloadKind::Latent, 80),
        (Method::Er, PayloadKind::Raw, 10),
    ] {
        let mut cfg = SequenceConfig::new(method);
        cfg.pretrain.steps = 0;
        let run = run_sequence(&cfg, &suite, &[0], 7).unwrap();
        let offers = suite.spec.samples_per_task;
        assert_eq!(run.buffer.capacity(), capacity);
        assert_eq!(run.buffer.seen(), offers as u64);
        assert_eq!(run.buffer.len(), capacity.min(offers));
        assert!(run.buffer.items().iter().all(|it| it.task_id == 0 && it.kind == kind));
    }
}

#[test]
fn replay_only_draws_earlier_tasks() {
    let suite = suite(5);
    let order: Vec<usize> = (0..5).collect();
    for method in [Method::Er, Method::Lr, Method::Slr] {
        let mut cfg = SequenceConfig::new(method);
        cfg.pretrain.steps = 500;
        let run = run_sequence(&cfg, &suite, &order, 8).unwrap();
        assert!(run.tasks[0].replayed.is_empty());
        for report in &run.tasks[1..] {
            assert!(!report.replayed.is_empty() || report.failed);
            assert!(
                report.replayed.keys().all(|&t| t + 1 < report.position),
                "{method} {report:?}"
            );
        }
        assert_eq!(
            run.buffer.task_composition().keys().copied().collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4]
        );
    }
}

#[test]
fn single_task_sequence_has_one_cell() {
    let suite = suite(1);
    let mut cfg = SequenceConfig::new(Method::Naive);
    cfg.pretrain.steps = 0;
    let run = run_sequence(&cfg, &suite, &[0], 9).unwrap();
    assert_eq!(run.records.len(), 1);
    assert!(run.record(1, 1).is_some());
}

#[test]
fn run_sequence_is_bit_reproducible() {
    let suite = suite(2);
    let mut cfg = SequenceConfig::new(Method::Slr);
    cfg.pretrain.steps = 300;
    let a = run_sequence(&cfg, &suite, &[1, 0], 10).unwrap();
    let b = run_sequence(&cfg, &suite, &[1, 0], 10).unwrap();
    assert_eq!(param_bits(&a.model), param_bits(&b.model));
    assert_eq!(a.records, b.records);
    assert_eq!(a.tasks, b.tasks);
    assert_eq!(a.order, vec!["toy".to_string(), "dog".to_string()]);
}

#[test]
fn sequence_rejects_bad_orders() {
    let suite = suite(2);
    let cfg = SequenceConfig::new(Method::Naive);
    assert!(run_sequence(&cfg, &suite, &[], 0).is_err());
    assert!(run_sequence(&cfg, &suite, &[0, 2], 0).is_err());
}
