//! Sequential training with optional replay, the loss-threshold restart
//! protocol, and per-task evaluation.
//!
//! A run trains one denoiser through a sequence of concept tasks. Each task is
//! a flat budget of batch-size-1 micro-steps; gradients are averaged over
//! `grad_accumulation` micro-steps per AdamW update. Replay methods add one
//! retrieved item per micro-step and optimize
//! `(1 − λ)·L_current + λ·L_memory`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{self, draw_noised, loss_grad_at, DiffusionSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::latentspace::{ConceptTask, TaskSuite};
use crate::metrics::{image_alignment, text_alignment, vendi_score, EvalRecord};
use crate::numerics::{
    clip_grad_norm, norm, warmup_scale, AdamWConfig, AdamWState, DenoiserConfig, DenoiserNet, Gradients, Scalar,
};
use crate::replay::{equal_budget_capacities, form_query, MemoryBuffer, PayloadKind, ReplayItem, BYTES_PER_SCALAR};
use crate::rng::{normal_vec, RngStreams, StreamKind, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Naive,
    Er,
    Lr,
    Slr,
    Offline,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Naive, Method::Er, Method::Lr, Method::Slr, Method::Offline];

    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Er => "er",
            Method::Lr => "lr",
            Method::Slr => "slr",
            Method::Offline => "offline",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Naive => "Naive",
            Method::Er => "ER",
            Method::Lr => "LR",
            Method::Slr => "SLR",
            Method::Offline => "Offline",
        }
    }

    /// What the method stores in its buffer, if it replays at all.
    pub fn payload(self) -> Option<PayloadKind> {
        match self {
            Method::Er => Some(PayloadKind::Raw),
            Method::Lr | Method::Slr => Some(PayloadKind::Latent),
            Method::Naive | Method::Offline => None,
        }
    }

    pub fn uses_replay(self) -> bool {
        self.payload().is_some()
    }

    pub fn default_loss_threshold(self) -> f64 {
        if self.uses_replay() {
            1.5
        } else {
            1.0
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Learning rate used by the toy-scale defaults.
pub const TOY_LEARNING_RATE: f64 = 1e-3;

/// Training protocol for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Method,
    pub lambda_memory: f64,
    pub memory_budget_bytes: u64,
    /// Candidates kept by similarity retrieval before subsampling.
    pub retrieval_k: usize,
    pub loss_threshold: f64,
    pub max_retries: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    pub grad_accumulation: usize,
    pub warmup_steps: usize,
    /// Span of the loss moving average watched by the restart trigger.
    pub ema_span: usize,
    /// Stop once the smoothed loss falls below this (never before `min_steps`).
    pub early_stop_loss: Option<f64>,
    pub optimizer: AdamWConfig,
    pub max_grad_norm: f64,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            lambda_memory: 0.5,
            memory_budget_bytes: 2560,
            retrieval_k: 4,
            loss_threshold: method.default_loss_threshold(),
            max_retries: 5,
            min_steps: 100,
            max_steps: 800,
            grad_accumulation: 4,
            warmup_steps: 50,
            ema_span: 10,
            early_stop_loss: None,
            optimizer: AdamWConfig {
                learning_rate: TOY_LEARNING_RATE,
                ..AdamWConfig::default()
            },
            max_grad_norm: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.lambda_memory) {
            return fail("lambda_memory must lie in [0, 1]");
        }
        if self.loss_threshold.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return fail("loss_threshold must be positive");
        }
        if self.max_steps == 0 || self.min_steps > self.max_steps {
            return fail("steps must satisfy 0 <= min_steps <= max_steps, max_steps > 0");
        }
        if self.grad_accumulation == 0 || self.ema_span == 0 {
            return fail("grad_accumulation and ema_span must be positive");
        }
        if self.method == Method::Slr && self.retrieval_k == 0 {
            return fail("retrieval_k must be positive for similarity retrieval");
        }
        if self.max_grad_norm.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return fail("max_grad_norm must be positive");
        }
        self.optimizer.validate()
    }

    /// Buffer capacity for items of the given sizes (zero for non-replay methods).
    pub fn buffer_capacity(&self, data_dim: usize, latent_dim: usize) -> Result<usize> {
        let Some(kind) = self.method.payload() else {
            return Ok(0);
        };
        let caps = equal_budget_capacities(
            self.memory_budget_bytes,
            (data_dim * BYTES_PER_SCALAR) as u64,
            (latent_dim * BYTES_PER_SCALAR) as u64,
        )?;
        Ok(match kind {
            PayloadKind::Raw => caps.raw_capacity,
            PayloadKind::Latent => caps.latent_capacity,
        })
    }

    /// Number of AdamW updates for `micro_steps` micro-steps.
    pub fn optimizer_updates(&self, micro_steps: usize) -> usize {
        micro_steps.div_ceil(self.grad_accumulation)
    }
}

/// `(1 − λ)·current + λ·memory`.
pub fn combined_loss<S: Scalar>(current: S, memory: S, lambda: S) -> S {
    (S::one() - lambda) * current + lambda * memory
}

/// Shared, frozen inputs of a training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a, S> {
    pub suite: &'a TaskSuite<S>,
    pub schedule: &'a DiffusionSchedule<S>,
    pub streams: RngStreams,
}

/// Replaces the monitored loss: `(attempt, micro_step, loss) -> loss`.
/// Gradients are unaffected; used to exercise the restart protocol.
pub type MonitorHook<'a> = &'a dyn Fn(usize, usize, f64) -> f64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<S> {
    pub model: DenoiserNet<S>,
    /// Monitored (combined) loss per micro-step of the final attempt.
    pub loss_trace: Vec<f64>,
    pub restarts: usize,
    /// Micro-step at which each abandoned attempt breached the threshold.
    pub restart_steps: Vec<usize>,
    /// Micro-steps executed in the final attempt.
    pub steps: usize,
    pub optimizer_updates: usize,
    /// Every attempt breached; `model` holds the pre-task parameters.
    pub failed: bool,
    /// Task ids of the replayed items, with counts, in the final attempt.
    pub replayed: BTreeMap<usize, usize>,
    /// Buffer contents by task id when training started.
    pub buffer_composition: BTreeMap<usize, usize>,
}

/// Training data for one call: dataset pools drawn round-robin.
struct Pools<'a, S> {
    tasks: Vec<&'a ConceptTask<S>>,
    latents: Vec<Vec<Vec<S>>>,
}

impl<'a, S: Scalar> Pools<'a, S> {
    fn new(suite: &'a TaskSuite<S>, task_indices: &[usize]) -> Result<Self> {
        let mut tasks = Vec::new();
        let mut latents = Vec::new();
        for &i in task_indices {
            let task = suite
                .tasks
                .get(i)
                .ok_or_else(|| Error::Config(format!("task index {i} out of range")))?;
            let z = suite.datasets[i]
                .iter()
                .map(|x| suite.codec.encode(x))
                .collect::<Result<Vec<_>>>()?;
            tasks.push(task);
            latents.push(z);
        }
        if tasks.is_empty() || latents.iter().any(Vec::is_empty) {
            return Err(Error::Config("training needs at least one nonempty dataset".into()));
        }
        Ok(Self { tasks, latents })
    }

    /// One pass: each pool shuffled, then interleaved round-robin.
    fn epoch(&self, rng: &mut StreamRng) -> Vec<(usize, usize)> {
        let orders: Vec<Vec<usize>> = self
            .latents
            .iter()
            .map(|l| {
                let mut o: Vec<usize> = (0..l.len()).collect();
                o.shuffle(rng);
                o
            })
            .collect();
        let longest = orders.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = Vec::with_capacity(orders.iter().map(Vec::len).sum());
        for i in 0..longest {
            for (p, o) in orders.iter().enumerate() {
                if let Some(&j) = o.get(i) {
                    out.push((p, j));
                }
            }
        }
        out
    }
}

enum Attempt<S> {
    Done {
        model: DenoiserNet<S>,
        trace: Vec<f64>,
        updates: usize,
        replayed: BTreeMap<usize, usize>,
    },
    Breach {
        step: usize,
    },
}

/// Trains on the tasks at `task_indices` (one for sequential methods, the
/// union so far for Offline). `position` is the 1-based place of the task in
/// the sequence; it keys the random streams and bounds replayed task ids.
pub fn train_task<S: Scalar>(
    ctx: &TrainContext<'_, S>,
    model: DenoiserNet<S>,
    task_indices: &[usize],
    position: usize,
    config: &MethodConfig,
    buffer: &MemoryBuffer<S>,
) -> Result<TrainOutcome<S>> {
    train_task_with_hook(ctx, model, task_indices, position, config, buffer, None)
}

pub fn train_task_with_hook<S: Scalar>(
    ctx: &TrainContext<'_, S>,
    model: DenoiserNet<S>,
    task_indices: &[usize],
    position: usize,
    config: &MethodConfig,
    buffer: &MemoryBuffer<S>,
    hook: Option<MonitorHook<'_>>,
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    let pools = Pools::new(ctx.suite, task_indices)?;
    let buffer_composition = buffer.task_composition();
    let mut restart_steps = Vec::new();
    for attempt in 0..=config.max_retries {
        match run_attempt(ctx, &model, &pools, position, attempt, config, buffer, hook)? {
            Attempt::Done {
                model,
                trace,
                updates,
                replayed,
            } => {
                return Ok(TrainOutcome {
                    model,
                    steps: trace.len(),
                    loss_trace: trace,
                    restarts: attempt,
                    restart_steps,
                    optimizer_updates: updates,
                    failed: false,
                    replayed,
                    buffer_composition,
                })
            }
            Attempt::Breach { step } => restart_steps.push(step),
        }
    }
    Ok(TrainOutcome {
        model,
        loss_trace: Vec::new(),
        restarts: config.max_retries,
        restart_steps,
        steps: 0,
        optimizer_updates: 0,
        failed: true,
        replayed: BTreeMap::new(),
        buffer_composition,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_attempt<S: Scalar>(
    ctx: &TrainContext<'_, S>,
    start: &DenoiserNet<S>,
    pools: &Pools<'_, S>,
    position: usize,
    attempt: usize,
    config: &MethodConfig,
    buffer: &MemoryBuffer<S>,
    hook: Option<MonitorHook<'_>>,
) -> Result<Attempt<S>> {
    let stream = |kind| ctx.streams.stream(kind, position, attempt);
    let mut data_rng = stream(StreamKind::DataOrder);
    let mut noise_rng = stream(StreamKind::Noise);
    let mut retrieval_rng = stream(StreamKind::ReplayRetrieval);
    let mut replay_noise_rng = stream(StreamKind::ReplayNoise);

    let mut model = start.clone();
    let mut optimizer = AdamWState::new(config.optimizer, &model);
    let mut acc = Gradients::zeros_like(&model);
    let mut in_group = 0usize;
    let mut updates = 0usize;
    let mut trace = Vec::with_capacity(config.max_steps);
    let mut replayed = BTreeMap::new();
    let mut ema: Option<f64> = None;
    let alpha = 2.0 / (config.ema_span as f64 + 1.0);
    let replay = config.method.uses_replay() && !buffer.is_empty();
    let lambda = S::lit(config.lambda_memory);
    let max_norm = S::lit(config.max_grad_norm);

    let mut epoch = pools.epoch(&mut data_rng);
    let mut cursor = 0;
    for step in 1..=config.max_steps {
        if cursor == epoch.len() {
            epoch = pools.epoch(&mut data_rng);
            cursor = 0;
        }
        let (pool, item) = epoch[cursor];
        cursor += 1;
        let z0 = &pools.latents[pool][item];
        let cond = pools.tasks[pool].random_prompt(&mut data_rng);
        let sample = draw_noised(ctx.schedule, z0, &mut noise_rng);
        let (current, g_current) = match loss_grad_at(&model, &sample, &cond) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Ok(Attempt::Breach { step }),
            Err(e) => return Err(e),
        };

        let monitored = if replay {
            let item = retrieve(buffer, config, z0, &mut retrieval_rng)?;
            if item.task_id + 1 >= position {
                return Err(Error::Retrieval("replayed an item from the current or a later task"));
            }
            *replayed.entry(item.task_id).or_insert(0) += 1;
            let z_mem = match item.kind {
                PayloadKind::Raw => ctx.suite.codec.encode(&item.payload)?,
                PayloadKind::Latent => item.payload.clone(),
            };
            let mem_sample = draw_noised(ctx.schedule, &z_mem, &mut replay_noise_rng);
            let (memory, g_memory) = match loss_grad_at(&model, &mem_sample, &item.cond) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Ok(Attempt::Breach { step }),
                Err(e) => return Err(e),
            };
            acc.add_scaled(&g_current, S::one() - lambda);
            if lambda != S::zero() {
                acc.add_scaled(&g_memory, lambda);
            }
            combined_loss(current, memory, lambda)
        } else {
            acc.add_scaled(&g_current, S::one());
            current
        };
        in_group += 1;

        let mut watched = monitored.as_f64();
        if let Some(h) = hook {
            watched = h(attempt, step, watched);
        }
        trace.push(monitored.as_f64());
        let smoothed = match ema {
            None => watched,
            Some(prev) => alpha * watched + (1.0 - alpha) * prev,
        };
        ema = Some(smoothed);
        if !smoothed.is_finite() || (step >= config.warmup_steps && smoothed > config.loss_threshold) {
            return Ok(Attempt::Breach { step });
        }

        let stop_early = step >= config.min_steps
            && step >= config.warmup_steps
            && config.early_stop_loss.is_some_and(|target| smoothed < target);
        if in_group == config.grad_accumulation || step == config.max_steps || stop_early {
            acc.scale(S::one() / S::lit(in_group as f64));
            clip_grad_norm(&mut acc, max_norm);
            let scale = warmup_scale(step as u64, config.warmup_steps as u64);
            match optimizer.step(&mut model, &acc, scale) {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => return Ok(Attempt::Breach { step }),
                Err(e) => return Err(e),
            }
            updates += 1;
            acc = Gradients::zeros_like(&model);
            in_group = 0;
        }
        if stop_early {
            break;
        }
    }
    Ok(Attempt::Done {
        model,
        trace,
        updates,
        replayed,
    })
}

/// One replay item: uniform for ER/LR, uniform among the top-k most similar
/// latents for SLR.
fn retrieve<'b, S: Scalar>(
    buffer: &'b MemoryBuffer<S>,
    config: &MethodConfig,
    z0: &[S],
    rng: &mut StreamRng,
) -> Result<&'b ReplayItem<S>> {
    if config.method == Method::Slr {
        let query = form_query(std::slice::from_ref(&z0.to_vec()))?;
        let top = buffer.retrieve_topk_similar(&query, config.retrieval_k)?;
        Ok(top[rng.random_range(0..top.len())].0)
    } else {
        Ok(buffer.retrieve_uniform(1, rng)?[0])
    }
}

/// Generic pre-training that stands in for a pretrained base model: latents
/// from `N(0, latent_std² I)` under random conditions of norm `cond_norm`,
/// none of which belong to a concept task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Micro-steps; 0 disables pre-training.
    pub steps: usize,
    pub latent_std: f64,
    pub cond_norm: f64,
    pub grad_accumulation: usize,
    pub warmup_steps: usize,
    pub optimizer: AdamWConfig,
    pub max_grad_norm: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            latent_std: 3.0,
            cond_norm: 2.0,
            grad_accumulation: 4,
            warmup_steps: 50,
            optimizer: AdamWConfig {
                learning_rate: TOY_LEARNING_RATE,
                ..AdamWConfig::default()
            },
            max_grad_norm: 1.0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grad_accumulation == 0 {
            return Err(Error::Config("pretrain grad_accumulation must be positive".into()));
        }
        if !(self.latent_std >= 0.0 && self.cond_norm >= 0.0 && self.max_grad_norm > 0.0) {
            return Err(Error::Config("pretrain scales must be non-negative".into()));
        }
        self.optimizer.validate()
    }
}

/// Trains `model` on the generic pre-training distribution.
pub fn pretrain<S: Scalar>(
    mut model: DenoiserNet<S>,
    schedule: &DiffusionSchedule<S>,
    config: &PretrainConfig,
    rng: &mut StreamRng,
) -> Result<DenoiserNet<S>> {
    config.validate()?;
    let latent_dim = model.config().latent_dim;
    let cond_dim = model.config().cond_dim;
    let mut optimizer = AdamWState::new(config.optimizer, &model);
    let mut acc = Gradients::zeros_like(&model);
    let mut in_group = 0;
    for step in 1..=config.steps {
        let z0: Vec<S> = normal_vec::<S, _>(rng, latent_dim)
            .into_iter()
            .map(|v| v * S::lit(config.latent_std))
            .collect();
        let mut cond: Vec<S> = normal_vec(rng, cond_dim);
        let n = norm(&cond);
        if n > S::zero() {
            cond.iter_mut().for_each(|v| *v *= S::lit(config.cond_norm) / n);
        }
        let sample = draw_noised(schedule, &z0, rng);
        let (_, g) = loss_grad_at(&model, &sample, &cond)?;
        acc.add_scaled(&g, S::one());
        in_group += 1;
        if in_group == config.grad_accumulation || step == config.steps {
            acc.scale(S::one() / S::lit(in_group as f64));
            clip_grad_norm(&mut acc, S::lit(config.max_grad_norm));
            optimizer.step(&mut model, &acc, warmup_scale(step as u64, config.warmup_steps as u64))?;
            acc = Gradients::zeros_like(&model);
            in_group = 0;
        }
    }
    Ok(model)
}

/// Everything needed to run one method through a task sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub method: MethodConfig,
    /// Generated samples per learned concept at each evaluation.
    pub n_eval: usize,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
}

impl SequenceConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method: MethodConfig::new(method),
            n_eval: 10,
            denoiser: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            pretrain: PretrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        self.pretrain.validate()?;
        self.denoiser.validate()?;
        if self.n_eval == 0 {
            return Err(Error::Config("n_eval must be at least 1".into()));
        }
        if self.schedule.timesteps != self.denoiser.timesteps {
            return Err(Error::Config("schedule and denoiser timesteps differ".into()));
        }
        Ok(())
    }
}

/// Per-task training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    /// 1-based place in the sequence.
    pub position: usize,
    pub concept: String,
    pub restarts: usize,
    pub restart_steps: Vec<usize>,
    pub steps: usize,
    pub optimizer_updates: usize,
    pub failed: bool,
    pub loss_trace: Vec<f64>,
    pub replayed: BTreeMap<usize, usize>,
    /// Buffer contents by task position after this task's offers.
    pub buffer_after: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRun<S> {
    pub method: Method,
    pub seed: u64,
    /// Concept names in training order.
    pub order: Vec<String>,
    pub records: Vec<EvalRecord>,
    pub tasks: Vec<TaskReport>,
    pub model: DenoiserNet<S>,
    pub buffer: MemoryBuffer<S>,
}

impl<S> SequenceRun<S> {
    pub fn any_failed(&self) -> bool {
        self.tasks.iter().any(|t| t.failed)
    }

    pub fn record(&self, tasks_learned: usize, eval_task: usize) -> Option<&EvalRecord> {
        self.records
            .iter()
            .find(|r| r.tasks_learned == tasks_learned && r.eval_task == eval_task)
    }
}

/// Trains `config.method` through the suite tasks listed in `order`
/// (suite indices) and evaluates every learned concept after each task.
///
/// Buffer items are tagged with the 0-based sequence position of their task.
pub fn run_sequence<S: Scalar>(
    config: &SequenceConfig,
    suite: &TaskSuite<S>,
    order: &[usize],
    seed: u64,
) -> Result<SequenceRun<S>> {
    config.validate()?;
    if order.is_empty() {
        return Err(Error::Config("task order is empty".into()));
    }
    if let Some(&bad) = order.iter().find(|&&i| i >= suite.num_tasks()) {
        return Err(Error::Config(format!("task index {bad} out of range")));
    }
    let schedule = DiffusionSchedule::linear(&config.schedule)?;
    let streams = RngStreams::new(seed);
    let ctx = TrainContext {
        suite,
        schedule: &schedule,
        streams,
    };
    let mcfg = &config.method;
    let capacity = mcfg.buffer_capacity(suite.spec.data_dim, suite.spec.latent_dim)?;
    let mut buffer = MemoryBuffer::new(capacity);
    let mut init_rng = streams.stream(StreamKind::Init, 0, 0);
    let mut model = DenoiserNet::new(config.denoiser.clone(), &mut init_rng)?;
    model = pretrain(model, &schedule, &config.pretrain, &mut init_rng)?;

    let references: Vec<Vec<Vec<S>>> = order
        .iter()
        .map(|&i| {
            suite.datasets[i]
                .iter()
                .map(|x| suite.embedder.embed(x))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut tasks = Vec::new();
    for (k, &task_index) in order.iter().enumerate() {
        let position = k + 1;
        let training: Vec<usize> = if mcfg.method == Method::Offline {
            order[..=k].to_vec()
        } else {
            vec![task_index]
        };
        let outcome = train_task(&ctx, model, &training, position, mcfg, &buffer)?;
        model = outcome.model;

        if let Some(kind) = mcfg.method.payload() {
            let task = &suite.tasks[task_index];
            let mut rng = streams.stream(StreamKind::BufferUpdate, position, 0);
            for x in &suite.datasets[task_index] {
                let payload = match kind {
                    PayloadKind::Raw => x.clone(),
                    PayloadKind::Latent => suite.codec.encode(x)?,
                };
                let cond = task.random_prompt(&mut rng);
                buffer.reservoir_offer(ReplayItem::new(kind, payload, cond, k), &mut rng);
            }
        }

        for (l, &eval_index) in order[..=k].iter().enumerate() {
            let mut rng = streams.stream(StreamKind::Evaluation, position, l + 1);
            let (ia, ta, diversity) = evaluate(
                &model,
                &schedule,
                suite,
                eval_index,
                &references[l],
                config.n_eval,
                &mut rng,
            )?;
            records.push(EvalRecord {
                method: mcfg.method.name().to_string(),
                seed,
                tasks_learned: position,
                eval_task: l + 1,
                ia,
                ta,
                diversity,
            });
        }

        tasks.push(TaskReport {
            position,
            concept: suite.tasks[task_index].name.clone(),
            restarts: outcome.restarts,
            restart_steps: outcome.restart_steps,
            steps: outcome.steps,
            optimizer_updates: outcome.optimizer_updates,
            failed: outcome.failed,
            loss_trace: outcome.loss_trace,
            replayed: outcome.replayed,
            buffer_after: buffer.task_composition(),
        });
    }

    Ok(SequenceRun {
        method: mcfg.method,
        seed,
        order: order.iter().map(|&i| suite.tasks[i].name.clone()).collect(),
        records,
        tasks,
        model,
        buffer,
    })
}

/// Generated samples for a concept, in feature space.
pub fn generate_features<S: Scalar>(
    model: &DenoiserNet<S>,
    schedule: &DiffusionSchedule<S>,
    suite: &TaskSuite<S>,
    task_index: usize,
    n: usize,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<S>>> {
    let cond = &suite.tasks[task_index].concept_embedding;
    (0..n)
        .map(|_| {
            let z = diffusion::sample(model, schedule, cond, rng)?;
            suite.embedder.embed(&suite.codec.decode(&z)?)
        })
        .collect()
}

fn evaluate<S: Scalar>(
    model: &DenoiserNet<S>,
    schedule: &DiffusionSchedule<S>,
    suite: &TaskSuite<S>,
    task_index: usize,
    reference: &[Vec<S>],
    n: usize,
    rng: &mut StreamRng,
) -> Result<(f64, f64, f64)> {
    let generated = generate_features(model, schedule, suite, task_index, n, rng)?;
    let prompt = suite
        .embedder
        .embed_prompt(&suite.tasks[task_index].concept_embedding)?;
    let ia = image_alignment(&generated, reference)?.value.as_f64();
    let ta = text_alignment(&generated, &prompt)?.value.as_f64();
    let diversity = vendi_score(&generated)?.as_f64();
    Ok((ia, ta, diversity))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined_loss_examples() {
        assert_eq!(combined_loss(0.2, 0.4, 0.0), 0.2);
        assert_eq!(combined_loss(0.2, 0.4, 1.0), 0.4);
        assert!((combined_loss(0.2f64, 0.4, 0.5) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn method_defaults() {
        assert_eq!(MethodConfig::new(Method::Naive).loss_threshold, 1.0);
        assert_eq!(MethodConfig::new(Method::Offline).loss_threshold, 1.0);
        for m in [Method::Er, Method::Lr, Method::Slr] {
            assert_eq!(MethodConfig::new(m).loss_threshold, 1.5);
        }
        let c = MethodConfig::new(Method::Lr);
        assert_eq!(
            (c.max_retries, c.min_steps, c.max_steps, c.grad_accumulation),
            (5, 100, 800, 4)
        );
        assert_eq!(c.lambda_memory, 0.5);
        assert_eq!(c.retrieval_k, 4);
    }

    #[test]
    fn method_parse_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
        }
        assert!("ewc".parse::<Method>().is_err());
    }

    #[test]
    fn update_count_rounds_up() {
        let c = MethodConfig::new(Method::Naive);
        assert_eq!(c.optimizer_updates(800), 200);
        assert_eq!(c.optimizer_updates(101), 26);
        assert_eq!(c.optimizer_updates(1), 1);
    }

    #[test]
    fn validation_rejects_bad_lambda() {
        let mut c = MethodConfig::new(Method::Lr);
        c.lambda_memory = 1.2;
        assert!(c.validate().is_err());
        c.lambda_memory = 0.0;
        c.min_steps = 900;
        assert!(c.validate().is_err());
    }

    #[test]
    fn capacities_follow_budget() {
        let c = MethodConfig::new(Method::Er);
        assert_eq!(c.buffer_capacity(64, 8).unwrap(), 10);
        let c = MethodConfig::new(Method::Lr);
        assert_eq!(c.buffer_capacity(64, 8).unwrap(), 80);
        let c = MethodConfig::new(Method::Naive);
        assert_eq!(c.buffer_capacity(64, 8).unwrap(), 0);
    }
}
