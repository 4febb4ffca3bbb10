//! Experiment configuration: a versioned TOML document that fully determines
//! a run together with its seed list.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lrlab_core::continual::{Method, MethodConfig, PretrainConfig, SequenceConfig, TOY_LEARNING_RATE};
use lrlab_core::diffusion::ScheduleConfig;
use lrlab_core::latentspace::TaskSuiteSpec;
use lrlab_core::numerics::{AdamWConfig, DenoiserConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// The λ values of the replay-weight sweep.
pub const DEFAULT_LAMBDA_VALUES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskOrder {
    #[default]
    Forward,
    Reversed,
}

impl TaskOrder {
    pub fn name(self) -> &'static str {
        match self {
            TaskOrder::Forward => "forward",
            TaskOrder::Reversed => "reversed",
        }
    }

    /// Suite indices in training order.
    pub fn indices(self, tasks: usize) -> Vec<usize> {
        match self {
            TaskOrder::Forward => (0..tasks).collect(),
            TaskOrder::Reversed => (0..tasks).rev().collect(),
        }
    }
}

/// Named byte budgets. The defaults keep the 1 : 2 : 10 proportions of the
/// small, medium and large full-scale budgets at toy item sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryBudgets {
    pub small: u64,
    pub medium: u64,
    pub large: u64,
}

impl Default for MemoryBudgets {
    fn default() -> Self {
        Self {
            small: 2560,
            medium: 5120,
            large: 25600,
        }
    }
}

impl MemoryBudgets {
    pub const NAMES: [&'static str; 3] = ["small", "medium", "large"];

    pub fn get(&self, name: &str) -> Option<u64> {
        match name {
            "small" => Some(self.small),
            "medium" => Some(self.medium),
            "large" => Some(self.large),
            _ => None,
        }
    }
}

/// Training protocol shared by all methods; per-method values (loss
/// threshold, payload) are derived from the method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub retrieval_k: usize,
    /// Restart threshold for methods without replay.
    pub loss_threshold_plain: f64,
    /// Restart threshold on the combined loss of replay methods.
    pub loss_threshold_replay: f64,
    pub max_retries: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    pub grad_accumulation: usize,
    pub warmup_steps: usize,
    pub ema_span: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stop_loss: Option<f64>,
    pub optimizer: AdamWConfig,
    pub max_grad_norm: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let m = MethodConfig::new(Method::Naive);
        Self {
            retrieval_k: m.retrieval_k,
            loss_threshold_plain: Method::Naive.default_loss_threshold(),
            loss_threshold_replay: Method::Lr.default_loss_threshold(),
            max_retries: m.max_retries,
            min_steps: m.min_steps,
            max_steps: m.max_steps,
            grad_accumulation: m.grad_accumulation,
            warmup_steps: m.warmup_steps,
            ema_span: m.ema_span,
            early_stop_loss: m.early_stop_loss,
            optimizer: AdamWConfig {
                learning_rate: TOY_LEARNING_RATE,
                ..AdamWConfig::default()
            },
            max_grad_norm: m.max_grad_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub lambda_values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambda_values: DEFAULT_LAMBDA_VALUES.to_vec(),
        }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_n_eval() -> usize {
    10
}

fn default_lambda() -> f64 {
    0.5
}

fn default_budget() -> String {
    "small".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Generated samples per concept and evaluation.
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default)]
    pub task_order: TaskOrder,
    #[serde(default = "default_lambda")]
    pub lambda_memory: f64,
    /// Name of the entry in `memory_budgets` used by replay methods.
    #[serde(default = "default_budget")]
    pub memory_budget: String,
    #[serde(default)]
    pub memory_budgets: MemoryBudgets,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub suite: TaskSuiteSpec,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    /// Where results go unless overridden on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            methods: default_methods(),
            seeds: default_seeds(),
            n_eval: default_n_eval(),
            task_order: TaskOrder::default(),
            lambda_memory: default_lambda(),
            memory_budget: default_budget(),
            memory_budgets: MemoryBudgets::default(),
            sweep: SweepConfig::default(),
            training: TrainingConfig::default(),
            suite: TaskSuiteSpec::default(),
            denoiser: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            pretrain: PretrainConfig::default(),
            output_dir: None,
        }
    }
}

fn check(ok: bool, field: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(HarnessError::config(field, message))
    }
}

fn in_section(field: &str) -> impl Fn(lrlab_core::Error) -> HarnessError + '_ {
    move |e| HarnessError::config(field, e.to_string())
}

impl ExperimentConfig {
    /// Parses and validates a config document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        check(
            self.version == CONFIG_VERSION,
            "version",
            &format!("unsupported version {} (expected {CONFIG_VERSION})", self.version),
        )?;
        check(!self.methods.is_empty(), "methods", "must list at least one method")?;
        let unique: BTreeSet<_> = self.methods.iter().collect();
        check(unique.len() == self.methods.len(), "methods", "contains duplicates")?;
        check(!self.seeds.is_empty(), "seeds", "must list at least one seed")?;
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        check(unique.len() == self.seeds.len(), "seeds", "contains duplicates")?;
        check(self.n_eval >= 1, "n_eval", "must be at least 1")?;
        check(
            (0.0..=1.0).contains(&self.lambda_memory),
            "lambda_memory",
            "must lie in [0, 1]",
        )?;
        check(
            self.memory_budgets.get(&self.memory_budget).is_some(),
            "memory_budget",
            "must be one of small, medium, large",
        )?;
        for name in MemoryBudgets::NAMES {
            let bytes = self.memory_budgets.get(name).unwrap_or(0);
            check(bytes > 0, &format!("memory_budgets.{name}"), "must be positive")?;
        }
        for (i, &l) in self.sweep.lambda_values.iter().enumerate() {
            check(
                (0.0..=1.0).contains(&l),
                &format!("sweep.lambda_values[{i}]"),
                "must lie in [0, 1]",
            )?;
        }
        let t = &self.training;
        check(
            t.loss_threshold_plain > 0.0,
            "training.loss_threshold_plain",
            "must be positive",
        )?;
        check(
            t.loss_threshold_replay > 0.0,
            "training.loss_threshold_replay",
            "must be positive",
        )?;
        check(t.max_steps > 0, "training.max_steps", "must be positive")?;
        check(
            t.min_steps <= t.max_steps,
            "training.min_steps",
            "must not exceed max_steps",
        )?;
        check(
            t.grad_accumulation > 0,
            "training.grad_accumulation",
            "must be positive",
        )?;
        check(t.retrieval_k > 0, "training.retrieval_k", "must be positive")?;
        check(t.ema_span > 0, "training.ema_span", "must be positive")?;
        check(t.max_grad_norm > 0.0, "training.max_grad_norm", "must be positive")?;
        t.optimizer.validate().map_err(in_section("training.optimizer"))?;

        self.suite.validate().map_err(in_section("suite"))?;
        self.denoiser.validate().map_err(in_section("denoiser"))?;
        self.pretrain.validate().map_err(in_section("pretrain"))?;
        check(
            self.denoiser.latent_dim == self.suite.latent_dim,
            "denoiser.latent_dim",
            "must equal suite.latent_dim",
        )?;
        check(
            self.denoiser.cond_dim == self.suite.cond_dim,
            "denoiser.cond_dim",
            "must equal suite.cond_dim",
        )?;
        check(
            self.schedule.timesteps == self.denoiser.timesteps,
            "schedule.timesteps",
            "must equal denoiser.timesteps",
        )?;
        for m in &self.methods {
            self.sequence_config(*m).validate().map_err(in_section("training"))?;
        }
        Ok(())
    }

    pub fn budget_bytes(&self) -> u64 {
        self.memory_budgets.get(&self.memory_budget).unwrap_or(0)
    }

    pub fn method_config(&self, method: Method) -> MethodConfig {
        let t = &self.training;
        MethodConfig {
            method,
            lambda_memory: self.lambda_memory,
            memory_budget_bytes: self.budget_bytes(),
            retrieval_k: t.retrieval_k,
            loss_threshold: if method.uses_replay() {
                t.loss_threshold_replay
            } else {
                t.loss_threshold_plain
            },
            max_retries: t.max_retries,
            min_steps: t.min_steps,
            max_steps: t.max_steps,
            grad_accumulation: t.grad_accumulation,
            warmup_steps: t.warmup_steps,
            ema_span: t.ema_span,
            early_stop_loss: t.early_stop_loss,
            optimizer: t.optimizer,
            max_grad_norm: t.max_grad_norm,
        }
    }

    pub fn sequence_config(&self, method: Method) -> SequenceConfig {
        SequenceConfig {
            method: self.method_config(method),
            n_eval: self.n_eval,
            denoiser: self.denoiser.clone(),
            schedule: self.schedule,
            pretrain: self.pretrain.clone(),
        }
    }

    /// SHA-256 over the canonical JSON form, excluding the output location.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
