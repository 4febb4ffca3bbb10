//! Frozen codec, frozen feature embedder and the synthetic concept tasks.
//!
//! The codec is a linear map with orthonormal columns: `decode(z) = A z`,
//! `encode(x) = Aᵀ x`. Concept tasks are Gaussian mixtures whose component
//! means lie in the span of `A`, so latent replay loses nothing but the
//! isotropic off-span noise of each sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{dot, norm, solve, DenseMatrix, Scalar};
use crate::rng::{normal, normal_vec};

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenCodec<S> {
    encoder: DenseMatrix<S>,
    decoder: DenseMatrix<S>,
}

impl<S: Scalar> FrozenCodec<S> {
    /// Random orthonormal codec from `data_dim` down to `latent_dim`.
    pub fn random<R: Rng + ?Sized>(data_dim: usize, latent_dim: usize, rng: &mut R) -> Result<Self> {
        if latent_dim == 0 || latent_dim > data_dim {
            return Err(Error::Config(format!(
                "latent_dim must be in 1..={data_dim}, got {latent_dim}"
            )));
        }
        let mut decoder = DenseMatrix::random_normal(data_dim, latent_dim, S::one(), rng);
        decoder.orthonormalize_columns()?;
        Ok(Self::from_decoder(decoder))
    }

    /// Codec around a decoder whose columns are already orthonormal.
    pub fn from_decoder(decoder: DenseMatrix<S>) -> Self {
        Self {
            encoder: decoder.transpose(),
            decoder,
        }
    }

    pub fn data_dim(&self) -> usize {
        self.decoder.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.cols()
    }

    pub fn decoder(&self) -> &DenseMatrix<S> {
        &self.decoder
    }

    pub fn compression_ratio(&self) -> f64 {
        self.data_dim() as f64 / self.latent_dim() as f64
    }

    pub fn encode(&self, x: &[S]) -> Result<Vec<S>> {
        check_dim("encode", self.data_dim(), x.len())?;
        self.encoder.matvec(x)
    }

    pub fn decode(&self, z: &[S]) -> Result<Vec<S>> {
        check_dim("decode", self.latent_dim(), z.len())?;
        self.decoder.matvec(z)
    }
}

/// Frozen nonlinear feature map `x ↦ W₂ tanh(W₁ x)` plus a linear prompt map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEmbedder<S> {
    hidden: DenseMatrix<S>,
    output: DenseMatrix<S>,
    prompt: DenseMatrix<S>,
}

impl<S: Scalar> FeatureEmbedder<S> {
    pub fn random<R: Rng + ?Sized>(
        data_dim: usize,
        hidden_dim: usize,
        feature_dim: usize,
        cond_dim: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let hidden = DenseMatrix::random_normal(hidden_dim, data_dim, S::lit(gain / (data_dim as f64).sqrt()), rng);
        let output = DenseMatrix::random_normal(feature_dim, hidden_dim, S::lit(1.0 / (hidden_dim as f64).sqrt()), rng);
        let prompt = DenseMatrix::random_normal(
            feature_dim,
            cond_dim,
            S::lit(1.0 / (cond_dim.max(1) as f64).sqrt()),
            rng,
        );
        Self { hidden, output, prompt }
    }

    pub fn feature_dim(&self) -> usize {
        self.output.rows()
    }

    pub fn data_dim(&self) -> usize {
        self.hidden.cols()
    }

    pub fn cond_dim(&self) -> usize {
        self.prompt.cols()
    }

    pub fn embed(&self, x: &[S]) -> Result<Vec<S>> {
        check_dim("embed", self.data_dim(), x.len())?;
        let h: Vec<S> = self.hidden.matvec(x)?.into_iter().map(S::tanh).collect();
        self.output.matvec(&h)
    }

    /// Feature-space image of a condition embedding.
    pub fn embed_prompt(&self, cond: &[S]) -> Result<Vec<S>> {
        check_dim("embed prompt", self.cond_dim(), cond.len())?;
        self.prompt.matvec(cond)
    }

    /// Replaces the prompt map with the minimum-norm linear map sending each
    /// condition embedding to its paired feature vector (least squares when
    /// there are more pairs than condition dimensions).
    pub fn align_prompt_map(&mut self, conds: &[Vec<S>], features: &[Vec<S>]) -> Result<()> {
        check_dim("prompt alignment pairs", conds.len(), features.len())?;
        let c = DenseMatrix::from_columns(conds)?;
        let f = DenseMatrix::from_columns(features)?;
        check_dim("prompt alignment cond", self.cond_dim(), c.rows())?;
        check_dim("prompt alignment features", self.feature_dim(), f.rows())?;
        let k = conds.len();
        let map = if k <= self.cond_dim() {
            // W = F (CᵀC)⁻¹ Cᵀ
            let gram = c.transpose().matmul(&c)?;
            let mut coeffs = DenseMatrix::zeros(f.rows(), k);
            for r in 0..f.rows() {
                let sol = solve(&gram, f.row(r))?;
                for (j, v) in sol.into_iter().enumerate() {
                    coeffs[(r, j)] = v;
                }
            }
            coeffs.matmul(&c.transpose())?
        } else {
            // W = F Cᵀ (C Cᵀ)⁻¹
            let gram = c.matmul(&c.transpose())?;
            let fct = f.matmul(&c.transpose())?;
            let mut map = DenseMatrix::zeros(f.rows(), c.rows());
            for r in 0..f.rows() {
                let sol = solve(&gram, fct.row(r))?;
                for (j, v) in sol.into_iter().enumerate() {
                    map[(r, j)] = v;
                }
            }
            map
        };
        self.prompt = map;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent<S> {
    pub mean: Vec<S>,
    pub covariance: DenseMatrix<S>,
    pub weight: f64,
    factor: DenseMatrix<S>,
}

impl<S: Scalar> MixtureComponent<S> {
    pub fn new(mean: Vec<S>, covariance: DenseMatrix<S>, weight: f64) -> Result<Self> {
        check_dim("component covariance", mean.len(), covariance.rows())?;
        let factor = covariance.cholesky_semidefinite()?;
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::Config(format!("component weight {weight} is invalid")));
        }
        Ok(Self {
            mean,
            covariance,
            weight,
            factor,
        })
    }

    pub fn isotropic(mean: Vec<S>, std: f64, weight: f64) -> Result<Self> {
        let d = mean.len();
        let mut cov = DenseMatrix::zeros(d, d);
        for i in 0..d {
            cov[(i, i)] = S::lit(std * std);
        }
        Self::new(mean, cov, weight)
    }

    pub fn max_std(&self) -> f64 {
        (0..self.covariance.rows())
            .map(|i| self.covariance[(i, i)].as_f64().sqrt())
            .fold(0.0, f64::max)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<S> {
        let xi: Vec<S> = normal_vec(rng, self.mean.len());
        let mut out = self.mean.clone();
        for (r, o) in out.iter_mut().enumerate() {
            for (c, &x) in xi.iter().enumerate().take(r + 1) {
                *o += self.factor[(r, c)] * x;
            }
        }
        out
    }
}

/// A synthetic concept: data distribution plus its conditioning vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptTask<S> {
    pub id: usize,
    pub name: String,
    pub components: Vec<MixtureComponent<S>>,
    /// The identifier-token analog used by the standard evaluation prompt.
    pub concept_embedding: Vec<S>,
    /// Per-prompt-variant offsets added to the concept embedding.
    pub prompt_offsets: Vec<Vec<S>>,
}

impl<S: Scalar> ConceptTask<S> {
    pub fn new(
        id: usize,
        name: impl Into<String>,
        components: Vec<MixtureComponent<S>>,
        concept_embedding: Vec<S>,
        prompt_offsets: Vec<Vec<S>>,
    ) -> Result<Self> {
        let task = Self {
            id,
            name: name.into(),
            components,
            concept_embedding,
            prompt_offsets,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .components
            .first()
            .ok_or_else(|| Error::Config(format!("task {} has no components", self.id)))?;
        for c in &self.components {
            check_dim("component mean", first.mean.len(), c.mean.len())?;
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "task {} component weights sum to {total}, not 1",
                self.id
            )));
        }
        for o in &self.prompt_offsets {
            check_dim("prompt offset", self.concept_embedding.len(), o.len())?;
        }
        Ok(())
    }

    pub fn data_dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// Weighted mean of the mixture.
    pub fn mean(&self) -> Vec<S> {
        let mut m = vec![S::zero(); self.data_dim()];
        for c in &self.components {
            for (a, &b) in m.iter_mut().zip(&c.mean) {
                *a += S::lit(c.weight) * b;
            }
        }
        m
    }

    /// Condition vector of prompt variant `p` (the bare concept if none exist).
    pub fn prompt(&self, p: usize) -> Vec<S> {
        match self.prompt_offsets.get(p) {
            Some(off) => self.concept_embedding.iter().zip(off).map(|(&c, &o)| c + o).collect(),
            None => self.concept_embedding.clone(),
        }
    }

    pub fn random_prompt<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<S> {
        if self.prompt_offsets.is_empty() {
            return self.concept_embedding.clone();
        }
        self.prompt(rng.random_range(0..self.prompt_offsets.len()))
    }

    fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return i;
            }
        }
        self.components.len() - 1
    }

    /// `n` i.i.d. mixture draws tagged with their component index.
    pub fn sample_labeled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(usize, Vec<S>)> {
        (0..n)
            .map(|_| {
                let c = self.pick_component(rng);
                (c, self.components[c].draw(rng))
            })
            .collect()
    }
}

/// `n` i.i.d. draws from the task's mixture.
pub fn sample_task_data<S: Scalar, R: Rng + ?Sized>(
    task: &ConceptTask<S>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<S>>> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    Ok(task.sample_labeled(n, rng).into_iter().map(|(_, x)| x).collect())
}

/// Generator parameters for a suite of concept tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSuiteSpec {
    pub seed: u64,
    pub names: Vec<String>,
    pub data_dim: usize,
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub feature_dim: usize,
    pub feature_hidden: usize,
    pub feature_gain: f64,
    pub components_per_task: usize,
    /// Norm of each concept's latent mean.
    pub concept_radius: f64,
    /// Distance of each component mean from the concept mean.
    pub component_offset: f64,
    pub component_std: f64,
    pub cond_norm: f64,
    /// Fraction of each concept embedding's squared norm lying along one
    /// direction common to all concepts (the shared prompt template).
    pub shared_prompt: f64,
    pub prompt_variants: usize,
    /// Prompt offset norm relative to `cond_norm`.
    pub prompt_scale: f64,
    /// Training images per concept.
    pub samples_per_task: usize,
}

impl Default for TaskSuiteSpec {
    fn default() -> Self {
        Self {
            seed: 2024,
            names: ["dog", "toy", "cat", "backpack", "plushie"]
                .into_iter()
                .map(String::from)
                .collect(),
            data_dim: 64,
            latent_dim: 8,
            cond_dim: 8,
            feature_dim: 32,
            feature_hidden: 64,
            feature_gain: 2.0,
            components_per_task: 2,
            concept_radius: 3.0,
            component_offset: 1.0,
            component_std: 0.15,
            cond_norm: 2.0,
            shared_prompt: 0.8,
            prompt_variants: 20,
            prompt_scale: 0.1,
            samples_per_task: 40,
        }
    }
}

impl TaskSuiteSpec {
    pub fn num_tasks(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.names.is_empty() {
            return fail("task suite needs at least one task");
        }
        if self.data_dim == 0 || self.latent_dim == 0 || self.latent_dim > self.data_dim {
            return fail("need 0 < latent_dim <= data_dim");
        }
        if self.cond_dim == 0 || self.feature_dim == 0 || self.feature_hidden == 0 {
            return fail("cond_dim, feature_dim and feature_hidden must be positive");
        }
        if self.components_per_task == 0 {
            return fail("components_per_task must be positive");
        }
        if self.samples_per_task == 0 {
            return fail("samples_per_task must be positive");
        }
        if !(0.0..1.0).contains(&self.shared_prompt) {
            return fail("shared_prompt must lie in [0, 1)");
        }
        let nonneg = [
            self.concept_radius,
            self.component_offset,
            self.component_std,
            self.cond_norm,
            self.prompt_scale,
            self.feature_gain,
        ];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return fail("suite scales must be finite and non-negative");
        }
        Ok(())
    }
}

/// Everything frozen about an experiment's world: codec, feature embedder,
/// concept tasks and each concept's fixed training set.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSuite<S> {
    pub spec: TaskSuiteSpec,
    pub codec: FrozenCodec<S>,
    pub embedder: FeatureEmbedder<S>,
    pub tasks: Vec<ConceptTask<S>>,
    pub datasets: Vec<Vec<Vec<S>>>,
}

/// `k` directions of norm `radius`: orthonormal when `k <= dim`, random otherwise.
fn spread_directions<S: Scalar, R: Rng + ?Sized>(
    k: usize,
    dim: usize,
    radius: f64,
    rng: &mut R,
) -> Result<Vec<Vec<S>>> {
    if k <= dim {
        let mut m = DenseMatrix::<S>::random_normal(dim, k, S::one(), rng);
        m.orthonormalize_columns()?;
        Ok((0..k)
            .map(|j| m.column(j).into_iter().map(|v| v * S::lit(radius)).collect())
            .collect())
    } else {
        Ok((0..k)
            .map(|_| {
                let v: Vec<S> = normal_vec(rng, dim);
                let n = norm(&v);
                v.into_iter().map(|x| x / n * S::lit(radius)).collect()
            })
            .collect())
    }
}

/// Random unit vector orthogonal to `against` (when `against` is nonzero).
fn orthogonal_unit<S: Scalar, R: Rng + ?Sized>(against: &[S], rng: &mut R) -> Vec<S> {
    let mut u: Vec<S> = normal_vec(rng, against.len());
    let aa = dot(against, against);
    if aa > S::zero() && against.len() > 1 {
        let proj = dot(&u, against) / aa;
        for (x, &a) in u.iter_mut().zip(against) {
            *x -= proj * a;
        }
    }
    let n = norm(&u);
    u.into_iter().map(|x| x / n).collect()
}

impl<S: Scalar> TaskSuite<S> {
    pub fn generate(spec: &TaskSuiteSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let k = spec.num_tasks();

        let codec = FrozenCodec::random(spec.data_dim, spec.latent_dim, &mut rng)?;
        let mut embedder = FeatureEmbedder::random(
            spec.data_dim,
            spec.feature_hidden,
            spec.feature_dim,
            spec.cond_dim,
            spec.feature_gain,
            &mut rng,
        );
        let latent_means: Vec<Vec<S>> = spread_directions(k, spec.latent_dim, spec.concept_radius, &mut rng)?;
        let cond_dirs: Vec<Vec<S>> = spread_directions(k + 1, spec.cond_dim, 1.0, &mut rng)?;
        let shared = S::lit(spec.cond_norm * spec.shared_prompt.sqrt());
        let own = S::lit(spec.cond_norm * (1.0 - spec.shared_prompt).sqrt());
        let concept_embeddings: Vec<Vec<S>> = cond_dirs[..k]
            .iter()
            .map(|d| {
                d.iter()
                    .zip(&cond_dirs[k])
                    .map(|(&a, &b)| own * a + shared * b)
                    .collect()
            })
            .collect();

        let weight = 1.0 / spec.components_per_task as f64;
        let offset_scale = spec.prompt_scale * spec.cond_norm / (spec.cond_dim as f64).sqrt();
        let mut tasks = Vec::with_capacity(k);
        for (id, name) in spec.names.iter().enumerate() {
            let center = &latent_means[id];
            let base = orthogonal_unit(center, &mut rng);
            let mut components = Vec::with_capacity(spec.components_per_task);
            for c in 0..spec.components_per_task {
                let dir: Vec<S> = match (spec.components_per_task, c) {
                    (1, _) => vec![S::zero(); spec.latent_dim],
                    (2, 0) => base.clone(),
                    (2, _) => base.iter().map(|&v| -v).collect(),
                    (_, 0) => base.clone(),
                    _ => orthogonal_unit(center, &mut rng),
                };
                let latent: Vec<S> = center
                    .iter()
                    .zip(&dir)
                    .map(|(&m, &d)| m + d * S::lit(spec.component_offset))
                    .collect();
                components.push(MixtureComponent::isotropic(
                    codec.decode(&latent)?,
                    spec.component_std,
                    weight,
                )?);
            }
            let offsets = (0..spec.prompt_variants)
                .map(|_| {
                    (0..spec.cond_dim)
                        .map(|_| normal::<S, _>(&mut rng) * S::lit(offset_scale))
                        .collect()
                })
                .collect();
            tasks.push(ConceptTask::new(
                id,
                name.clone(),
                components,
                concept_embeddings[id].clone(),
                offsets,
            )?);
        }

        let targets = tasks
            .iter()
            .map(|t| {
                let mut f = vec![S::zero(); spec.feature_dim];
                for c in &t.components {
                    for (a, b) in f.iter_mut().zip(embedder.embed(&c.mean)?) {
                        *a += S::lit(c.weight) * b;
                    }
                }
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        embedder.align_prompt_map(&concept_embeddings, &targets)?;

        let datasets = tasks
            .iter()
            .map(|t| sample_task_data(t, spec.samples_per_task, &mut rng))
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            spec: spec.clone(),
            codec,
            embedder,
            tasks,
            datasets,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Smallest distance between two concept means divided by the largest
    /// component standard deviation (infinite for a single task or zero spread).
    pub fn separability(&self) -> f64 {
        let means: Vec<Vec<S>> = self.tasks.iter().map(ConceptTask::mean).collect();
        let max_std = self
            .tasks
            .iter()
            .flat_map(|t| t.components.iter().map(MixtureComponent::max_std))
            .fold(0.0, f64::max);
        let mut min_dist = f64::INFINITY;
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                let d: S = means[i].iter().zip(&means[j]).map(|(&a, &b)| (a - b) * (a - b)).sum();
                min_dist = min_dist.min(d.as_f64().sqrt());
            }
        }
        if max_std == 0.0 {
            f64::INFINITY
        } else {
            min_dist / max_std
        }
    }
}
