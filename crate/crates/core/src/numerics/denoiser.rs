use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DenseMatrix, ParamTensors, Scalar};
use crate::error::{check_dim, Error, Result};

/// Shape of the noise-prediction network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub cond_dim: usize,
    /// Width of the sinusoidal timestep features (even).
    pub time_dim: usize,
    pub hidden: Vec<usize>,
    /// Number of diffusion timesteps the net accepts.
    pub timesteps: usize,
    /// Multiplier on the output layer's initial weights.
    pub output_init_scale: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            cond_dim: 8,
            time_dim: 8,
            hidden: vec![64, 64, 64],
            timesteps: 100,
            output_init_scale: 1.0,
        }
    }
}

impl DenoiserConfig {
    pub fn input_dim(&self) -> usize {
        self.latent_dim + self.time_dim + self.cond_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.timesteps == 0 {
            return Err(Error::Config("latent_dim and timesteps must be positive".into()));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::Config("time_dim must be even".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !self.output_init_scale.is_finite() || self.output_init_scale < 0.0 {
            return Err(Error::Config("output_init_scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Affine layer `y = W x + b` with `W` of shape (out, in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<S> {
    pub weight: DenseMatrix<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(outputs, inputs),
            bias: vec![S::zero(); outputs],
        }
    }

    fn apply(&self, x: &[S]) -> Vec<S> {
        (0..self.weight.rows())
            .map(|r| super::dot(self.weight.row(r), x) + self.bias[r])
            .collect()
    }
}

/// Sinusoidal features of the timestep.
pub fn time_embedding<S: Scalar>(t: usize, dim: usize) -> Vec<S> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let angle = t as f64 * freq;
        out.push(S::lit(angle.sin()));
        out.push(S::lit(angle.cos()));
    }
    out
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

#[inline]
fn silu<S: Scalar>(x: S) -> S {
    x * sigmoid(x)
}

#[inline]
fn silu_grad<S: Scalar>(x: S) -> S {
    let s = sigmoid(x);
    s * (S::one() + x * (S::one() - s))
}

/// MLP noise predictor ε̂(z_t, t, cond) with SiLU hidden activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserNet<S> {
    config: DenoiserConfig,
    layers: Vec<Linear<S>>,
}

/// Activations retained by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    /// Input to each layer; `inputs[0]` is the concatenated network input.
    inputs: Vec<Vec<S>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<S>>,
    pub output: Vec<S>,
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub layers: Vec<Linear<S>>,
}

impl<S: Scalar> DenoiserNet<S> {
    /// LeCun-normal weights, zero biases.
    pub fn new<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.input_dim()];
        widths.extend(&config.hidden);
        widths.push(config.latent_dim);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let mut scale = 1.0 / (w[0] as f64).sqrt();
                if i == last {
                    scale *= config.output_init_scale;
                }
                Linear {
                    weight: DenseMatrix::random_normal(w[1], w[0], S::lit(scale), rng),
                    bias: vec![S::zero(); w[1]],
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Network with explicitly provided layers (shapes are checked).
    pub fn from_layers(config: DenoiserConfig, layers: Vec<Linear<S>>) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.input_dim()];
        widths.extend(&config.hidden);
        widths.push(config.latent_dim);
        check_dim("layer count", widths.len() - 1, layers.len())?;
        for (l, w) in layers.iter().zip(widths.windows(2)) {
            check_dim("layer inputs", w[0], l.weight.cols())?;
            check_dim("layer outputs", w[1], l.weight.rows())?;
            check_dim("layer bias", w[1], l.bias.len())?;
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Linear<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear<S>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    fn assemble_input(&self, z_t: &[S], t: usize, cond: &[S]) -> Result<Vec<S>> {
        check_dim("denoiser latent input", self.config.latent_dim, z_t.len())?;
        check_dim("denoiser condition input", self.config.cond_dim, cond.len())?;
        if t >= self.config.timesteps {
            return Err(Error::Config(format!(
                "timestep {t} outside [0, {})",
                self.config.timesteps
            )));
        }
        let mut x = Vec::with_capacity(self.config.input_dim());
        x.extend_from_slice(z_t);
        x.extend(time_embedding::<S>(t, self.config.time_dim));
        x.extend_from_slice(cond);
        Ok(x)
    }

    /// Predicted noise ε̂ for `z_t` at timestep `t` under condition `cond`.
    pub fn forward(&self, z_t: &[S], t: usize, cond: &[S]) -> Result<Vec<S>> {
        let mut h = self.assemble_input(z_t, t, cond)?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i < last {
                h.iter_mut().for_each(|v| *v = silu(*v));
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, z_t: &[S], t: usize, cond: &[S]) -> Result<ForwardCache<S>> {
        let mut h = self.assemble_input(z_t, t, cond)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            inputs.push(h);
            if i < last {
                h = z.iter().map(|&v| silu(v)).collect();
                pre.push(z);
            } else {
                h = z;
            }
        }
        Ok(ForwardCache { inputs, pre, output: h })
    }

    /// Gradient of a scalar loss w.r.t. all parameters given `dL/dε̂`.
    pub fn backward(&self, cache: &ForwardCache<S>, grad_output: &[S]) -> Result<Gradients<S>> {
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_backward(cache, grad_output, S::one(), &mut grads)?;
        Ok(grads)
    }

    /// Sums gradients over a batch of cached forward passes.
    pub fn backward_batch(&self, caches: &[ForwardCache<S>], grad_outputs: &[Vec<S>]) -> Result<Gradients<S>> {
        check_dim("backward batch", caches.len(), grad_outputs.len())?;
        let mut grads = Gradients::zeros_like(self);
        for (c, g) in caches.iter().zip(grad_outputs) {
            self.accumulate_backward(c, g, S::one(), &mut grads)?;
        }
        Ok(grads)
    }

    /// Adds `weight · ∂L/∂θ` into `grads`.
    pub fn accumulate_backward(
        &self,
        cache: &ForwardCache<S>,
        grad_output: &[S],
        weight: S,
        grads: &mut Gradients<S>,
    ) -> Result<()> {
        check_dim("output gradient", self.config.latent_dim, grad_output.len())?;
        check_dim("forward cache", self.layers.len(), cache.inputs.len())?;
        let mut delta: Vec<S> = grad_output.iter().map(|&g| g * weight).collect();
        for l in (0..self.layers.len()).rev() {
            if l < self.layers.len() - 1 {
                for (d, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *d *= silu_grad(z);
                }
            }
            let input = &cache.inputs[l];
            let g = &mut grads.layers[l];
            let cols = g.weight.cols();
            let gw = g.weight.as_mut_slice();
            for (r, &d) in delta.iter().enumerate() {
                g.bias[r] += d;
                for (w, &a) in gw[r * cols..(r + 1) * cols].iter_mut().zip(input) {
                    *w += d * a;
                }
            }
            if l > 0 {
                delta = self.layers[l].weight.matvec_t(&delta)?;
            }
        }
        Ok(())
    }
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(net: &DenoiserNet<S>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Linear::zeros(l.weight.cols(), l.weight.rows()))
                .collect(),
        }
    }

    /// `self += factor · other`
    pub fn add_scaled(&mut self, other: &Self, factor: S) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += factor * y;
            }
        }
    }

    pub fn scale(&mut self, factor: S) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

fn linear_tensors<S: Scalar>(layers: &[Linear<S>]) -> Vec<&[S]> {
    layers
        .iter()
        .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
        .collect()
}

fn linear_tensors_mut<S: Scalar>(layers: &mut [Linear<S>]) -> Vec<&mut [S]> {
    layers
        .iter_mut()
        .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
        .collect()
}

impl<S: Scalar> ParamTensors<S> for DenoiserNet<S> {
    fn tensors(&self) -> Vec<&[S]> {
        linear_tensors(&self.layers)
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        linear_tensors_mut(&mut self.layers)
    }
}

impl<S: Scalar> ParamTensors<S> for Gradients<S> {
    fn tensors(&self) -> Vec<&[S]> {
        linear_tensors(&self.layers)
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        linear_tensors_mut(&mut self.layers)
    }
}
