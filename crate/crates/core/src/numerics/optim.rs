use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{check_dim, Error, Result};

/// Anything exposing its parameters as a fixed sequence of flat tensors.
pub trait ParamTensors<S> {
    fn tensors(&self) -> Vec<&[S]>;
    fn tensors_mut(&mut self) -> Vec<&mut [S]>;
}

impl<S> ParamTensors<S> for Vec<Vec<S>> {
    fn tensors(&self) -> Vec<&[S]> {
        self.iter().map(Vec::as_slice).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        self.iter_mut().map(Vec::as_mut_slice).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid AdamW hyperparameters {self:?}")))
        }
    }
}

/// AdamW moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<S> {
    pub config: AdamWConfig,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> AdamWState<S> {
    pub fn new<P: ParamTensors<S> + ?Sized>(config: AdamWConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            config,
            first: shapes.iter().map(|&n| vec![S::zero(); n]).collect(),
            second: shapes.iter().map(|&n| vec![S::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<S>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<S>] {
        &self.second
    }

    /// One AdamW update with decoupled weight decay at `lr · lr_scale`.
    ///
    /// Non-finite gradients leave parameters and moments untouched and
    /// return [`Error::NonFinite`].
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G, lr_scale: f64) -> Result<()>
    where
        P: ParamTensors<S> + ?Sized,
        G: ParamTensors<S> + ?Sized,
    {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        check_dim("AdamW tensor count", self.first.len(), params.len())?;
        check_dim("AdamW gradient count", params.len(), grads.len())?;
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.first) {
            check_dim("AdamW parameter", m.len(), p.len())?;
            check_dim("AdamW gradient", p.len(), g.len())?;
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gradient"));
        }

        self.step += 1;
        let c = &self.config;
        let lr = S::lit(c.learning_rate * lr_scale);
        let decay = S::one() - lr * S::lit(c.weight_decay);
        let b1 = S::lit(c.beta1);
        let b2 = S::lit(c.beta2);
        let eps = S::lit(c.epsilon);
        let bc1 = S::one() - b1.powi(self.step as i32);
        let bc2 = S::one() - b2.powi(self.step as i32);

        for (((p, g), m), v) in params.iter_mut().zip(&grads).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (S::one() - b1) * gi;
                v[i] = b2 * v[i] + (S::one() - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm over all tensors.
pub fn global_norm<S: Scalar, G: ParamTensors<S> + ?Sized>(grads: &G) -> S {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .fold(S::zero(), |acc, &v| acc + v * v)
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping. Repeated application is a no-op.
pub fn clip_grad_norm<S: Scalar, G: ParamTensors<S> + ?Sized>(grads: &mut G, max_norm: S) -> S {
    let total = global_norm(grads);
    // NaN norms fall through unclipped.
    if total.partial_cmp(&max_norm) != Some(std::cmp::Ordering::Greater) {
        return total;
    }
    let original: Vec<Vec<S>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut coef = max_norm / total;
    loop {
        for (t, o) in grads.tensors_mut().into_iter().zip(&original) {
            for (x, &y) in t.iter_mut().zip(o) {
                *x = y * coef;
            }
        }
        // Rounding can leave the result an ulp above the bound.
        if global_norm(grads) <= max_norm {
            return total;
        }
        coef *= S::one() - S::epsilon() * S::lit(2.0);
    }
}

/// Linear warm-up factor `min(step / warmup_steps, 1)`.
pub fn warmup_scale(step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 {
        return 1.0;
    }
    (step as f64 / warmup_steps as f64).min(1.0)
}
