//! DDPM forward noising, the noise-prediction loss and ancestral sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{DenoiserNet, Gradients, Scalar};
use crate::rng::{normal, normal_vec};

/// Noise schedule β_t with cumulative products ᾱ_t = Π_{s≤t} (1 − β_s).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule<S> {
    betas: Vec<S>,
    alpha_bars: Vec<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    /// β at t = 0 for a 1000-step reference schedule; rescaled by 1000 / T.
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl<S: Scalar> DiffusionSchedule<S> {
    pub fn from_betas(betas: Vec<S>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if betas.iter().any(|&b| !(b > S::zero() && b < S::one())) {
            return Err(Error::Config("every beta must lie in (0, 1)".into()));
        }
        let mut acc = S::one();
        let alpha_bars = betas
            .iter()
            .map(|&b| {
                acc *= S::one() - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    /// Linear schedule whose endpoints are stretched by `1000 / T` so the
    /// total injected noise matches the 1000-step reference schedule.
    pub fn linear(config: &ScheduleConfig) -> Result<Self> {
        let t = config.timesteps;
        if t == 0 {
            return Err(Error::Config("timesteps must be positive".into()));
        }
        let stretch = 1000.0 / t as f64;
        let start = config.beta_start * stretch;
        let end = config.beta_end * stretch;
        let betas = (0..t)
            .map(|i| {
                let frac = if t == 1 { 0.0 } else { i as f64 / (t - 1) as f64 };
                S::lit(start + (end - start) * frac)
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> S {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> S {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[S] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[S] {
        &self.alpha_bars
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < self.timesteps() {
            Ok(())
        } else {
            Err(Error::Config(format!("timestep {t} outside [0, {})", self.timesteps())))
        }
    }
}

/// A latent noised to timestep `t`, with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedSample<S> {
    pub z_t: Vec<S>,
    pub t: usize,
    pub eps: Vec<S>,
}

/// Anything that predicts the noise in `z_t`.
pub trait NoisePredictor<S: Scalar> {
    fn latent_dim(&self) -> usize;
    fn predict(&self, z_t: &[S], t: usize, cond: &[S]) -> Result<Vec<S>>;
}

impl<S: Scalar> NoisePredictor<S> for DenoiserNet<S> {
    fn latent_dim(&self) -> usize {
        self.config().latent_dim
    }

    fn predict(&self, z_t: &[S], t: usize, cond: &[S]) -> Result<Vec<S>> {
        self.forward(z_t, t, cond)
    }
}

/// One step of q(z_t | z_{t−1}) = N(√(1−β_t) z_{t−1}, β_t I).
pub fn forward_step<S: Scalar, R: Rng + ?Sized>(
    schedule: &DiffusionSchedule<S>,
    z_prev: &[S],
    t: usize,
    rng: &mut R,
) -> Result<Vec<S>> {
    schedule.check_t(t)?;
    let beta = schedule.beta(t);
    let keep = (S::one() - beta).sqrt();
    let noise = beta.sqrt();
    Ok(z_prev.iter().map(|&z| keep * z + noise * normal::<S, _>(rng)).collect())
}

/// Closed-form q(z_t | z_0) = N(√ᾱ_t z_0, (1 − ᾱ_t) I).
pub fn forward_marginal<S: Scalar, R: Rng + ?Sized>(
    schedule: &DiffusionSchedule<S>,
    z0: &[S],
    t: usize,
    rng: &mut R,
) -> Result<NoisedSample<S>> {
    schedule.check_t(t)?;
    let eps: Vec<S> = normal_vec(rng, z0.len());
    Ok(noise_with(schedule, z0, t, eps))
}

/// Deterministic part of [`forward_marginal`] for a given noise draw.
pub fn noise_with<S: Scalar>(schedule: &DiffusionSchedule<S>, z0: &[S], t: usize, eps: Vec<S>) -> NoisedSample<S> {
    let ab = schedule.alpha_bar(t);
    let signal = ab.sqrt();
    let noise = (S::one() - ab).sqrt();
    let z_t = z0.iter().zip(&eps).map(|(&z, &e)| signal * z + noise * e).collect();
    NoisedSample { z_t, t, eps }
}

/// Draws t ~ U{0..T−1} and ε, and noises `z0`.
pub fn draw_noised<S: Scalar, R: Rng + ?Sized>(
    schedule: &DiffusionSchedule<S>,
    z0: &[S],
    rng: &mut R,
) -> NoisedSample<S> {
    let t = rng.random_range(0..schedule.timesteps());
    let eps = normal_vec(rng, z0.len());
    noise_with(schedule, z0, t, eps)
}

/// ‖ε − ε̂‖² / dim.
pub fn noise_mse<S: Scalar>(eps: &[S], eps_hat: &[S]) -> S {
    let n = S::lit(eps.len() as f64);
    eps.iter().zip(eps_hat).map(|(&a, &b)| (a - b) * (a - b)).sum::<S>() / n
}

/// Denoising loss of one draw and the sample it was computed on.
#[derive(Debug, Clone)]
pub struct DenoiseLoss<S> {
    pub loss: S,
    pub sample: NoisedSample<S>,
}

/// Loss only, for any predictor.
pub fn denoise_loss<S: Scalar, P: NoisePredictor<S> + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    schedule: &DiffusionSchedule<S>,
    z0: &[S],
    cond: &[S],
    rng: &mut R,
) -> Result<DenoiseLoss<S>> {
    check_dim("denoise loss latent", predictor.latent_dim(), z0.len())?;
    let sample = draw_noised(schedule, z0, rng);
    let eps_hat = predictor.predict(&sample.z_t, sample.t, cond)?;
    let loss = noise_mse(&sample.eps, &eps_hat);
    if !loss.is_finite() {
        return Err(Error::NonFinite("denoising loss"));
    }
    Ok(DenoiseLoss { loss, sample })
}

/// Loss and parameter gradients for the MLP denoiser.
pub fn denoise_loss_grad<S: Scalar, R: Rng + ?Sized>(
    net: &DenoiserNet<S>,
    schedule: &DiffusionSchedule<S>,
    z0: &[S],
    cond: &[S],
    rng: &mut R,
) -> Result<(DenoiseLoss<S>, Gradients<S>)> {
    check_dim("denoise loss latent", net.config().latent_dim, z0.len())?;
    let sample = draw_noised(schedule, z0, rng);
    let (loss, grads) = loss_grad_at(net, &sample, cond)?;
    Ok((DenoiseLoss { loss, sample }, grads))
}

/// Loss and gradients at a fixed noised sample.
pub fn loss_grad_at<S: Scalar>(
    net: &DenoiserNet<S>,
    sample: &NoisedSample<S>,
    cond: &[S],
) -> Result<(S, Gradients<S>)> {
    let cache = net.forward_cached(&sample.z_t, sample.t, cond)?;
    let loss = noise_mse(&sample.eps, &cache.output);
    if !loss.is_finite() {
        return Err(Error::NonFinite("denoising loss"));
    }
    let scale = S::lit(2.0 / sample.eps.len() as f64);
    let d_out: Vec<S> = cache
        .output
        .iter()
        .zip(&sample.eps)
        .map(|(&o, &e)| scale * (o - e))
        .collect();
    let grads = net.backward(&cache, &d_out)?;
    Ok((loss, grads))
}

/// Ancestral DDPM sampling from t = T−1 down to 0 with variance β_t.
pub fn sample<S: Scalar, P: NoisePredictor<S> + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    schedule: &DiffusionSchedule<S>,
    cond: &[S],
    rng: &mut R,
) -> Result<Vec<S>> {
    let dim = predictor.latent_dim();
    let mut z: Vec<S> = normal_vec(rng, dim);
    for t in (0..schedule.timesteps()).rev() {
        let eps_hat = predictor.predict(&z, t, cond)?;
        let beta = schedule.beta(t);
        let alpha = S::one() - beta;
        let coef = beta / (S::one() - schedule.alpha_bar(t)).sqrt();
        let inv_sqrt_alpha = S::one() / alpha.sqrt();
        for (zi, &e) in z.iter_mut().zip(&eps_hat) {
            *zi = inv_sqrt_alpha * (*zi - coef * e);
        }
        if t > 0 {
            let sigma = beta.sqrt();
            for zi in z.iter_mut() {
                *zi += sigma * normal::<S, _>(rng);
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Sampling { step: t });
        }
    }
    Ok(z)
}
