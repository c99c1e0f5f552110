//! Diffusion prior machinery: forward noising, the ε-prediction loss,
//! training, Tweedie estimation, reverse steps, and unconditional sampling.
//!
//! Masks are rescaled from {0, 1} to [−1, +1] before encoding; decoded
//! outputs are mapped back and clamped. Tweedie inversion and the reverse
//! steps use the cumulative ᾱ_t, matching the forward noising law
//! `z_t = √ᾱ_t·z₀ + √(1−ᾱ_t)·η`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::grid::SceneMask;
use crate::nn::{Adam, ConvDenoiser, DenseDenoiser, DenoiserModel, NoisePredictor};
use crate::schedule::NoiseSchedule;

/// Reverse-process flavor: stochastic ancestral steps or deterministic DDIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    Ancestral,
    Ddim,
}

/// Denoiser architecture selector for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiserArch {
    Dense,
    Conv,
}

pub fn gaussian_like(dims: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn(dims, |_| StandardNormal.sample(rng))
}

/// {0,1} mask values to signed [−1, +1] data.
pub fn mask_to_signed(values: &Array2<f64>) -> Array2<f64> {
    values.mapv(|v| 2.0 * v - 1.0)
}

/// Signed decode back to mask range, clamped.
pub fn signed_to_mask(values: &Array2<f64>) -> Array2<f64> {
    values.mapv(|v| (0.5 * (v + 1.0)).clamp(0.0, 1.0))
}

/// `z_t = √ᾱ_t·z₀ + √(1−ᾱ_t)·η`.
pub fn forward_diffuse(
    z0: &Array2<f64>,
    t: usize,
    eta: &Array2<f64>,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar_t(t)?;
    if eta.dim() != z0.dim() {
        return Err(Error::Invalid("noise shape mismatch".into()));
    }
    Ok(z0 * ab.sqrt() + eta * (1.0 - ab).sqrt())
}

/// Tweedie inversion from a precomputed ε̂.
pub(crate) fn tweedie_from_eps(
    z: &Array2<f64>,
    t: usize,
    eps_hat: &Array2<f64>,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar_t(t)?;
    Ok((z - &(eps_hat * (1.0 - ab).sqrt())) / ab.sqrt())
}

/// `z̄₀ = (z − √(1−ᾱ_t)·ε_δ(z, t)) / √ᾱ_t`.
pub fn tweedie_z0(
    z: &Array2<f64>,
    t: usize,
    denoiser: &dyn NoisePredictor,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    let eps_hat = denoiser.predict(z, t);
    tweedie_from_eps(z, t, &eps_hat, sched)
}

/// Ancestral mean plus optional noise:
/// `z_{t−1} = (z_t − (1−α_t)/√(1−ᾱ_t)·ε̂)/√α_t + σ_t·ξ`.
pub(crate) fn ancestral_from_eps(
    z: &Array2<f64>,
    t: usize,
    eps_hat: &Array2<f64>,
    sched: &NoiseSchedule,
    noise: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    let a = sched.alpha_t(t)?;
    let ab = sched.alpha_bar_t(t)?;
    let coef = (1.0 - a) / (1.0 - ab).sqrt();
    let mut out = (z - &(eps_hat * coef)) / a.sqrt();
    if t > 1 {
        if let Some(xi) = noise {
            out = out + xi * sched.sigma_t(t)?;
        }
    }
    Ok(out)
}

/// Deterministic step toward `t_prev` (< t):
/// `z_prev = √ᾱ_prev·z̄₀ + √(1−ᾱ_prev)·ε̂`.
pub(crate) fn ddim_from_eps(
    z: &Array2<f64>,
    t: usize,
    t_prev: usize,
    eps_hat: &Array2<f64>,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    let z0 = tweedie_from_eps(z, t, eps_hat, sched)?;
    let ab_prev = sched.alpha_bar_t(t_prev)?;
    Ok(&z0 * ab_prev.sqrt() + eps_hat * (1.0 - ab_prev).sqrt())
}

/// One reverse step `t → t−1`. In ancestral mode `noise` supplies σ_t·ξ and is
/// ignored at t = 1; DDIM ignores it entirely.
pub fn reverse_step(
    z: &Array2<f64>,
    t: usize,
    denoiser: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    mode: SamplerMode,
    noise: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    let eps_hat = denoiser.predict(z, t);
    match mode {
        SamplerMode::Ancestral => ancestral_from_eps(z, t, &eps_hat, sched, noise),
        SamplerMode::Ddim => ddim_from_eps(z, t, t - 1, &eps_hat, sched),
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Per-item seed derivation for batched losses.
pub fn item_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64))
}

/// ε-prediction squared error for one latent under its own seed: draws
/// `t ~ U[1, T]` and `η`, noises, and scores `mean((ε̂ − η)²)`.
pub fn denoise_loss_item(
    denoiser: &dyn NoisePredictor,
    z0: &Array2<f64>,
    sched: &NoiseSchedule,
    item_seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
    let t = rng.random_range(1..=sched.len());
    let eta = gaussian_like(z0.dim(), &mut rng);
    let zt = forward_diffuse(z0, t, &eta, sched)?;
    let eps_hat = denoiser.predict(&zt, t);
    let n = z0.len() as f64;
    Ok((&eps_hat - &eta).mapv(|d| d * d).sum() / n)
}

/// Mean per-item loss over a batch; item seeds derive from `(seed, index)`.
pub fn denoise_loss(
    denoiser: &dyn NoisePredictor,
    z0_batch: &[Array2<f64>],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    if z0_batch.is_empty() {
        return Err(Error::Invalid("denoise_loss needs a nonempty batch".into()));
    }
    let mut acc = 0.0;
    for (i, z0) in z0_batch.iter().enumerate() {
        acc += denoise_loss_item(denoiser, z0, sched, item_seed(seed, i))?;
    }
    Ok(acc / z0_batch.len() as f64)
}

/// Training settings for [`train_denoiser`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub arch: DenoiserArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch: 16,
            lr: 1e-4,
            seed: 0,
            arch: DenoiserArch::Dense,
        }
    }
}

/// Trains an ε-predictor on binary scenes. Returns the model and the per
/// epoch mean-loss trace (1-indexed epochs). Aborts on NaN loss.
pub fn train_denoiser(
    scenes: &[SceneMask],
    codec: Codec,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(DenoiserModel, Vec<(usize, f64)>)> {
    if scenes.is_empty() {
        return Err(Error::Invalid("training corpus is empty".into()));
    }
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(Error::Invalid("epochs and batch must be >= 1".into()));
    }
    let grid_dims = scenes[0].grid.dims();
    if scenes.iter().any(|s| s.grid.dims() != grid_dims) {
        return Err(Error::Invalid("training scenes disagree on grid".into()));
    }
    let latents: Vec<Array2<f64>> = scenes
        .iter()
        .map(|s| codec.encode(&mask_to_signed(&s.values)))
        .collect::<Result<_>>()?;
    let (l_az, l_rng) = latents[0].dim();

    let mut model = match cfg.arch {
        DenoiserArch::Dense => DenoiserModel::Dense(DenseDenoiser::new(l_az, l_rng, cfg.seed)),
        DenoiserArch::Conv => DenoiserModel::Conv(ConvDenoiser::new(l_az, l_rng, cfg.seed)?),
    };
    let mut adam = Adam::new(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x7261696e)); // shuffling stream

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..latents.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_items = 0usize;
        for chunk in order.chunks(cfg.batch) {
            // Draw (t, η) per item from the shuffling stream, sequentially.
            let draws: Vec<(usize, Array2<f64>, Array2<f64>)> = chunk
                .iter()
                .map(|&idx| {
                    let t = rng.random_range(1..=sched.len());
                    let eta = gaussian_like((l_az, l_rng), &mut rng);
                    (t, eta, latents[idx].clone())
                })
                .collect();
            let loss = match &mut model {
                DenoiserModel::Dense(net) => dense_train_step(net, &draws, sched, &mut adam)?,
                DenoiserModel::Conv(net) => conv_train_step(net, &draws, sched, &mut adam)?,
            };
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged (loss {loss}) at epoch {epoch}"
                )));
            }
            epoch_loss += loss * chunk.len() as f64;
            epoch_items += chunk.len();
        }
        trace.push((epoch, epoch_loss / epoch_items as f64));
    }
    Ok((model, trace))
}

fn dense_train_step(
    net: &mut DenseDenoiser,
    draws: &[(usize, Array2<f64>, Array2<f64>)],
    sched: &NoiseSchedule,
    adam: &mut Adam,
) -> Result<f64> {
    let b = draws.len();
    let numel = draws[0].2.len();
    let mut z_rows = Array2::zeros((b, numel));
    let mut targets = Array2::zeros((b, numel));
    let mut ts = Vec::with_capacity(b);
    for (r, (t, eta, z0)) in draws.iter().enumerate() {
        let zt = forward_diffuse(z0, *t, eta, sched)?;
        for (c, v) in zt.iter().enumerate() {
            z_rows[[r, c]] = *v;
        }
        for (c, v) in eta.iter().enumerate() {
            targets[[r, c]] = *v;
        }
        ts.push(*t);
    }
    let (out, cache) = net.forward_batch(&z_rows, &ts);
    let resid = &out - &targets;
    let total = (b * numel) as f64;
    let loss = resid.mapv(|d| d * d).sum() / total;
    let d_out = resid.mapv(|d| 2.0 * d / total);
    let (grads, _) = net.backward_batch(&cache, &d_out);
    net.apply_grads(&grads, adam);
    Ok(loss)
}

fn conv_train_step(
    net: &mut ConvDenoiser,
    draws: &[(usize, Array2<f64>, Array2<f64>)],
    sched: &NoiseSchedule,
    adam: &mut Adam,
) -> Result<f64> {
    let b = draws.len();
    let numel = draws[0].2.len();
    let total = (b * numel) as f64;
    let inputs: Vec<(usize, Array2<f64>, &Array2<f64>)> = draws
        .iter()
        .map(|(t, eta, z0)| Ok((*t, forward_diffuse(z0, *t, eta, sched)?, eta)))
        .collect::<Result<_>>()?;
    // Per-item gradients in parallel, reduced in index order so the result
    // does not depend on scheduling.
    let net_ref: &ConvDenoiser = net;
    let per_item: Vec<(f64, crate::nn::ConvGrads)> = inputs
        .par_iter()
        .map(|(t, zt, eta)| net_ref.grad_step(zt, *t, eta, 1.0 / total))
        .collect();
    let mut loss = 0.0;
    let mut acc = crate::nn::ConvGrads::zeros_like(net);
    for (sq, g) in per_item {
        loss += sq;
        acc.add(&g);
    }
    net.apply_grads(&acc, adam);
    Ok(loss / total)
}

/// Draws `z_T ~ N(0, I)`, runs the full reverse chain, decodes, rescales to
/// [0, 1], and clamps. Mask-shaped values are returned; the caller attaches
/// the grid.
pub fn sample_unconditional(
    denoiser: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    codec: Codec,
    seed: u64,
    mode: SamplerMode,
) -> Result<Array2<f64>> {
    let dims = denoiser.latent_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = gaussian_like(dims, &mut rng);
    for t in (1..=sched.len()).rev() {
        let eps_hat = denoiser.predict(&z, t);
        z = match mode {
            SamplerMode::Ddim => ddim_from_eps(&z, t, t - 1, &eps_hat, sched)?,
            SamplerMode::Ancestral => {
                let noise = if t > 1 {
                    Some(gaussian_like(dims, &mut rng))
                } else {
                    None
                };
                ancestral_from_eps(&z, t, &eps_hat, sched, noise.as_ref())?
            }
        };
    }
    Ok(signed_to_mask(&codec.decode(&z)))
}

/// Attaches a grid to sampler output, validating dimensions.
pub fn values_to_mask(grid: &crate::grid::PolarGrid, values: Array2<f64>) -> Result<SceneMask> {
    SceneMask::from_values(grid.clone(), values)
}
