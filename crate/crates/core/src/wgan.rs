//! Three generators and two critics trained as a clipped Wasserstein GAN.
//!
//! * `g1`: latent `r` → noise patch (tanh output)
//! * `g2`: noisy image `Z` → clean estimate (sigmoid output)
//! * `g3`: clean estimate → noisy image, closing the cycle
//! * `c1` scores noise patches, `c2` scores noisy images
//!
//! Critics score a sample by the spatial mean of their final map. Real and
//! generated samples go through a critic as one batch so both halves share
//! batchnorm statistics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Adam, LrSchedule, Mode, Network, Optimizer, RmsProp};
use crate::rng::Rng;
use crate::tensor::Tensor;

const DATA_STREAM: u64 = 1;
const LATENT_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

/// Gain on the He-normal init of the last `g1` layer. At full gain the
/// untrained generator emits saturated, offset fields several times louder
/// than typical sensor noise, and Adam needs thousands of steps to shrink
/// them.
pub const G1_OUTPUT_GAIN: f64 = 0.1;

/// `(α, β, γ)` weights of the noise, image and cycle terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub const fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WganConfig {
    pub arch: ArchConfig,
    pub gen_weights: LossWeights,
    pub critic_weights: LossWeights,
    pub clip: f64,
    pub critic_iters: usize,
    pub epochs: usize,
    /// Generator updates per epoch; `None` means one pass over the noisy
    /// patches.
    pub steps_per_epoch: Option<usize>,
    pub batch: usize,
    pub gen_lr: f64,
    pub gen_schedule: LrSchedule,
    pub critic_lr: f64,
}

impl WganConfig {
    pub fn paper(channels: usize) -> Self {
        Self {
            arch: ArchConfig::paper(channels),
            gen_weights: LossWeights::new(5.0, 1.0, 10.0),
            critic_weights: LossWeights::new(1.0, 1.0, 0.0),
            clip: 0.02,
            critic_iters: 5,
            epochs: 30,
            steps_per_epoch: None,
            batch: 64,
            gen_lr: 0.0004,
            gen_schedule: LrSchedule::LinearDecay {
                start_epoch: 10,
                total_epochs: 30,
            },
            critic_lr: 0.00005,
        }
    }

    /// Small patches and widths, two short epochs; every structural element
    /// of the full model is kept.
    pub fn desk(channels: usize) -> Self {
        Self {
            arch: ArchConfig::desk(channels),
            epochs: 2,
            steps_per_epoch: Some(100),
            batch: 16,
            gen_lr: 0.0005,
            gen_schedule: LrSchedule::LinearDecay {
                start_epoch: 1,
                total_epochs: 3,
            },
            critic_lr: 0.0005,
            ..Self::paper(channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip.is_nan() || self.clip <= 0.0 {
            return Err(Error::Config(format!("clip must be > 0, got {}", self.clip)));
        }
        if self.critic_iters == 0 || self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("critic_iters, epochs and batch must be ≥ 1".into()));
        }
        if self.critic_weights.gamma != 0.0 {
            return Err(Error::Config("the cycle term has no critic parameters; critic gamma must be 0".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be ≥ 1".into()));
        }
        if !(self.gen_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        Ok(())
    }
}

/// The five networks.
#[derive(Clone, Debug)]
pub struct WganBundle {
    pub arch: ArchConfig,
    pub g1: Network,
    pub g2: Network,
    pub g3: Network,
    pub c1: Network,
    pub c2: Network,
}

pub const BUNDLE_PREFIXES: [&str; 5] = ["g1/", "g2/", "g3/", "c1/", "c2/"];

impl WganBundle {
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed, INIT_STREAM);
        let mut g1 = Network::new(arch.noise_generator()?, &mut rng)?;
        if let Some(w) = g1.params_mut().params_mut().iter_mut().rev().find(|p| p.name.ends_with(".weight")) {
            w.value = w.value.scale(G1_OUTPUT_GAIN);
        }
        Ok(Self {
            g1,
            g2: Network::new(arch.image_generator(), &mut rng)?,
            g3: Network::new(arch.image_generator(), &mut rng)?,
            c1: Network::new(arch.critic()?, &mut rng)?,
            c2: Network::new(arch.critic()?, &mut rng)?,
            arch: arch.clone(),
        })
    }

    fn nets(&self) -> [&Network; 5] {
        [&self.g1, &self.g2, &self.g3, &self.c1, &self.c2]
    }

    fn nets_mut(&mut self) -> [&mut Network; 5] {
        [&mut self.g1, &mut self.g2, &mut self.g3, &mut self.c1, &mut self.c2]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for (net, prefix) in self.nets().iter().zip(BUNDLE_PREFIXES) {
            ckpt.extend(net.params().named_tensors(prefix));
        }
        ckpt
    }

    pub fn from_checkpoint(arch: &ArchConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut b = Self::new(arch, 0)?;
        for (net, prefix) in b.nets_mut().into_iter().zip(BUNDLE_PREFIXES) {
            net.params_mut().load_named(prefix, |n| ckpt.get(n))?;
        }
        Ok(b)
    }

    pub fn critic_max_abs(&self) -> f64 {
        self.c1.params().max_abs().max(self.c2.params().max_abs())
    }

    /// `count` latent vectors `r ~ N(0, I)` shaped `(count, r, 1, 1)`.
    pub fn latents(&self, count: usize, rng: &mut Rng) -> Tensor {
        Tensor::from_fn(&[count, self.arch.latent_dim, 1, 1], |_| rng.normal())
    }

    /// `count` noise fields of size `H×W` from `g1`; see [`NoiseSampler`].
    pub fn sample_noise(&mut self, count: usize, height: usize, width: usize, rng: &mut Rng) -> Result<Tensor> {
        self.split().1.sample(count, height, width, rng)
    }

    /// Borrow `g2` as a pair base and `g1` as a noise source at once.
    pub fn split(&mut self) -> (ImageGenerator<'_>, NoiseSampler<'_>) {
        (
            ImageGenerator(&mut self.g2),
            NoiseSampler {
                g1: &mut self.g1,
                arch: &self.arch,
            },
        )
    }

    pub fn noise_sampler(&mut self) -> NoiseSampler<'_> {
        self.split().1
    }
}

/// Draws noise fields of any size from `g1` (evaluation mode), stitching
/// independent patches and cropping.
pub struct NoiseSampler<'a> {
    g1: &'a mut Network,
    arch: &'a ArchConfig,
}

impl NoiseSampler<'_> {
    pub fn latents(&self, count: usize, rng: &mut Rng) -> Tensor {
        Tensor::from_fn(&[count, self.arch.latent_dim, 1, 1], |_| rng.normal())
    }

    pub fn sample(&mut self, count: usize, height: usize, width: usize, rng: &mut Rng) -> Result<Tensor> {
        let p = self.arch.patch;
        let c = self.arch.channels;
        let (ty, tx) = (height.div_ceil(p), width.div_ceil(p));
        let tiles = self.g1.forward(&self.latents(count * ty * tx, rng), Mode::Eval)?;
        let mut out = Tensor::zeros(&[count, c, height, width]);
        let tile_len = c * p * p;
        let data = out.data_mut();
        for n in 0..count {
            for (t, tile) in tiles.data()[n * ty * tx * tile_len..(n + 1) * ty * tx * tile_len]
                .chunks_exact(tile_len)
                .enumerate()
            {
                let (oy, ox) = ((t / tx) * p, (t % tx) * p);
                for ch in 0..c {
                    for y in 0..p.min(height - oy) {
                        let src = &tile[ch * p * p + y * p..ch * p * p + y * p + p.min(width - ox)];
                        let row = ((n * c + ch) * height + oy + y) * width + ox;
                        data[row..row + src.len()].copy_from_slice(src);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One minibatch: real noise patches, noisy patches, and `2B` latents (the
/// first half feeds the noise term, the second half the image term).
#[derive(Clone, Debug)]
pub struct Batch {
    pub noise: Tensor,
    pub noisy: Tensor,
    pub latent: Tensor,
}

impl Batch {
    /// `B`, after checking that the three parts agree.
    pub fn size(&self) -> Result<usize> {
        let (b, ..) = self.noise.dims4()?;
        let (bz, ..) = self.noisy.dims4()?;
        let (bl, ..) = self.latent.dims4()?;
        if b == 0 || bz != b || bl != 2 * b {
            return Err(Error::Input(format!(
                "batch needs B noise patches, B noisy patches and 2B latents; got {b}, {bz}, {bl}"
            )));
        }
        Ok(b)
    }
}

/// Per-sample critic scores: spatial mean of each item of the map.
pub fn critic_scores(map: &Tensor) -> Vec<f64> {
    map.data().chunks_exact(map.item_len()).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Upstream gradient for a joint `[real; fake]` map where `d loss / d
/// score_i` is `real_coef` on the real half and `fake_coef` on the fake half.
fn score_upstream(map: &Tensor, b: usize, real_coef: f64, fake_coef: f64) -> Tensor {
    let item = map.item_len();
    let mut g = Tensor::zeros(map.shape());
    for (i, chunk) in g.data_mut().chunks_exact_mut(item).enumerate() {
        let c = if i < b { real_coef } else { fake_coef };
        chunk.fill(c / item as f64);
    }
    g
}

/// `E f(real) − E f(fake)`, with real and fake scored as one batch.
pub fn wasserstein_gap(critic: &mut Network, real: &Tensor, fake: &Tensor, mode: Mode) -> Result<f64> {
    let b = real.shape()[0];
    let s = critic_scores(&critic.forward(&Tensor::concat(&[real, fake])?, mode)?);
    Ok(mean(&s[..b]) - mean(&s[b..]))
}

/// Noise term: `E_n f1(n) − E_r f1(g1(r))`, plus the generator-side term
/// `−E_r f1(g1(r))`.
pub fn loss_noise(c1: &mut Network, g1: &mut Network, real: &Tensor, latent: &Tensor, mode: Mode) -> Result<(f64, f64)> {
    let fake = g1.forward(latent, mode)?;
    let b = real.shape()[0];
    let s = critic_scores(&c1.forward(&Tensor::concat(&[real, &fake])?, mode)?);
    Ok((mean(&s[..b]) - mean(&s[b..]), -mean(&s[b..])))
}

/// Image term: `E_Z f2(Z) − E f2(g2(Z) + g1(r))`, plus `−E f2(g2(Z) + g1(r))`.
pub fn loss_image(
    c2: &mut Network,
    g1: &mut Network,
    g2: &mut Network,
    noisy: &Tensor,
    latent: &Tensor,
    mode: Mode,
) -> Result<(f64, f64)> {
    let fake = g2.forward(noisy, mode)?.add(&g1.forward(latent, mode)?)?;
    let b = noisy.shape()[0];
    let s = critic_scores(&c2.forward(&Tensor::concat(&[noisy, &fake])?, mode)?);
    Ok((mean(&s[..b]) - mean(&s[b..]), -mean(&s[b..])))
}

/// Cycle term: mean absolute difference between `Z` and `g3(g2(Z))`.
pub fn loss_cycle(g2: &mut Network, g3: &mut Network, noisy: &Tensor, mode: Mode) -> Result<f64> {
    let back = g3.forward(&g2.forward(noisy, mode)?, mode)?;
    Ok(mean_abs_diff(noisy, &back))
}

fn mean_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Loss values seen by one critic or generator update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepLosses {
    pub noise: f64,
    pub image: f64,
    pub cycle: f64,
}

impl StepLosses {
    fn check(&self, step: usize) -> Result<()> {
        for (term, v) in [("L_n", self.noise), ("L_Z", self.image), ("L_cyc", self.cycle)] {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    term: term.into(),
                });
            }
        }
        Ok(())
    }
}

/// One row of the training trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub critic: StepLosses,
    pub generator: StepLosses,
}

pub const TRACE_HEADER: &str = "step,L_n_critic,L_Z_critic,L_n_gen,L_Z_gen,L_cyc";

pub fn write_trace(rows: &[TraceRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.critic.noise, r.critic.image, r.generator.noise, r.generator.image, r.generator.cycle
        )?;
    }
    Ok(())
}

impl WganBundle {
    /// Gradients of `−(α·L_n + β·L_Z)` with respect to the critic
    /// parameters (the critics ascend the weighted gap). Generators run
    /// forward only and their gradients are untouched.
    pub fn critic_gradients(&mut self, batch: &Batch, w: LossWeights) -> Result<StepLosses> {
        let b = batch.size()?;
        let g1_out = self.g1.forward(&batch.latent, Mode::Train)?;
        let fake_noise = g1_out.batch_slice(0..b);
        let fake_image = self.g2.forward(&batch.noisy, Mode::Train)?.add(&g1_out.batch_slice(b..2 * b))?;
        let noise = self.critic_side(true, &batch.noise, &fake_noise, w.alpha)?;
        let image = self.critic_side(false, &batch.noisy, &fake_image, w.beta)?;
        self.g1.zero_grad();
        self.g2.zero_grad();
        Ok(StepLosses { noise, image, cycle: 0.0 })
    }

    fn critic_side(&mut self, first: bool, real: &Tensor, fake: &Tensor, weight: f64) -> Result<f64> {
        let critic = if first { &mut self.c1 } else { &mut self.c2 };
        let b = real.shape()[0];
        let map = critic.forward(&Tensor::concat(&[real, fake])?, Mode::Train)?;
        let s = critic_scores(&map);
        let gap = mean(&s[..b]) - mean(&s[b..]);
        critic.backward(&score_upstream(&map, b, -weight / b as f64, weight / b as f64))?;
        Ok(gap)
    }

    /// Gradients of `α·L_n + β·L_Z + γ·L_cyc` with respect to `g1`, `g2`,
    /// `g3`. Critic gradients produced on the way are discarded.
    pub fn generator_gradients(&mut self, batch: &Batch, w: LossWeights) -> Result<StepLosses> {
        let b = batch.size()?;
        let g1_out = self.g1.forward(&batch.latent, Mode::Train)?;
        let clean = self.g2.forward(&batch.noisy, Mode::Train)?;
        let fake_noise = g1_out.batch_slice(0..b);
        let fake_image = clean.add(&g1_out.batch_slice(b..2 * b))?;

        let (noise, d_noise) = self.generator_side(true, &batch.noise, &fake_noise, w.alpha)?;
        let (image, d_image) = self.generator_side(false, &batch.noisy, &fake_image, w.beta)?;

        let back = self.g3.forward(&clean, Mode::Train)?;
        let cycle = mean_abs_diff(&batch.noisy, &back);
        let k = w.gamma / back.len() as f64;
        let d_back = back.zip_map(&batch.noisy, |y, z| {
            if y > z {
                k
            } else if y < z {
                -k
            } else {
                0.0
            }
        })?;
        let mut d_clean = self.g3.backward(&d_back)?;
        d_clean.axpy(1.0, &d_image)?;
        self.g2.backward(&d_clean)?;
        self.g1.backward(&Tensor::concat(&[&d_noise, &d_image])?)?;
        self.c1.zero_grad();
        self.c2.zero_grad();
        Ok(StepLosses { noise, image, cycle })
    }

    /// Gap and its gradient with respect to the fake half, scaled by `weight`.
    fn generator_side(&mut self, first: bool, real: &Tensor, fake: &Tensor, weight: f64) -> Result<(f64, Tensor)> {
        let critic = if first { &mut self.c1 } else { &mut self.c2 };
        let b = real.shape()[0];
        let map = critic.forward(&Tensor::concat(&[real, fake])?, Mode::Train)?;
        let s = critic_scores(&map);
        let gap = mean(&s[..b]) - mean(&s[b..]);
        // Real scores depend on the fakes through the shared batchnorm
        // statistics, so both halves carry gradient.
        let d = critic.backward(&score_upstream(&map, b, weight / b as f64, -weight / b as f64))?;
        Ok((gap, d.batch_slice(b..2 * b)))
    }

    /// Weighted objective of the generator phase, forward only.
    pub fn generator_objective(&mut self, batch: &Batch, w: LossWeights) -> Result<f64> {
        let b = batch.size()?;
        let g1_out = self.g1.forward(&batch.latent, Mode::Train)?;
        let clean = self.g2.forward(&batch.noisy, Mode::Train)?;
        let fake_image = clean.add(&g1_out.batch_slice(b..2 * b))?;
        let ln = wasserstein_gap(&mut self.c1, &batch.noise, &g1_out.batch_slice(0..b), Mode::Train)?;
        let lz = wasserstein_gap(&mut self.c2, &batch.noisy, &fake_image, Mode::Train)?;
        let back = self.g3.forward(&clean, Mode::Train)?;
        Ok(w.alpha * ln + w.beta * lz + w.gamma * mean_abs_diff(&batch.noisy, &back))
    }

    /// Objective the critic phase minimizes, forward only.
    pub fn critic_objective(&mut self, batch: &Batch, w: LossWeights) -> Result<f64> {
        let b = batch.size()?;
        let g1_out = self.g1.forward(&batch.latent, Mode::Train)?;
        let fake_image = self.g2.forward(&batch.noisy, Mode::Train)?.add(&g1_out.batch_slice(b..2 * b))?;
        let ln = wasserstein_gap(&mut self.c1, &batch.noise, &g1_out.batch_slice(0..b), Mode::Train)?;
        let lz = wasserstein_gap(&mut self.c2, &batch.noisy, &fake_image, Mode::Train)?;
        Ok(-(w.alpha * ln + w.beta * lz))
    }
}

/// Endless random crops with random flips, visiting source images in a
/// shuffled order that is redrawn after every pass.
pub(crate) struct PatchStream<'a> {
    sources: &'a [Image],
    order: Vec<usize>,
    pos: usize,
    patch: usize,
}

impl<'a> PatchStream<'a> {
    pub(crate) fn new(sources: &'a [Image], patch: usize, what: &str) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Input(format!("no {what} to train on")));
        }
        if let Some(s) = sources.iter().find(|s| s.height() < patch || s.width() < patch) {
            return Err(Error::Input(format!(
                "{what} of size {}x{} is smaller than the {patch}-pixel training patch",
                s.height(),
                s.width()
            )));
        }
        Ok(Self {
            sources,
            order: Vec::new(),
            pos: 0,
            patch,
        })
    }

    fn next(&mut self, rng: &mut Rng) -> Result<Image> {
        if self.pos == self.order.len() {
            self.order = (0..self.sources.len()).collect();
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let src = &self.sources[self.order[self.pos]];
        self.pos += 1;
        let top = rng.below(src.height() - self.patch + 1);
        let left = rng.below(src.width() - self.patch + 1);
        let mut p = src.crop(top, left, self.patch, self.patch)?;
        if rng.coin() {
            p = p.flip_horizontal();
        }
        if rng.coin() {
            p = p.flip_vertical();
        }
        Ok(p)
    }

    pub(crate) fn batch(&mut self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let patches = (0..n).map(|_| self.next(rng)).collect::<Result<Vec<_>>>()?;
        Image::batch_to_tensor(&patches)
    }
}

/// Alternating optimisation: `critic_iters` critic updates (RMSProp, then
/// clipping) per generator update (Adam).
pub struct WganTrainer<'a> {
    pub bundle: WganBundle,
    cfg: WganConfig,
    gen_opt: [Adam; 3],
    critic_opt: [RmsProp; 2],
    noise: PatchStream<'a>,
    noisy: PatchStream<'a>,
    data_rng: Rng,
    latent_rng: Rng,
    critic_updates: usize,
    generator_updates: usize,
    last_critic: StepLosses,
}

impl<'a> WganTrainer<'a> {
    pub fn new(noisy: &'a [Image], noise: &'a [Image], cfg: &WganConfig, seed: u64) -> Result<Self> {
        Self::with_bundle(WganBundle::new(&cfg.arch, seed)?, noisy, noise, cfg, seed)
    }

    pub fn with_bundle(bundle: WganBundle, noisy: &'a [Image], noise: &'a [Image], cfg: &WganConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.arch.channels;
        if let Some(bad) = noisy.iter().chain(noise).find(|i| i.channels() != c) {
            return Err(Error::Input(format!("expected {c}-channel patches, got {}", bad.channels())));
        }
        let adam = || Adam::new(cfg.gen_lr);
        let rms = || RmsProp::new(cfg.critic_lr);
        Ok(Self {
            bundle,
            gen_opt: [adam()?, adam()?, adam()?],
            critic_opt: [rms()?, rms()?],
            noise: PatchStream::new(noise, cfg.arch.patch, "noise patches")?,
            noisy: PatchStream::new(noisy, cfg.arch.patch, "noisy images")?,
            data_rng: Rng::new(seed, DATA_STREAM),
            latent_rng: Rng::new(seed, LATENT_STREAM),
            cfg: cfg.clone(),
            critic_updates: 0,
            generator_updates: 0,
            last_critic: StepLosses::default(),
        })
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let b = self.cfg.batch;
        Ok(Batch {
            noise: self.noise.batch(b, &mut self.data_rng)?,
            noisy: self.noisy.batch(b, &mut self.data_rng)?,
            latent: self.bundle.latents(2 * b, &mut self.latent_rng),
        })
    }

    pub fn critic_step(&mut self) -> Result<StepLosses> {
        let batch = self.next_batch()?;
        let losses = self.bundle.critic_gradients(&batch, self.cfg.critic_weights)?;
        losses.check(self.generator_updates)?;
        self.critic_opt[0].step(self.bundle.c1.params_mut())?;
        self.critic_opt[1].step(self.bundle.c2.params_mut())?;
        self.bundle.c1.params_mut().clip(self.cfg.clip)?;
        self.bundle.c2.params_mut().clip(self.cfg.clip)?;
        self.critic_updates += 1;
        self.last_critic = losses;
        Ok(losses)
    }

    pub fn generator_step(&mut self) -> Result<StepLosses> {
        let batch = self.next_batch()?;
        let losses = self.bundle.generator_gradients(&batch, self.cfg.gen_weights)?;
        losses.check(self.generator_updates)?;
        let b = &mut self.bundle;
        for (opt, net) in self.gen_opt.iter_mut().zip([&mut b.g1, &mut b.g2, &mut b.g3]) {
            opt.step(net.params_mut())?;
        }
        self.generator_updates += 1;
        Ok(losses)
    }

    /// `critic_iters` critic steps then one generator step. `on_critic` is
    /// called after every critic update.
    pub fn round(&mut self, mut on_critic: impl FnMut(&WganBundle)) -> Result<TraceRow> {
        for _ in 0..self.cfg.critic_iters {
            self.critic_step()?;
            on_critic(&self.bundle);
        }
        let generator = self.generator_step()?;
        Ok(TraceRow {
            step: self.generator_updates,
            critic: self.last_critic,
            generator,
        })
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        let lr = self.cfg.gen_schedule.lr_at(self.cfg.gen_lr, epoch);
        self.gen_opt.iter_mut().for_each(|o| o.set_lr(lr));
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.cfg
            .steps_per_epoch
            .unwrap_or_else(|| self.noisy.sources.len().div_ceil(self.cfg.batch))
    }

    pub fn critic_updates(&self) -> usize {
        self.critic_updates
    }

    pub fn generator_updates(&self) -> usize {
        self.generator_updates
    }
}

/// Result of [`train_wgan`].
#[derive(Clone, Debug)]
pub struct WganRun {
    pub bundle: WganBundle,
    pub trace: Vec<TraceRow>,
    /// Largest critic parameter magnitude after each critic update.
    pub critic_max_abs: Vec<f64>,
}

pub fn train_wgan(noisy: &[Image], noise: &[Image], cfg: &WganConfig, seed: u64) -> Result<WganRun> {
    let mut t = WganTrainer::new(noisy, noise, cfg, seed)?;
    let mut trace = Vec::new();
    let mut critic_max_abs = Vec::new();
    let steps = t.steps_per_epoch();
    for epoch in 0..cfg.epochs {
        t.set_epoch(epoch);
        for _ in 0..steps {
            let row = t.round(|b| critic_max_abs.push(b.critic_max_abs()))?;
            if row.step % 20 == 0 {
                log::debug!(
                    "wgan step {}: L_n {:.4} L_Z {:.4} L_cyc {:.4}",
                    row.step,
                    row.generator.noise,
                    row.generator.image,
                    row.generator.cycle
                );
            }
            trace.push(row);
        }
        log::info!("wgan epoch {}/{} done", epoch + 1, cfg.epochs);
    }
    Ok(WganRun {
        bundle: t.bundle,
        trace,
        critic_max_abs,
    })
}

/// A clean-image estimator used as the base of generated pairs.
pub trait Denoise {
    /// Names the estimator, for tracing which one built a pair.
    fn tag(&self) -> &str;
    fn denoise_batch(&mut self, noisy: &Tensor) -> Result<Tensor>;
}

/// `g2` as a [`Denoise`] implementation (evaluation mode).
pub struct ImageGenerator<'a>(pub &'a mut Network);

impl Denoise for ImageGenerator<'_> {
    fn tag(&self) -> &str {
        "g2"
    }

    fn denoise_batch(&mut self, noisy: &Tensor) -> Result<Tensor> {
        self.0.forward(noisy, Mode::Eval)
    }
}

/// A batch of synthetic pairs `(base + g1(r1), base + g1(r2))`.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub base: Tensor,
    pub first: Tensor,
    pub second: Tensor,
    pub base_tag: String,
}

pub fn generate_pairs(noisy: &Tensor, base_fn: &mut dyn Denoise, noise: &mut NoiseSampler, rng: &mut Rng) -> Result<PairBatch> {
    let (n, _, h, w) = noisy.dims4()?;
    let base = base_fn.denoise_batch(noisy)?;
    let first = base.add(&noise.sample(n, h, w, rng)?)?;
    let second = base.add(&noise.sample(n, h, w, rng)?)?;
    Ok(PairBatch {
        base,
        first,
        second,
        base_tag: base_fn.tag().to_owned(),
    })
}

/// Pair for a single image, seeded.
pub fn generate_pair(z: &Image, base_fn: &mut dyn Denoise, noise: &mut NoiseSampler, seed: u64) -> Result<(Image, Image)> {
    let mut rng = Rng::new(seed, LATENT_STREAM);
    let p = generate_pairs(&z.to_tensor(), base_fn, noise, &mut rng)?;
    let first = Image::batch_from_tensor(&p.first)?.remove(0);
    let second = Image::batch_from_tensor(&p.second)?.remove(0);
    Ok((first, second))
}
