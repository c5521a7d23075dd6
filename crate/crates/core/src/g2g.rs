//! Denoiser training on generated pairs.
//!
//! Every minibatch draws fresh noisy crops `Z`, computes a base estimate
//! `b = base(Z)` and two noise fields from `g1`, and fits the denoiser to
//! map `b + g1(r2)` onto `b + g1(r1)`. The observed `Z` never reaches the
//! loss. Refinement rounds swap `g2` for a frozen copy of the latest
//! denoiser as the base and fine-tune from its weights.

use serde::{Deserialize, Serialize};

use crate::arch::dncnn;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Adam, LrSchedule, Mode, Network, Optimizer};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::wgan::{generate_pairs, Denoise, NoiseSampler, PairBatch, PatchStream, WganBundle};

const INIT_STREAM: u64 = 0x646e6e;
const CROP_STREAM: u64 = 0x63726f70;
const PAIR_STREAM: u64 = 0x7061697273;

pub const CHECKPOINT_PREFIX: &str = "denoiser/";

/// Residual DnCNN: the network predicts the noise and the output is the
/// input minus that prediction.
#[derive(Clone, Debug)]
pub struct DenoiserModel {
    net: Network,
    channels: usize,
    width: usize,
    depth: usize,
    /// Free-text note on the noise the model was trained for.
    pub trained_noise_tag: String,
}

impl DenoiserModel {
    pub fn new(channels: usize, width: usize, depth: usize, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed, INIT_STREAM);
        Self::from_net(Network::new(dncnn(channels, width, depth), &mut rng)?, channels, width, depth)
    }

    /// All parameters zero, so the model is the identity.
    pub fn zeroed(channels: usize, width: usize, depth: usize) -> Result<Self> {
        Self::from_net(Network::zeroed(dncnn(channels, width, depth))?, channels, width, depth)
    }

    fn from_net(net: Network, channels: usize, width: usize, depth: usize) -> Result<Self> {
        if depth < 2 || width == 0 || channels == 0 {
            return Err(Error::Config(format!(
                "denoiser needs depth ≥ 2 and nonzero widths, got depth {depth}, width {width}, channels {channels}"
            )));
        }
        Ok(Self {
            net,
            channels,
            width,
            depth,
            trained_noise_tag: String::new(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn fingerprint(&self) -> String {
        self.net.params().fingerprint()
    }

    /// Unclipped estimate; callers clip when writing to disk.
    pub fn denoise(&mut self, image: &Image) -> Result<Image> {
        if image.channels() != self.channels {
            return Err(Error::Input(format!(
                "denoiser expects {} channels, got {}",
                self.channels,
                image.channels()
            )));
        }
        let out = self.net.forward(&image.to_tensor(), Mode::Eval)?;
        Ok(Image::batch_from_tensor(&out)?.remove(0))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        let arch = [self.channels, self.width, self.depth].map(|v| v as f64);
        c.push(format!("{CHECKPOINT_PREFIX}arch"), Tensor::new(vec![3], arch.to_vec()).expect("3 values"));
        let tag: Vec<f64> = self.trained_noise_tag.bytes().map(f64::from).collect();
        c.push(format!("{CHECKPOINT_PREFIX}tag"), Tensor::new(vec![tag.len()], tag).expect("1-d"));
        c.extend(self.net.params().named_tensors(CHECKPOINT_PREFIX));
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let arch = ckpt.require(&format!("{CHECKPOINT_PREFIX}arch"))?.data();
        let [channels, width, depth] = match arch {
            &[c, w, d] if [c, w, d].iter().all(|v| v.fract() == 0.0 && *v >= 0.0) => [c as usize, w as usize, d as usize],
            _ => return Err(Error::Checkpoint("denoiser/arch must hold three non-negative integers".into())),
        };
        let mut m = Self::zeroed(channels, width, depth)?;
        m.net.params_mut().load_named(CHECKPOINT_PREFIX, |n| ckpt.get(n))?;
        let bytes = ckpt
            .get(&format!("{CHECKPOINT_PREFIX}tag"))
            .map(|t| t.data().iter().map(|&b| b as u8).collect::<Vec<_>>())
            .unwrap_or_default();
        m.trained_noise_tag = String::from_utf8(bytes).map_err(|_| Error::Checkpoint("denoiser/tag is not UTF-8".into()))?;
        Ok(m)
    }
}

impl Denoise for DenoiserModel {
    fn tag(&self) -> &str {
        "denoiser"
    }

    fn denoise_batch(&mut self, noisy: &Tensor) -> Result<Tensor> {
        self.net.forward(noisy, Mode::Eval)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G2GConfig {
    pub epochs: usize,
    /// Minibatches per epoch; `None` means one pass over the noisy images.
    pub steps_per_epoch: Option<usize>,
    pub batch: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub patch_size: usize,
    /// Refinement rounds after the initial fit.
    pub iterations: usize,
    /// Epochs per refinement round; `None` reuses `epochs`.
    pub refine_epochs: Option<usize>,
    /// Draw new pairs for every minibatch. When false, the first epoch's
    /// pairs are replayed in every later epoch.
    pub fresh_pairs: bool,
    pub depth: usize,
    pub width: usize,
}

impl G2GConfig {
    pub fn paper() -> Self {
        Self {
            epochs: 100,
            steps_per_epoch: None,
            batch: 4,
            lr: 0.001,
            schedule: LrSchedule::HalveEvery { every: 20 },
            patch_size: 120,
            iterations: 1,
            refine_epochs: None,
            fresh_pairs: true,
            depth: 17,
            width: 64,
        }
    }

    pub fn desk() -> Self {
        Self {
            epochs: 30,
            steps_per_epoch: Some(50),
            patch_size: 32,
            schedule: LrSchedule::HalveEvery { every: 10 },
            refine_epochs: Some(4),
            depth: 7,
            width: 16,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.patch_size == 0 {
            return Err(Error::Config("epochs, batch and patch_size must be ≥ 1".into()));
        }
        if self.steps_per_epoch == Some(0) || self.refine_epochs == Some(0) {
            return Err(Error::Config("steps_per_epoch and refine_epochs must be ≥ 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and ≥ 0, got {}", self.lr)));
        }
        if self.depth < 2 || self.width == 0 {
            return Err(Error::Config("denoiser depth must be ≥ 2 and width ≥ 1".into()));
        }
        Ok(())
    }

    pub fn fresh_model(&self, channels: usize, seed: u64) -> Result<DenoiserModel> {
        DenoiserModel::new(channels, self.width, self.depth, seed)
    }
}

/// `mean((first − X̂(second))²)`.
pub fn n2n_loss(model: &mut DenoiserModel, pairs: &PairBatch, mode: Mode) -> Result<f64> {
    let pred = model.net.forward(&pairs.second, mode)?;
    Ok(mse(&pairs.first, &pred))
}

/// Accumulate the gradient of [`n2n_loss`] (train mode) and return the
/// loss. `first` is a constant target; no gradient reaches whatever
/// produced it.
pub fn n2n_gradients(model: &mut DenoiserModel, pairs: &PairBatch) -> Result<f64> {
    let pred = model.net.forward(&pairs.second, Mode::Train)?;
    let k = 2.0 / pred.len() as f64;
    let upstream = pred.zip_map(&pairs.first, |p, t| k * (p - t))?;
    model.net.backward(&upstream)?;
    Ok(mse(&pairs.first, &pred))
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// One row of the denoiser training trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct G2GTraceRow {
    /// Refinement round; 0 is the initial fit.
    pub round: usize,
    pub epoch: usize,
    pub step: usize,
    pub n2n_loss: f64,
    pub lr: f64,
}

pub const TRACE_HEADER: &str = "round,epoch,step,n2n_loss,lr";

pub fn write_trace(rows: &[G2GTraceRow], mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.round, r.epoch, r.step, r.n2n_loss, r.lr)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct G2GRun {
    pub model: DenoiserModel,
    pub trace: Vec<G2GTraceRow>,
    /// Which estimator built the pair bases in each round.
    pub base_tags: Vec<String>,
}

/// Fit `model` for `epochs` epochs on pairs built from `base`. `on_pairs`
/// sees every pair batch with its epoch index.
#[allow(clippy::too_many_arguments)]
pub fn fit_on_pairs(
    noisy: &[Image],
    base: &mut dyn Denoise,
    noise: &mut NoiseSampler,
    model: &mut DenoiserModel,
    cfg: &G2GConfig,
    epochs: usize,
    round: usize,
    seed: u64,
    on_pairs: &mut dyn FnMut(usize, &PairBatch),
) -> Result<Vec<G2GTraceRow>> {
    cfg.validate()?;
    if let Some(bad) = noisy.iter().find(|i| i.channels() != model.channels) {
        return Err(Error::Input(format!(
            "denoiser has {} channels, image has {}",
            model.channels,
            bad.channels()
        )));
    }
    let mut crops = PatchStream::new(noisy, cfg.patch_size, "noisy images")?;
    let mut crop_rng = Rng::new(seed, CROP_STREAM + round as u64);
    let mut pair_rng = Rng::new(seed, PAIR_STREAM + round as u64);
    let mut opt = Adam::new(cfg.lr)?;
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| noisy.len().div_ceil(cfg.batch));
    let mut replay: Vec<PairBatch> = Vec::new();
    let mut trace = Vec::with_capacity(epochs * steps);
    for epoch in 0..epochs {
        let lr = cfg.schedule.lr_at(cfg.lr, epoch);
        opt.set_lr(lr);
        for s in 0..steps {
            let pairs = if cfg.fresh_pairs || epoch == 0 {
                let z = crops.batch(cfg.batch, &mut crop_rng)?;
                generate_pairs(&z, base, noise, &mut pair_rng)?
            } else {
                replay[s].clone()
            };
            on_pairs(epoch, &pairs);
            let loss = n2n_gradients(model, &pairs)?;
            let step = epoch * steps + s + 1;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    term: "L_N2N".into(),
                });
            }
            opt.step(model.net.params_mut())?;
            trace.push(G2GTraceRow {
                round,
                epoch,
                step,
                n2n_loss: loss,
                lr,
            });
            if !cfg.fresh_pairs && epoch == 0 {
                replay.push(pairs);
            }
        }
        log::info!(
            "g2g round {round} epoch {}/{epochs}: mean loss {:.6}",
            epoch + 1,
            trace[trace.len() - steps..].iter().map(|r| r.n2n_loss).sum::<f64>() / steps as f64
        );
    }
    Ok(trace)
}

/// Initial fit with `g2(Z)` as the pair base, starting from `init` or a
/// fresh model.
pub fn train_g2g(
    noisy: &[Image],
    bundle: &mut WganBundle,
    init: Option<DenoiserModel>,
    cfg: &G2GConfig,
    seed: u64,
) -> Result<G2GRun> {
    let mut model = match init {
        Some(m) => m,
        None => cfg.fresh_model(bundle.arch.channels, seed)?,
    };
    let (mut g2, mut noise) = bundle.split();
    let trace = fit_on_pairs(noisy, &mut g2, &mut noise, &mut model, cfg, cfg.epochs, 0, seed, &mut |_, _| {})?;
    Ok(G2GRun {
        model,
        trace,
        base_tags: vec!["g2".into()],
    })
}

/// `cfg.iterations` refinement rounds. Each round freezes a copy of the
/// current model as the pair base and fine-tunes the model itself from its
/// current weights. The bundle is not trained further.
pub fn iterate_g2g(
    noisy: &[Image],
    bundle: &mut WganBundle,
    model: DenoiserModel,
    cfg: &G2GConfig,
    seed: u64,
) -> Result<G2GRun> {
    let mut model = model;
    let mut trace = Vec::new();
    let mut base_tags = Vec::new();
    let epochs = cfg.refine_epochs.unwrap_or(cfg.epochs);
    for round in 1..=cfg.iterations {
        let mut base = model.clone();
        let mut noise = bundle.noise_sampler();
        trace.extend(fit_on_pairs(noisy, &mut base, &mut noise, &mut model, cfg, epochs, round, seed, &mut |_, _| {})?);
        base_tags.push(base.tag().to_owned());
    }
    Ok(G2GRun { model, trace, base_tags })
}
