//! Architecture builders for the five W-GAN networks and the denoiser.
//!
//! Noise generator shape trace for a 64×64 output (latent reshaped to
//! `r×1×1`):
//!
//! | layer | op                | out  |
//! |-------|-------------------|------|
//! | 1     | DeConv k4 s1 p0   | 4×4  |
//! | 2     | DeConv k4 s2 p1   | 8×8  |
//! | 3     | DeConv k4 s2 p1   | 16×16|
//! | 4     | DeConv k4 s2 p1   | 32×32|
//! | 5     | DeConv k4 s2 p1 + Tanh | 64×64 |
//!
//! For 16×16 output the last two layers are DeConv k4 s1 p1 (17×17) and
//! Conv k4 s1 p1 + Tanh (16×16).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvSpec, LayerSpec, NetworkSpec};

const LEAKY_ALPHA: f64 = 0.2;

/// Sizes of every network in the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Image channels `C`.
    pub channels: usize,
    pub latent_dim: usize,
    /// Side of the square W-GAN training patch (16 or 64).
    pub patch: usize,
    pub noise_gen_widths: [usize; 4],
    pub critic_widths: [usize; 3],
    /// Depth/width of the DnCNN-style image generators `g2`, `g3`.
    pub image_gen_depth: usize,
    pub image_gen_width: usize,
}

impl ArchConfig {
    pub fn paper(channels: usize) -> Self {
        Self {
            channels,
            latent_dim: 128,
            patch: 64,
            noise_gen_widths: [64, 32, 16, 8],
            critic_widths: [128, 256, 512],
            image_gen_depth: 15,
            image_gen_width: 64,
        }
    }

    pub fn desk(channels: usize) -> Self {
        Self {
            channels,
            latent_dim: 128,
            patch: 16,
            noise_gen_widths: [16, 8, 4, 2],
            critic_widths: [32, 64, 128],
            image_gen_depth: 5,
            image_gen_width: 16,
        }
    }

    pub fn noise_generator(&self) -> Result<NetworkSpec> {
        noise_generator(self.latent_dim, self.noise_gen_widths, self.channels, self.patch)
    }

    pub fn critic(&self) -> Result<NetworkSpec> {
        critic(self.channels, self.critic_widths, self.patch)
    }

    /// DnCNN-style body with a sigmoid output (`g2`, `g3`).
    pub fn image_generator(&self) -> NetworkSpec {
        let mut layers = dncnn_body(self.channels, self.image_gen_width, self.image_gen_depth);
        layers.push(LayerSpec::Sigmoid);
        NetworkSpec::chain(layers)
    }
}

/// DeConv-BatchNorm-ReLU stack from a `latent×1×1` input to a `patch×patch`
/// tanh output. `patch` must be 16 or 64.
pub fn noise_generator(latent: usize, widths: [usize; 4], channels: usize, patch: usize) -> Result<NetworkSpec> {
    let block = |layers: &mut Vec<LayerSpec>, spec: ConvSpec| {
        layers.push(LayerSpec::DeConv(spec.without_bias()));
        layers.push(LayerSpec::BatchNorm { channels: spec.out_channels });
        layers.push(LayerSpec::ReLU);
    };
    let mut layers = Vec::new();
    block(&mut layers, ConvSpec::new(latent, widths[0], 4, 1, 0));
    block(&mut layers, ConvSpec::new(widths[0], widths[1], 4, 2, 1));
    block(&mut layers, ConvSpec::new(widths[1], widths[2], 4, 2, 1));
    match patch {
        64 => {
            block(&mut layers, ConvSpec::new(widths[2], widths[3], 4, 2, 1));
            layers.push(LayerSpec::DeConv(ConvSpec::new(widths[3], channels, 4, 2, 1)));
        }
        16 => {
            block(&mut layers, ConvSpec::new(widths[2], widths[3], 4, 1, 1));
            layers.push(LayerSpec::Conv(ConvSpec::new(widths[3], channels, 4, 1, 1)));
        }
        other => {
            return Err(Error::Config(format!(
                "noise generator supports 16 or 64 pixel patches, got {other}"
            )))
        }
    }
    layers.push(LayerSpec::Tanh);
    Ok(NetworkSpec::chain(layers))
}

/// Three stride-2 Conv-BatchNorm-LeakyReLU(0.2) blocks and a 4×4 scoring
/// conv. Padding of the scoring conv is 0 when the feature map is at least
/// 4×4, otherwise just enough to produce a 1×1 map.
pub fn critic(channels: usize, widths: [usize; 3], patch: usize) -> Result<NetworkSpec> {
    if patch < 8 || !patch.is_multiple_of(8) {
        return Err(Error::Config(format!("critic patch must be a multiple of 8, got {patch}")));
    }
    let mut layers = Vec::new();
    let mut cin = channels;
    for &w in &widths {
        layers.push(LayerSpec::Conv(ConvSpec::new(cin, w, 4, 2, 1).without_bias()));
        layers.push(LayerSpec::BatchNorm { channels: w });
        layers.push(LayerSpec::LeakyReLU { alpha: LEAKY_ALPHA });
        cin = w;
    }
    let side = patch / 8;
    let pad = if side >= 4 { 0 } else { (4 - side).div_ceil(2) };
    layers.push(LayerSpec::Conv(ConvSpec::new(cin, 1, 4, 1, pad)));
    Ok(NetworkSpec::chain(layers))
}

fn dncnn_body(channels: usize, width: usize, depth: usize) -> Vec<LayerSpec> {
    let depth = depth.max(2);
    let mut layers = vec![
        LayerSpec::Conv(ConvSpec::new(channels, width, 3, 1, 1)),
        LayerSpec::ReLU,
    ];
    for _ in 0..depth - 2 {
        layers.push(LayerSpec::Conv(ConvSpec::new(width, width, 3, 1, 1).without_bias()));
        layers.push(LayerSpec::BatchNorm { channels: width });
        layers.push(LayerSpec::ReLU);
    }
    layers.push(LayerSpec::Conv(ConvSpec::new(width, channels, 3, 1, 1)));
    layers
}

/// Residual DnCNN: the chain predicts the noise, output = input − chain.
pub fn dncnn(channels: usize, width: usize, depth: usize) -> NetworkSpec {
    NetworkSpec::residual(dncnn_body(channels, width, depth))
}
