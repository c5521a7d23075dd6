//! Sliding-window search for smooth patches whose mean-removed pixels are
//! treated as pure noise samples.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::{Image, ImagePatch};
use crate::wavelet::{is_smooth_dwt, is_smooth_gcbd};

pub const PATCH_PREFIX: &str = "noise_patch/";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SmoothnessRule {
    Dwt { lambda: f64 },
    Gcbd { mu: f64, gamma: f64, subpatch: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    pub patch_size: usize,
    /// Window step; `None` means half the patch size.
    pub stride: Option<usize>,
    pub rule: SmoothnessRule,
    pub max_patches: Option<usize>,
}

impl ExtractionConfig {
    pub fn dwt(patch_size: usize, lambda: f64) -> Self {
        Self {
            patch_size,
            stride: None,
            rule: SmoothnessRule::Dwt { lambda },
            max_patches: None,
        }
    }

    /// Sub-patch rule with μ = γ = 0.1 and 32-pixel tiles.
    pub fn gcbd(patch_size: usize) -> Self {
        Self {
            patch_size,
            stride: None,
            rule: SmoothnessRule::Gcbd {
                mu: 0.1,
                gamma: 0.1,
                subpatch: 32,
            },
            max_patches: None,
        }
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or((self.patch_size / 2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        if self.patch_size < 2 || !self.patch_size.is_multiple_of(2) {
            return Err(Error::Config(format!("patch size must be even and ≥ 2, got {}", self.patch_size)));
        }
        if self.stride == Some(0) {
            return Err(Error::Config("stride must be ≥ 1".into()));
        }
        match self.rule {
            SmoothnessRule::Dwt { lambda } => unit("lambda", lambda),
            SmoothnessRule::Gcbd { mu, gamma, subpatch } => {
                unit("mu", mu)?;
                unit("gamma", gamma)?;
                if subpatch == 0 || subpatch >= self.patch_size || !self.patch_size.is_multiple_of(subpatch) {
                    return Err(Error::Config(format!(
                        "sub-patch size {subpatch} must be smaller than and divide {}",
                        self.patch_size
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn accepts(&self, p: &Image) -> Result<bool> {
        match self.rule {
            SmoothnessRule::Dwt { lambda } => Ok(is_smooth_dwt(p, lambda)?.0),
            SmoothnessRule::Gcbd { mu, gamma, subpatch } => is_smooth_gcbd(p, mu, gamma, subpatch),
        }
    }
}

/// A mean-removed smooth patch and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePatch {
    pub values: Image,
    pub source_id: String,
    pub offset: (usize, usize),
}

impl NoisePatch {
    /// Subtracts the per-channel mean.
    pub fn from_patch(p: &ImagePatch) -> Self {
        let mut values = p.pixels.clone();
        for c in 0..values.channels() {
            let plane = values.plane_mut(c);
            let mean = plane.iter().sum::<f64>() / plane.len() as f64;
            plane.iter_mut().for_each(|v| *v -= mean);
        }
        Self {
            values,
            source_id: p.source_id.clone(),
            offset: p.offset,
        }
    }
}

/// Row-major windows of every image in order; keeps those the rule accepts.
pub fn extract_noise_patches(images: &[ImagePatch], cfg: &ExtractionConfig) -> Result<Vec<NoisePatch>> {
    cfg.validate()?;
    let (size, stride) = (cfg.patch_size, cfg.stride());
    let limit = cfg.max_patches.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    'images: for img in images {
        let src = &img.pixels;
        if src.height() < size || src.width() < size {
            continue;
        }
        for top in (0..=src.height() - size).step_by(stride) {
            for left in (0..=src.width() - size).step_by(stride) {
                if out.len() >= limit {
                    break 'images;
                }
                let window = src.crop(top, left, size, size)?;
                if cfg.accepts(&window)? {
                    let offset = (img.offset.0 + top, img.offset.1 + left);
                    out.push(NoisePatch::from_patch(&ImagePatch::new(window, img.source_id.clone(), offset)));
                }
            }
        }
    }
    if out.is_empty() {
        log::warn!("no smooth patches found in {} images with {:?}", images.len(), cfg.rule);
    }
    Ok(out)
}

/// Stores patches as `noise_patch/<index>` tensors of shape `(C, H, W)`.
pub fn patches_to_checkpoint(patches: &[NoisePatch]) -> Checkpoint {
    let mut ckpt = Checkpoint::new();
    for (i, p) in patches.iter().enumerate() {
        let t = p.values.to_tensor();
        let (_, c, h, w) = t.dims4().expect("image tensors are 4-D");
        ckpt.push(format!("{PATCH_PREFIX}{i}"), t.reshape(&[c, h, w]).expect("same length"));
    }
    ckpt
}

pub fn patches_from_checkpoint(ckpt: &Checkpoint) -> Result<Vec<Image>> {
    let mut out = Vec::new();
    while let Some(t) = ckpt.get(&format!("{PATCH_PREFIX}{}", out.len())) {
        match *t.shape() {
            [c, h, w] => out.push(Image::new(c, h, w, t.data().to_vec())?),
            _ => return Err(Error::Checkpoint(format!("noise patch {} is not (C, H, W)", out.len()))),
        }
    }
    Ok(out)
}
