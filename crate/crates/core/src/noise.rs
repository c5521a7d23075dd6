//! Synthetic noise processes. Magnitudes are given on the 0–255 scale and
//! divided by 255 when sampling.
//!
//! Spec grammar (used by the CLI and manifests):
//!
//! ```text
//! gauss:<sigma>
//! mixA:<s>
//! mixB:<s>
//! corr:<sigma>[:k=<k>][:eta=<eta>]     defaults k=16, eta=1/√2
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const SCALE: f64 = 255.0;
pub const DEFAULT_K: usize = 16;
pub const DEFAULT_ETA: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// RNG stream reserved for noise sampling.
const NOISE_STREAM: u64 = 0x6e6f697365;

/// Mixture weights: two Gaussians then the uniform component.
const MIX_WEIGHTS: [f64; 3] = [0.7, 0.2, 0.1];
/// Gaussian standard deviations (0–255 scale) of the two mixture cases.
const MIX_A_SIGMAS: [f64; 2] = [0.1, 1.0];
const MIX_B_SIGMAS: [f64; 2] = [15.0, 25.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian { sigma_255: f64 },
    /// 70% N(0, 0.1²), 20% N(0, 1), 10% U[−s, s].
    MixtureA { s_255: f64 },
    /// 70% N(0, 15²), 20% N(0, 25²), 10% U[−s, s].
    MixtureB { s_255: f64 },
    /// `N = η·M + √(1−η²)·(Σ_{NB} M)/√|NB|` with `M` white Gaussian and `NB`
    /// the `k×k` window at offsets `[−k/2, k/2−1]`, minus the centre pixel,
    /// cropped at the border.
    Correlated { sigma_255: f64, k: usize, eta: f64 },
}

impl NoiseKind {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            NoiseKind::Gaussian { sigma_255 } if !(sigma_255 > 0.0 && sigma_255.is_finite()) => {
                bad(format!("sigma must be > 0, got {sigma_255}"))
            }
            NoiseKind::MixtureA { s_255 } | NoiseKind::MixtureB { s_255 } if !(s_255 > 0.0 && s_255.is_finite()) => {
                bad(format!("s must be > 0, got {s_255}"))
            }
            NoiseKind::Correlated { sigma_255, k, eta } => {
                if !(sigma_255 > 0.0 && sigma_255.is_finite()) {
                    bad(format!("sigma must be > 0, got {sigma_255}"))
                } else if k < 2 || k % 2 != 0 {
                    bad(format!("k must be even and ≥ 2, got {k}"))
                } else if !(0.0..=1.0).contains(&eta) {
                    bad(format!("eta must lie in [0, 1], got {eta}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Default wavelet-rule threshold for this noise family.
    pub fn default_lambda(&self) -> f64 {
        match self {
            NoiseKind::Gaussian { .. } => 0.03,
            NoiseKind::MixtureA { .. } | NoiseKind::MixtureB { .. } => 0.1,
            NoiseKind::Correlated { .. } => 0.15,
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NoiseKind::Gaussian { sigma_255 } => write!(f, "gauss:{sigma_255}"),
            NoiseKind::MixtureA { s_255 } => write!(f, "mixA:{s_255}"),
            NoiseKind::MixtureB { s_255 } => write!(f, "mixB:{s_255}"),
            NoiseKind::Correlated { sigma_255, k, eta } => write!(f, "corr:{sigma_255}:k={k}:eta={eta}"),
        }
    }
}

pub const GRAMMAR: &str = "gauss:<sigma> | mixA:<s> | mixB:<s> | corr:<sigma>[:k=<k>][:eta=<eta>]";

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let usage = |why: &str| Error::Usage(format!("bad noise spec {s:?}: {why}; expected {GRAMMAR}"));
        let mut parts = s.split(':');
        let family = parts.next().unwrap_or_default();
        let level: f64 = parts
            .next()
            .ok_or_else(|| usage("missing magnitude"))?
            .parse()
            .map_err(|_| usage("magnitude is not a number"))?;
        let rest: Vec<&str> = parts.collect();
        let kind = match family {
            "gauss" | "mixA" | "mixB" if !rest.is_empty() => return Err(usage("unexpected options")),
            "gauss" => NoiseKind::Gaussian { sigma_255: level },
            "mixA" => NoiseKind::MixtureA { s_255: level },
            "mixB" => NoiseKind::MixtureB { s_255: level },
            "corr" => {
                let (mut k, mut eta) = (DEFAULT_K, DEFAULT_ETA);
                for opt in rest {
                    match opt.split_once('=') {
                        Some(("k", v)) => k = v.parse().map_err(|_| usage("k is not an integer"))?,
                        Some(("eta", v)) => eta = v.parse().map_err(|_| usage("eta is not a number"))?,
                        _ => return Err(usage(&format!("unknown option {opt:?}"))),
                    }
                }
                NoiseKind::Correlated { sigma_255: level, k, eta }
            }
            _ => return Err(usage("unknown family")),
        };
        kind.validate().map_err(|e| usage(&e.to_string()))?;
        Ok(kind)
    }
}

/// A noise family together with the seed that fixes its realization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, seed: u64) -> Result<Self> {
        kind.validate()?;
        Ok(Self { kind, seed })
    }

    /// Noise field of the given shape. The last two dimensions are `H×W`;
    /// leading dimensions index independent planes.
    pub fn sample(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.len() < 2 {
            return Err(Error::Input(format!("noise shape needs rank ≥ 2, got {shape:?}")));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes: usize = shape[..shape.len() - 2].iter().product();
        let mut rng = Rng::new(self.seed, NOISE_STREAM);
        let mut data = Vec::with_capacity(planes * h * w);
        for _ in 0..planes {
            self.sample_plane(&mut rng, h, w, &mut data);
        }
        Tensor::new(shape.to_vec(), data)
    }

    fn sample_plane(&self, rng: &mut Rng, h: usize, w: usize, out: &mut Vec<f64>) {
        match self.kind {
            NoiseKind::Gaussian { sigma_255 } => {
                let s = sigma_255 / SCALE;
                out.extend((0..h * w).map(|_| s * rng.normal()));
            }
            NoiseKind::MixtureA { .. } | NoiseKind::MixtureB { .. } => {
                out.extend((0..h * w).map(|_| self.mixture_draw(rng).1 / SCALE));
            }
            NoiseKind::Correlated { sigma_255, k, eta } => {
                let s = sigma_255 / SCALE;
                let m: Vec<f64> = (0..h * w).map(|_| s * rng.normal()).collect();
                out.extend(correlate(&m, h, w, k, eta));
            }
        }
    }

    /// One mixture draw on the 0–255 scale and the index of its component.
    fn mixture_draw(&self, rng: &mut Rng) -> (usize, f64) {
        let (sigmas, s) = match self.kind {
            NoiseKind::MixtureA { s_255 } => (MIX_A_SIGMAS, s_255),
            NoiseKind::MixtureB { s_255 } => (MIX_B_SIGMAS, s_255),
            _ => unreachable!("mixture_draw on a non-mixture model"),
        };
        let u = rng.uniform();
        if u < MIX_WEIGHTS[0] {
            (0, sigmas[0] * rng.normal())
        } else if u < MIX_WEIGHTS[0] + MIX_WEIGHTS[1] {
            (1, sigmas[1] * rng.normal())
        } else {
            (2, rng.uniform_range(-s, s))
        }
    }

    /// `clean + noise`, unclipped. Only the shape of `clean` is used.
    pub fn corrupt(&self, clean: &Image) -> Result<Image> {
        let noise = self.sample(&[clean.channels(), clean.height(), clean.width()])?;
        Image::new(clean.channels(), clean.height(), clean.width(), noise.into_data())?.add(clean)
    }
}

/// Mixes a white field `m` with its normalized neighbourhood sums.
fn correlate(m: &[f64], h: usize, w: usize, k: usize, eta: f64) -> Vec<f64> {
    // Integral image with a zero border row/column.
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += m[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let half = k / 2;
    let rest = (1.0 - eta * eta).max(0.0).sqrt();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(half), (y + half).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(half), (x + half).min(w));
            let area = (y1 - y0) * (x1 - x0);
            let window = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
                + sat[y0 * (w + 1) + x0];
            let centre = m[y * w + x];
            let count = area - 1;
            let neigh = if count == 0 {
                0.0
            } else {
                (window - centre) / (count as f64).sqrt()
            };
            out.push(eta * centre + rest * neigh);
        }
    }
    out
}
