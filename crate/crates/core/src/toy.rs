//! Analytic clean images: linear gradients, disks, sinusoid mixtures and
//! piecewise-constant mosaics. Intensities stay inside `[0.1, 0.9]` so that
//! additive noise rarely leaves the unit range.

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::rng::Rng;

const TOY_STREAM: u64 = 0x746f79;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    Gradient,
    Disks,
    Sinusoids,
    Mosaic,
}

pub const ALL_KINDS: [ToyKind; 4] = [ToyKind::Gradient, ToyKind::Disks, ToyKind::Sinusoids, ToyKind::Mosaic];

impl ToyKind {
    pub fn name(&self) -> &'static str {
        match self {
            ToyKind::Gradient => "gradient",
            ToyKind::Disks => "disks",
            ToyKind::Sinusoids => "sinusoids",
            ToyKind::Mosaic => "mosaic",
        }
    }
}

pub fn toy_image(kind: ToyKind, height: usize, width: usize, rng: &mut Rng) -> Image {
    let (h, w) = (height as f64, width as f64);
    match kind {
        ToyKind::Gradient => {
            let base = rng.uniform_range(0.25, 0.75);
            let gx = rng.uniform_range(-0.3, 0.3);
            let gy = rng.uniform_range(-0.3, 0.3);
            Image::from_fn_gray(height, width, |y, x| {
                base + gx * (x as f64 / w - 0.5) + gy * (y as f64 / h - 0.5)
            })
        }
        ToyKind::Disks => {
            let bg = rng.uniform_range(0.2, 0.8);
            let disks: Vec<(f64, f64, f64, f64)> = (0..1 + rng.below(4))
                .map(|_| {
                    (
                        rng.uniform_range(0.0, h),
                        rng.uniform_range(0.0, w),
                        rng.uniform_range(0.1, 0.3) * h.min(w),
                        rng.uniform_range(0.1, 0.9),
                    )
                })
                .collect();
            Image::from_fn_gray(height, width, |y, x| {
                disks.iter().fold(bg, |v, &(cy, cx, r, level)| {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    if d2 <= r * r {
                        level
                    } else {
                        v
                    }
                })
            })
        }
        ToyKind::Sinusoids => {
            let waves: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    let angle = rng.uniform_range(0.0, std::f64::consts::PI);
                    let period = rng.uniform_range(0.3, 1.0) * h.max(w);
                    let k = 2.0 * std::f64::consts::PI / period;
                    (k * angle.cos(), k * angle.sin(), rng.uniform_range(0.0, 6.3), rng.uniform_range(0.03, 0.12))
                })
                .collect();
            Image::from_fn_gray(height, width, |y, x| {
                0.5 + waves
                    .iter()
                    .map(|&(kx, ky, ph, a)| a * (kx * x as f64 + ky * y as f64 + ph).sin())
                    .sum::<f64>()
            })
        }
        ToyKind::Mosaic => {
            let cells: Vec<(f64, f64, f64)> = (0..3 + rng.below(4))
                .map(|_| (rng.uniform_range(0.0, h), rng.uniform_range(0.0, w), rng.uniform_range(0.1, 0.9)))
                .collect();
            Image::from_fn_gray(height, width, |y, x| {
                let nearest = cells
                    .iter()
                    .min_by(|a, b| {
                        let da = (y as f64 - a.0).powi(2) + (x as f64 - a.1).powi(2);
                        let db = (y as f64 - b.0).powi(2) + (x as f64 - b.1).powi(2);
                        da.total_cmp(&db)
                    })
                    .expect("at least one cell");
                nearest.2
            })
        }
    }
}

/// `count` images cycling through every kind, named `toy_<i>_<kind>`.
pub fn toy_corpus(count: usize, height: usize, width: usize, seed: u64) -> Vec<(String, Image)> {
    let mut rng = Rng::new(seed, TOY_STREAM);
    (0..count)
        .map(|i| {
            let kind = ALL_KINDS[i % ALL_KINDS.len()];
            (format!("toy_{i:03}_{}", kind.name()), toy_image(kind, height, width, &mut rng))
        })
        .collect()
}

/// `0.5 ± amplitude/2` squares of side `cell`.
pub fn checkerboard(height: usize, width: usize, cell: usize, amplitude: f64) -> Image {
    Image::from_fn_gray(height, width, |y, x| {
        let sign = if (y / cell + x / cell).is_multiple_of(2) { 1.0 } else { -1.0 };
        0.5 + 0.5 * amplitude * sign
    })
}
