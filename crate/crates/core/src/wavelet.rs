//! Single-level orthonormal Haar transform and the two patch smoothness
//! rules.
//!
//! For a 2×2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! ll = (a + b + c + d) / 2    lh = (a − b + c − d) / 2
//! hl = (a + b − c − d) / 2    hh = (a − b − c + d) / 2
//! ```

use crate::error::{Error, Result};
use crate::image::Image;

/// The four coefficient planes of every channel, each `(H/2)×(W/2)`,
/// stored channel-planar like [`Image`].
#[derive(Clone, Debug, PartialEq)]
pub struct Subbands {
    pub ll: Image,
    pub lh: Image,
    pub hl: Image,
    pub hh: Image,
}

impl Subbands {
    pub fn bands(&self) -> [&Image; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    pub fn energy(&self) -> f64 {
        self.bands()
            .iter()
            .map(|b| b.data().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

pub fn dwt2(p: &Image) -> Result<Subbands> {
    let (c, h, w) = (p.channels(), p.height(), p.width());
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::Input(format!("dwt2 needs even, non-zero dimensions, got {h}x{w}")));
    }
    let (h2, w2) = (h / 2, w / 2);
    let mut s = Subbands {
        ll: Image::zeros(c, h2, w2),
        lh: Image::zeros(c, h2, w2),
        hl: Image::zeros(c, h2, w2),
        hh: Image::zeros(c, h2, w2),
    };
    for ch in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                let a = p.get(ch, 2 * i, 2 * j);
                let b = p.get(ch, 2 * i, 2 * j + 1);
                let cc = p.get(ch, 2 * i + 1, 2 * j);
                let d = p.get(ch, 2 * i + 1, 2 * j + 1);
                s.ll.set(ch, i, j, 0.5 * (a + b + cc + d));
                s.lh.set(ch, i, j, 0.5 * (a - b + cc - d));
                s.hl.set(ch, i, j, 0.5 * (a + b - cc - d));
                s.hh.set(ch, i, j, 0.5 * (a - b - cc + d));
            }
        }
    }
    Ok(s)
}

pub fn idwt2(s: &Subbands) -> Result<Image> {
    let ll = &s.ll;
    if !s.bands().iter().all(|b| b.same_shape(ll)) {
        return Err(Error::Input("sub-band shapes differ".into()));
    }
    let (c, h2, w2) = (ll.channels(), ll.height(), ll.width());
    let mut p = Image::zeros(c, 2 * h2, 2 * w2);
    for ch in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                let (l, x, y, z) = (
                    s.ll.get(ch, i, j),
                    s.lh.get(ch, i, j),
                    s.hl.get(ch, i, j),
                    s.hh.get(ch, i, j),
                );
                p.set(ch, 2 * i, 2 * j, 0.5 * (l + x + y + z));
                p.set(ch, 2 * i, 2 * j + 1, 0.5 * (l - x + y - z));
                p.set(ch, 2 * i + 1, 2 * j, 0.5 * (l + x - y - z));
                p.set(ch, 2 * i + 1, 2 * j + 1, 0.5 * (l - x - y + z));
            }
        }
    }
    Ok(p)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// `(1/4)Σ|Var(W_k) − V̄| / V̄` for one channel, with `V̄` the mean sub-band
/// variance; 0 when `V̄` is 0.
fn dwt_channel_score(s: &Subbands, ch: usize) -> f64 {
    let vars = s.bands().map(|b| mean_var(b.plane(ch)).1);
    let mean = vars.iter().sum::<f64>() / 4.0;
    if mean <= 0.0 {
        return 0.0;
    }
    vars.iter().map(|v| (v - mean).abs()).sum::<f64>() / 4.0 / mean
}

/// The wavelet rule. Returns whether the patch is smooth and its score
/// (the worst channel's deviation ratio); every channel must pass.
pub fn is_smooth_dwt(p: &Image, lambda: f64) -> Result<(bool, f64)> {
    let s = dwt2(p)?;
    let score = (0..p.channels())
        .map(|ch| dwt_channel_score(&s, ch))
        .fold(0.0, f64::max);
    Ok((score <= lambda, score))
}

/// The sub-patch homogeneity rule over a non-overlapping `subpatch` grid:
/// every tile `q` must satisfy `|E(q) − E(p)| ≤ μE(p)` and
/// `|Var(q) − Var(p)| ≤ γVar(p)`, on every channel.
pub fn is_smooth_gcbd(p: &Image, mu: f64, gamma: f64, subpatch: usize) -> Result<bool> {
    let (h, w) = (p.height(), p.width());
    if subpatch == 0 || h % subpatch != 0 || w % subpatch != 0 {
        return Err(Error::Input(format!(
            "sub-patch size {subpatch} does not tile a {h}x{w} patch"
        )));
    }
    let mut tile = Vec::with_capacity(subpatch * subpatch);
    for ch in 0..p.channels() {
        let (mean, var) = mean_var(p.plane(ch));
        for ty in (0..h).step_by(subpatch) {
            for tx in (0..w).step_by(subpatch) {
                tile.clear();
                for y in ty..ty + subpatch {
                    tile.extend_from_slice(&p.plane(ch)[y * w + tx..y * w + tx + subpatch]);
                }
                let (m, v) = mean_var(&tile);
                if (m - mean).abs() > mu * mean || (v - var).abs() > gamma * var {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_image(c: usize, h: usize, w: usize, rng: &mut Rng) -> Image {
        let data = (0..c * h * w).map(|_| rng.uniform()).collect();
        Image::new(c, h, w, data).unwrap()
    }

    #[test]
    fn constant_2x2() {
        let s = dwt2(&Image::filled(1, 2, 2, 0.3)).unwrap();
        assert!((s.ll.data()[0] - 0.6).abs() < 1e-15);
        assert_eq!([s.lh.data()[0], s.hl.data()[0], s.hh.data()[0]], [0.0; 3]);
    }

    /// Matrix-form oracle: coefficients are `H ⊗ H` applied to `vec(block)`.
    #[test]
    fn matches_kronecker_oracle() {
        let h = [[1.0, 1.0], [1.0, -1.0]];
        let (a, b, c, d) = (0.9, 0.2, -0.4, 0.35);
        let block = [[a, b], [c, d]];
        // coef[r][s] = ½ Σ_ij h[r][i] h[s][j] block[i][j]: r picks rows, s columns.
        let coef = |r: usize, s: usize| {
            let mut t = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    t += h[r][i] * h[s][j] * block[i][j];
                }
            }
            t / 2.0
        };
        let img = Image::new(1, 2, 2, vec![a, b, c, d]).unwrap();
        let s = dwt2(&img).unwrap();
        assert!((s.ll.data()[0] - coef(0, 0)).abs() < 1e-15);
        assert!((s.lh.data()[0] - coef(0, 1)).abs() < 1e-15);
        assert!((s.hl.data()[0] - coef(1, 0)).abs() < 1e-15);
        assert!((s.hh.data()[0] - coef(1, 1)).abs() < 1e-15);
    }

    #[test]
    fn round_trip_and_parseval() {
        let mut rng = Rng::new(7, 0);
        for _ in 0..100 {
            let p = random_image(2, 8, 6, &mut rng);
            let s = dwt2(&p).unwrap();
            let energy: f64 = p.data().iter().map(|v| v * v).sum();
            assert!((s.energy() - energy).abs() < 1e-9);
            let back = idwt2(&s).unwrap();
            let err = back.data().iter().zip(p.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(err < 1e-10);
        }
    }

    #[test]
    fn zero_and_ll_only_inverse() {
        let z = Image::zeros(1, 3, 5);
        let s = Subbands { ll: z.clone(), lh: z.clone(), hl: z.clone(), hh: z };
        assert!(idwt2(&s).unwrap().data().iter().all(|&v| v == 0.0));
        let mut s = dwt2(&Image::filled(1, 4, 4, 0.7)).unwrap();
        s.lh = Image::zeros(1, 2, 2);
        assert!(idwt2(&s).unwrap().data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn odd_size_is_input_error() {
        assert!(matches!(dwt2(&Image::zeros(1, 3, 4)), Err(Error::Input(_))));
    }

    #[test]
    fn constant_patch_is_smooth_under_both_rules() {
        let p = Image::filled(1, 96, 96, 0.5);
        assert_eq!(is_smooth_dwt(&p, 0.03).unwrap(), (true, 0.0));
        assert!(is_smooth_gcbd(&p, 0.1, 0.1, 32).unwrap());
        assert!(is_smooth_gcbd(&p, 0.1, 0.1, 30).is_err());
    }
}
