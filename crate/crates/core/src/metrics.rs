//! PSNR, SSIM and noise-field statistics.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Input(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )))
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n)
}

/// `10·log10(1 / MSE)` in dB, `+∞` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter over the valid region only.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..k).map(|j| g[j] * x[y * w + x0 + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..k).map(|i| g[i] * rows[(y0 + i) * ow + x0]).sum();
        }
    }
    out
}

/// Mean SSIM over valid 11×11 Gaussian-window positions. Colour inputs are
/// converted to luma first.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let (a, b) = if a.channels() == 1 { (a.clone(), b.clone()) } else { (a.to_luma(), b.to_luma()) };
    let (x, y) = (a.plane(0), b.plane(0));
    let g = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let mx = filter_valid(x, h, w, &g);
    let my = filter_valid(y, h, w, &g);
    let mxx = filter_valid(&prod(x, x), h, w, &g);
    let myy = filter_valid(&prod(y, y), h, w, &g);
    let mxy = filter_valid(&prod(x, y), h, w, &g);
    let n = mx.len() as f64;
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / n)
}

/// Sample statistics of a noise field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseStats {
    pub mean: f64,
    /// Unbiased standard deviation.
    pub std: f64,
    pub lag1_corr_h: f64,
    pub lag1_corr_v: f64,
    /// `corr·√pairs`, approximately standard normal under independence.
    pub z_h: f64,
    pub z_v: f64,
    /// Set when the field is constant and correlations are reported as 0.
    pub degenerate: bool,
}

/// Statistics over every plane of `field`; lag-1 pairs never cross planes.
pub fn noise_stats(field: &Image) -> Result<NoiseStats> {
    let data = field.data();
    let n = data.len();
    if n < 2 {
        return Err(Error::Input(format!("noise statistics need ≥ 2 samples, got {n}")));
    }
    let constant = data.iter().all(|&v| v == data[0]);
    let mean = if constant { data[0] } else { data.iter().sum::<f64>() / n as f64 };
    let ss: f64 = data.iter().map(|v| (v - mean).powi(2)).sum();
    let std = (ss / (n as f64 - 1.0)).sqrt();
    let (h, w) = (field.height(), field.width());
    let lag = |dy: usize, dx: usize| -> (f64, f64) {
        let mut acc = 0.0;
        let mut pairs = 0usize;
        for c in 0..field.channels() {
            let p = field.plane(c);
            for y in 0..h - dy {
                for x in 0..w - dx {
                    acc += (p[y * w + x] - mean) * (p[(y + dy) * w + x + dx] - mean);
                    pairs += 1;
                }
            }
        }
        if pairs == 0 || ss == 0.0 {
            return (0.0, 0.0);
        }
        let r = (acc / pairs as f64) / (ss / n as f64);
        (r, r * (pairs as f64).sqrt())
    };
    let (lag1_corr_h, z_h) = lag(0, 1);
    let (lag1_corr_v, z_v) = lag(1, 0);
    Ok(NoiseStats {
        mean,
        std,
        lag1_corr_h,
        lag1_corr_v,
        z_h,
        z_v,
        degenerate: constant,
    })
}

/// JSON encoding of a dB value: a number, or the string `"inf"`.
mod db {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad dB value {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    #[serde(with = "db")]
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(with = "db")]
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageScore>,
    pub aggregate: Aggregate,
    pub config_fingerprint: String,
}

impl EvalReport {
    /// Scores `(id, estimate, reference)` triples; estimates are clipped to
    /// `[0, 1]` first.
    pub fn evaluate<'a>(
        items: impl IntoIterator<Item = (String, &'a Image, &'a Image)>,
        config_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        let mut per_image = Vec::new();
        for (id, est, reference) in items {
            let est = est.clip_unit();
            per_image.push(ImageScore {
                psnr_db: psnr(&est, reference)?,
                ssim: ssim(&est, reference)?,
                image_id: id,
            });
        }
        if per_image.is_empty() {
            return Err(Error::Input("nothing to evaluate".into()));
        }
        let n = per_image.len() as f64;
        let aggregate = Aggregate {
            psnr_db: per_image.iter().map(|s| s.psnr_db).sum::<f64>() / n,
            ssim: per_image.iter().map(|s| s.ssim).sum::<f64>() / n,
        };
        Ok(Self {
            per_image,
            aggregate,
            config_fingerprint: config_fingerprint.into(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_table(&self) -> String {
        let width = self
            .per_image
            .iter()
            .map(|s| s.image_id.len())
            .chain(["image".len(), "mean".len()])
            .max()
            .unwrap_or(5);
        let fmt_db = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:.4}") };
        let mut out = format!("{:<width$}  {:>10}  {:>8}\n", "image", "PSNR(dB)", "SSIM");
        for s in &self.per_image {
            out += &format!("{:<width$}  {:>10}  {:>8.4}\n", s.image_id, fmt_db(s.psnr_db), s.ssim);
        }
        out += &format!(
            "{:<width$}  {:>10}  {:>8.4}\n",
            "mean",
            fmt_db(self.aggregate.psnr_db),
            self.aggregate.ssim
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = Rng::new(seed, 0);
        Image::from_fn_gray(h, w, |_, _| rng.uniform())
    }

    #[test]
    fn psnr_basics() {
        let a = Image::filled(1, 8, 8, 0.25);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::filled(1, 8, 8, 0.75);
        assert_eq!(format!("{:.4}", psnr(&a, &b).unwrap()), "6.0206");
        let c = random(8, 8, 1);
        assert_eq!(psnr(&a, &c).unwrap(), psnr(&c, &a).unwrap());
        assert!(psnr(&a, &Image::zeros(1, 8, 9)).is_err());
    }

    #[test]
    fn psnr_monotone_in_uniform_offset() {
        let a = Image::filled(1, 4, 4, 0.1);
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let p = psnr(&a, &a.map(|v| v + k as f64 * 0.01)).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    /// Direct two-dimensional weighted sums, no separability.
    fn ssim_oracle(x: &Image, y: &Image) -> f64 {
        let (h, w) = (x.height(), x.width());
        let r = 5i64;
        let wt = |d: i64| (-(d * d) as f64 / 4.5).exp();
        let norm: f64 = (-r..=r).flat_map(|i| (-r..=r).map(move |j| wt(i) * wt(j))).sum();
        let mut total = 0.0;
        let mut count = 0.0;
        for cy in 5..h - 5 {
            for cx in 5..w - 5 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in -r..=r {
                    for j in -r..=r {
                        let k = wt(i) * wt(j) / norm;
                        let a = x.get(0, (cy as i64 + i) as usize, (cx as i64 + j) as usize);
                        let b = y.get(0, (cy as i64 + i) as usize, (cx as i64 + j) as usize);
                        mx += k * a;
                        my += k * b;
                        sxx += k * a * a;
                        syy += k * b * b;
                        sxy += k * a * b;
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn ssim_matches_direct_oracle() {
        for seed in 0..5 {
            let a = random(24, 19, seed);
            let b = a.map(|v| 0.7 * v + 0.1);
            let c = random(24, 19, seed + 100);
            assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-12);
            assert!((ssim(&a, &c).unwrap() - ssim_oracle(&a, &c)).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_identity_and_negative() {
        let a = Image::from_fn_gray(32, 32, |y, x| 0.5 + 0.25 * ((x as f64 * 0.7).sin() * (y as f64 * 0.4).cos()));
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!(ssim(&a, &a.map(|v| 1.0 - v)).unwrap() < 0.5);
        assert!(ssim(&Image::zeros(1, 10, 40), &Image::zeros(1, 10, 40)).is_err());
    }

    #[test]
    fn stats_constant_field_is_degenerate() {
        let s = noise_stats(&Image::filled(1, 5, 5, 0.3)).unwrap();
        assert_eq!((s.std, s.lag1_corr_h, s.lag1_corr_v), (0.0, 0.0, 0.0));
        assert!(s.degenerate);
        assert!(noise_stats(&Image::zeros(1, 1, 1)).is_err());
    }

    #[test]
    fn stats_of_white_noise() {
        let mut rng = Rng::new(9, 0);
        let f = Image::from_fn_gray(1000, 1000, |_, _| 0.1 * rng.normal());
        let s = noise_stats(&f).unwrap();
        assert!((s.std / 0.1 - 1.0).abs() < 0.005);
        assert!(s.z_h.abs() < 5.0 && s.z_v.abs() < 5.0);
    }

    #[test]
    fn report_json_uses_inf_sentinel() {
        let a = Image::filled(1, 12, 12, 0.5);
        let r = EvalReport::evaluate([("a".to_string(), &a, &a)], "fp").unwrap();
        let json = r.to_json();
        assert!(json.contains("\"psnr_db\": \"inf\""));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(r.render_table().contains("inf"));
    }
}
