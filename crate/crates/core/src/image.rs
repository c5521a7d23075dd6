//! Planar floating-point images and 8-bit PNG I/O.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `C×H×W` image stored channel-planar. Pixel values nominally live in
/// `[0, 1]`; noisy images are additive and may leave that range.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels * height * width != data.len() {
            return Err(Error::Input(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Build a single-channel image from `f(row, col)`.
    pub fn from_fn_gray(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            channels: 1,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Input(format!(
                "crop {height}x{width} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Image::zeros(self.channels, height, width);
        for c in 0..self.channels {
            for y in 0..height {
                let src = (c * self.height + top + y) * self.width + left;
                let dst = (c * height + y) * width;
                out.data[dst..dst + width].copy_from_slice(&self.data[src..src + width]);
            }
        }
        Ok(out)
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                let row = (c * self.height + y) * self.width;
                out.data[row..row + self.width].reverse();
            }
        }
        out
    }

    /// Mirror top-bottom.
    pub fn flip_vertical(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                let src = (c * self.height + y) * self.width;
                let dst = (c * self.height + self.height - 1 - y) * self.width;
                out.data[dst..dst + self.width].copy_from_slice(&self.data[src..src + self.width]);
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn clip_unit(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        if !self.same_shape(other) {
            return Err(Error::Input("image shape mismatch in add".into()));
        }
        Ok(Image {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            ..*self
        })
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        if !self.same_shape(other) {
            return Err(Error::Input("image shape mismatch in sub".into()));
        }
        Ok(Image {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
            ..*self
        })
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let p = self.plane(c);
        p.iter().sum::<f64>() / p.len() as f64
    }

    /// BT.601 luma for RGB, identity for single-channel images.
    pub fn to_luma(&self) -> Image {
        if self.channels != 3 {
            return Image {
                channels: 1,
                height: self.height,
                width: self.width,
                data: self.plane(0).to_vec(),
            };
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        Image {
            channels: 1,
            height: self.height,
            width: self.width,
            data: (0..r.len())
                .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
                .collect(),
        }
    }

    /// `(1, C, H, W)` tensor view of this image.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, self.channels, self.height, self.width],
            self.data.clone(),
        )
        .expect("image dims are consistent")
    }

    pub fn batch_to_tensor(images: &[Image]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::Input("empty image batch".into()))?;
        let mut data = Vec::with_capacity(first.data.len() * images.len());
        for im in images {
            if !im.same_shape(first) {
                return Err(Error::Input("images in a batch must share a shape".into()));
            }
            data.extend_from_slice(&im.data);
        }
        Tensor::new(
            vec![images.len(), first.channels, first.height, first.width],
            data,
        )
    }

    /// Split an `(N, C, H, W)` tensor into images.
    pub fn batch_from_tensor(t: &Tensor) -> Result<Vec<Image>> {
        let (n, c, h, w) = t.dims4()?;
        let item = c * h * w;
        Ok((0..n)
            .map(|i| Image {
                channels: c,
                height: h,
                width: w,
                data: t.data()[i * item..(i + 1) * item].to_vec(),
            })
            .collect())
    }

    /// Load an 8-bit grayscale or RGB PNG, scaled to `[0, 1]` by `/255`.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let mut decoder = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf)?;
        let (w, h) = (info.width as usize, info.height as usize);
        let bytes = &buf[..info.buffer_size()];
        let (src_channels, channels) = match info.color_type {
            png::ColorType::Grayscale => (1, 1),
            png::ColorType::GrayscaleAlpha => (2, 1),
            png::ColorType::Rgb => (3, 3),
            png::ColorType::Rgba => (4, 3),
            other => {
                return Err(Error::Png(format!(
                    "{}: unsupported color type {other:?}",
                    path.display()
                )))
            }
        };
        let mut img = Image::zeros(channels, h, w);
        for y in 0..h {
            for x in 0..w {
                for c in 0..channels {
                    let v = bytes[(y * w + x) * src_channels + c];
                    img.set(c, y, x, v as f64 / 255.0);
                }
            }
        }
        Ok(img)
    }

    /// Save as 8-bit PNG; values are clipped to `[0, 1]` and rounded.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => return Err(Error::Png(format!("cannot save {c}-channel image"))),
        };
        let file = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(file, self.width as u32, self.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        let mut bytes = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    bytes.push(quantize(self.get(c, y, x)));
                }
            }
        }
        writer.write_image_data(&bytes)?;
        writer.finish()?;
        Ok(())
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// An image region with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePatch {
    pub pixels: Image,
    pub source_id: String,
    /// `(row, col)` of the top-left corner in the source image.
    pub offset: (usize, usize),
}

impl ImagePatch {
    pub fn new(pixels: Image, source_id: impl Into<String>, offset: (usize, usize)) -> Self {
        Self {
            pixels,
            source_id: source_id.into(),
            offset,
        }
    }

    /// Wrap a whole image as a patch at offset `(0, 0)`.
    pub fn whole(pixels: Image, source_id: impl Into<String>) -> Self {
        Self::new(pixels, source_id, (0, 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flips_are_involutions() {
        let im = Image::from_fn_gray(3, 4, |y, x| (y * 4 + x) as f64);
        assert_eq!(im.flip_horizontal().flip_horizontal(), im);
        assert_eq!(im.flip_vertical().flip_vertical(), im);
        assert_eq!(im.flip_horizontal().get(0, 0, 0), 3.0);
        assert_eq!(im.flip_vertical().get(0, 0, 0), 8.0);
    }

    #[test]
    fn crop_bounds() {
        let im = Image::from_fn_gray(4, 4, |y, x| (y * 4 + x) as f64);
        let c = im.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(im.crop(3, 3, 2, 2).is_err());
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let im = Image::from_fn_gray(5, 7, |y, x| (y * 7 + x) as f64 / 34.0);
        im.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert!(back.same_shape(&im));
        for (a, b) in im.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn rgb_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let mut im = Image::zeros(3, 2, 2);
        im.set(0, 0, 0, 1.0);
        im.set(2, 1, 1, 1.0);
        im.save_png(&path).unwrap();
        assert_eq!(Image::load_png(&path).unwrap(), im);
    }
}
