use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of a convolution or transposed convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    /// `(in + 2·pad − k) / stride + 1`, or `None` if the kernel does not fit.
    pub fn conv_out(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= self.kernel_size).then(|| (padded - self.kernel_size) / self.stride + 1)
    }

    /// `(in − 1)·stride − 2·pad + k`, or `None` if that would be non-positive.
    pub fn deconv_out(&self, input: usize) -> Option<usize> {
        let grown = (input.checked_sub(1)?) * self.stride + self.kernel_size;
        grown.checked_sub(2 * self.padding).filter(|&n| n > 0)
    }
}

/// One stage of a feed-forward chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    Conv(ConvSpec),
    /// Transposed convolution: the adjoint of `Conv` with respect to its input.
    DeConv(ConvSpec),
    BatchNorm { channels: usize },
    ReLU,
    LeakyReLU { alpha: f64 },
    Tanh,
    Sigmoid,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "Conv",
            LayerSpec::DeConv(_) => "DeConv",
            LayerSpec::BatchNorm { .. } => "BatchNorm",
            LayerSpec::ReLU => "ReLU",
            LayerSpec::LeakyReLU { .. } => "LeakyReLU",
            LayerSpec::Tanh => "Tanh",
            LayerSpec::Sigmoid => "Sigmoid",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LayerSpec::Conv(c) | LayerSpec::DeConv(c) => {
                if c.kernel_size == 0 || c.stride == 0 || c.in_channels == 0 || c.out_channels == 0 {
                    return Err(Error::Config(format!(
                        "{}: kernel, stride and channel counts must be ≥ 1 ({c:?})",
                        self.name()
                    )));
                }
            }
            LayerSpec::BatchNorm { channels } if *channels == 0 => {
                return Err(Error::Config("BatchNorm with zero channels".into()));
            }
            LayerSpec::LeakyReLU { alpha } if !alpha.is_finite() => {
                return Err(Error::Config("LeakyReLU alpha must be finite".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Output `(C, H, W)` for an input `(C, H, W)`, checking channel agreement.
    pub fn output_dims(&self, index: usize, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let shape_err = |msg: String| Error::Shape {
            layer: index,
            kind: self.name(),
            msg,
        };
        match self {
            LayerSpec::Conv(s) | LayerSpec::DeConv(s) => {
                if c != s.in_channels {
                    return Err(shape_err(format!(
                        "expected {} input channels, got {c}",
                        s.in_channels
                    )));
                }
                let (oh, ow) = if matches!(self, LayerSpec::Conv(_)) {
                    (s.conv_out(h), s.conv_out(w))
                } else {
                    (s.deconv_out(h), s.deconv_out(w))
                };
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok((s.out_channels, oh, ow)),
                    _ => Err(shape_err(format!("input {h}x{w} too small for {s:?}"))),
                }
            }
            LayerSpec::BatchNorm { channels } => {
                if c != *channels {
                    return Err(shape_err(format!("expected {channels} channels, got {c}")));
                }
                Ok((c, h, w))
            }
            _ => Ok((c, h, w)),
        }
    }
}

/// A layer chain, optionally wrapped in a DnCNN-style residual
/// (`output = input − chain(input)`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub residual: bool,
}

impl NetworkSpec {
    pub fn chain(layers: Vec<LayerSpec>) -> Self {
        Self {
            layers,
            residual: false,
        }
    }

    pub fn residual(layers: Vec<LayerSpec>) -> Self {
        Self {
            layers,
            residual: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        self.layers.iter().try_for_each(LayerSpec::validate)
    }

    /// Input channel count expected by the first channel-aware layer.
    pub fn input_channels(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            LayerSpec::Conv(s) | LayerSpec::DeConv(s) => Some(s.in_channels),
            LayerSpec::BatchNorm { channels } => Some(*channels),
            _ => None,
        })
    }

    /// Per-layer output dims for a given input, or the first shape error.
    pub fn trace_dims(&self, input: (usize, usize, usize)) -> Result<Vec<(usize, usize, usize)>> {
        let mut dims = input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            dims = layer.output_dims(i, dims)?;
            out.push(dims);
        }
        if self.residual && dims != input {
            return Err(Error::Shape {
                layer: self.layers.len() - 1,
                kind: "Residual",
                msg: format!("chain output {dims:?} differs from input {input:?}"),
            });
        }
        Ok(out)
    }
}
