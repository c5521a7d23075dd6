//! Forward and analytic backward passes over a [`NetworkSpec`].

use crate::error::{Error, Result};
use crate::nn::kernels::{col2im, gemm, im2col, ConvGeom, Mat};
use crate::nn::layer::{ConvSpec, LayerSpec, NetworkSpec};
use crate::nn::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
/// Weight of the current batch in the running-statistics moving average.
pub const BN_MOMENTUM: f64 = 0.1;

/// Whether batchnorm uses batch statistics (and caches activations for
/// [`Network::backward`]) or its running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
enum Slots {
    Stateless,
    Conv { weight: usize, bias: Option<usize> },
    Norm { gamma: usize, beta: usize, mean: usize, var: usize },
}

#[derive(Clone, Debug)]
enum Cache {
    /// Layer input.
    Input(Tensor),
    /// Layer output (tanh, sigmoid).
    Output(Tensor),
    Norm { xhat: Tensor, inv_std: Vec<f64> },
}

/// A network: its architecture, parameters and the activation cache of
/// the last train-mode forward pass.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    params: ParamStore,
    slots: Vec<Slots>,
    cache: Option<Vec<Cache>>,
}

impl Network {
    /// He-normal conv weights, zero biases, unit batchnorm scale.
    pub fn new(spec: NetworkSpec, rng: &mut Rng) -> Result<Self> {
        Self::build(spec, |fan_in, t| {
            let std = (2.0 / fan_in).sqrt();
            t.data_mut().iter_mut().for_each(|v| *v = std * rng.normal());
        })
    }

    /// All conv weights zero.
    pub fn zeroed(spec: NetworkSpec) -> Result<Self> {
        Self::build(spec, |_, _| {})
    }

    fn build(spec: NetworkSpec, mut init: impl FnMut(f64, &mut Tensor)) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut slots = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let slot = match layer {
                LayerSpec::Conv(s) | LayerSpec::DeConv(s) => {
                    let k = s.kernel_size;
                    let (shape, fan_in) = if matches!(layer, LayerSpec::Conv(_)) {
                        ([s.out_channels, s.in_channels, k, k], (s.in_channels * k * k) as f64)
                    } else {
                        // Each output pixel of a strided transposed conv sees
                        // roughly in·k²/stride² inputs.
                        (
                            [s.in_channels, s.out_channels, k, k],
                            ((s.in_channels * k * k) as f64 / (s.stride * s.stride) as f64).max(1.0),
                        )
                    };
                    let mut w = Tensor::zeros(&shape);
                    init(fan_in, &mut w);
                    let weight = params.push_param(format!("{i}.weight"), w);
                    let bias = s
                        .bias
                        .then(|| params.push_param(format!("{i}.bias"), Tensor::zeros(&[s.out_channels])));
                    Slots::Conv { weight, bias }
                }
                LayerSpec::BatchNorm { channels } => Slots::Norm {
                    gamma: params.push_param(format!("{i}.gamma"), Tensor::full(&[*channels], 1.0)),
                    beta: params.push_param(format!("{i}.beta"), Tensor::zeros(&[*channels])),
                    mean: params.push_buffer(format!("{i}.running_mean"), Tensor::zeros(&[*channels])),
                    var: params.push_buffer(format!("{i}.running_var"), Tensor::full(&[*channels], 1.0)),
                },
                _ => Slots::Stateless,
            };
            slots.push(slot);
        }
        Ok(Self {
            spec,
            params,
            slots,
            cache: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Output shape for a given `(N, C, H, W)` input, without computing.
    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let dims = self.spec.trace_dims((input[1], input[2], input[3]))?;
        let (c, h, w) = *dims.last().expect("validated non-empty");
        Ok([input[0], c, h, w])
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = input.dims4()?;
        if n == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        self.spec.trace_dims((c, h, w))?;
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut x = input.clone();
        for i in 0..self.spec.layers.len() {
            x = self.layer_forward(i, x, mode, &mut caches)?;
        }
        if self.spec.residual {
            x = input.sub(&x)?;
        }
        self.cache = match mode {
            Mode::Train => Some(caches),
            Mode::Eval => None,
        };
        Ok(x)
    }

    /// Accumulate parameter gradients for the cached forward pass and return
    /// the gradient with respect to its input. Consumes the cache.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let mut caches = self.cache.take().ok_or_else(|| {
            Error::Usage("backward called without a preceding train-mode forward".into())
        })?;
        let mut grad = if self.spec.residual {
            upstream.scale(-1.0)
        } else {
            upstream.clone()
        };
        for i in (0..self.spec.layers.len()).rev() {
            let cache = caches.pop().expect("one cache per layer");
            grad = self.layer_backward(i, cache, grad)?;
        }
        if self.spec.residual {
            grad.axpy(1.0, upstream)?;
        }
        Ok(grad)
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn zero_grad(&mut self) {
        self.params.zero_grad();
    }

    fn layer_forward(&mut self, i: usize, x: Tensor, mode: Mode, caches: &mut Vec<Cache>) -> Result<Tensor> {
        let layer = self.spec.layers[i];
        let train = mode == Mode::Train;
        let out = match (layer, &self.slots[i]) {
            (LayerSpec::Conv(s), &Slots::Conv { weight, bias }) => {
                let y = conv_forward(
                    &x,
                    &s,
                    &self.params.param(weight).value,
                    bias.map(|b| &self.params.param(b).value),
                );
                caches.push(Cache::Input(x));
                y
            }
            (LayerSpec::DeConv(s), &Slots::Conv { weight, bias }) => {
                let y = deconv_forward(
                    &x,
                    &s,
                    &self.params.param(weight).value,
                    bias.map(|b| &self.params.param(b).value),
                );
                caches.push(Cache::Input(x));
                y
            }
            (LayerSpec::BatchNorm { .. }, &Slots::Norm { gamma, beta, mean, var }) => {
                if train {
                    let (y, xhat, inv_std, bmean, bvar) = batchnorm_train(
                        &x,
                        self.params.param(gamma).value.data(),
                        self.params.param(beta).value.data(),
                    );
                    update_running(self.params.buffer_mut(mean), &bmean);
                    update_running(self.params.buffer_mut(var), &bvar);
                    caches.push(Cache::Norm { xhat, inv_std });
                    y
                } else {
                    batchnorm_eval(
                        &x,
                        self.params.param(gamma).value.data(),
                        self.params.param(beta).value.data(),
                        self.params.buffer(mean).data(),
                        self.params.buffer(var).data(),
                    )
                }
            }
            (LayerSpec::ReLU, _) => {
                let y = x.map(|v| v.max(0.0));
                caches.push(Cache::Input(x));
                y
            }
            (LayerSpec::LeakyReLU { alpha }, _) => {
                let y = x.map(|v| if v > 0.0 { v } else { alpha * v });
                caches.push(Cache::Input(x));
                y
            }
            (LayerSpec::Tanh, _) => {
                let y = x.map(f64::tanh);
                caches.push(Cache::Output(y.clone()));
                y
            }
            (LayerSpec::Sigmoid, _) => {
                let y = x.map(sigmoid);
                caches.push(Cache::Output(y.clone()));
                y
            }
            _ => unreachable!("slots built from the same spec"),
        };
        Ok(out)
    }

    fn layer_backward(&mut self, i: usize, cache: Cache, dy: Tensor) -> Result<Tensor> {
        let layer = self.spec.layers[i];
        let dx = match (layer, &self.slots[i], cache) {
            (LayerSpec::Conv(s), &Slots::Conv { weight, bias }, Cache::Input(x)) => {
                let w = self.params.param(weight).value.clone();
                let (dx, dw, db) = conv_backward(&x, &s, &w, &dy);
                self.params.param_mut(weight).grad.axpy(1.0, &dw)?;
                if let Some(b) = bias {
                    self.params.param_mut(b).grad.axpy(1.0, &db)?;
                }
                dx
            }
            (LayerSpec::DeConv(s), &Slots::Conv { weight, bias }, Cache::Input(x)) => {
                let w = self.params.param(weight).value.clone();
                let (dx, dw, db) = deconv_backward(&x, &s, &w, &dy);
                self.params.param_mut(weight).grad.axpy(1.0, &dw)?;
                if let Some(b) = bias {
                    self.params.param_mut(b).grad.axpy(1.0, &db)?;
                }
                dx
            }
            (LayerSpec::BatchNorm { .. }, &Slots::Norm { gamma, beta, .. }, Cache::Norm { xhat, inv_std }) => {
                let g = self.params.param(gamma).value.data().to_vec();
                let (dx, dgamma, dbeta) = batchnorm_backward(&xhat, &inv_std, &g, &dy);
                self.params.param_mut(gamma).grad.axpy(1.0, &dgamma)?;
                self.params.param_mut(beta).grad.axpy(1.0, &dbeta)?;
                dx
            }
            (LayerSpec::ReLU, _, Cache::Input(x)) => x.zip_map(&dy, |v, g| if v > 0.0 { g } else { 0.0 })?,
            (LayerSpec::LeakyReLU { alpha }, _, Cache::Input(x)) => {
                x.zip_map(&dy, |v, g| if v > 0.0 { g } else { alpha * g })?
            }
            (LayerSpec::Tanh, _, Cache::Output(y)) => y.zip_map(&dy, |t, g| g * (1.0 - t * t))?,
            (LayerSpec::Sigmoid, _, Cache::Output(y)) => y.zip_map(&dy, |s, g| g * s * (1.0 - s))?,
            _ => unreachable!("cache kinds follow layer kinds"),
        };
        Ok(dx)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn conv_geom(s: &ConvSpec, c: usize, h: usize, w: usize) -> ConvGeom {
    ConvGeom::new(c, h, w, s.kernel_size, s.stride, s.padding).expect("dims traced before forward")
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (c, b) in bias.iter().enumerate() {
        out[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
}

fn sum_planes(dy: &[f64], channels: usize, plane: usize, db: &mut [f64]) {
    for c in 0..channels {
        db[c] += dy[c * plane..(c + 1) * plane].iter().sum::<f64>();
    }
}

fn conv_forward(x: &Tensor, s: &ConvSpec, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (n, c, h, wd) = x.dims4().expect("rank checked");
    let g = conv_geom(s, c, h, wd);
    let (rows, ncols, oc) = (g.col_rows(), g.col_cols(), s.out_channels);
    let mut out = Tensor::zeros(&[n, oc, g.out_h, g.out_w]);
    let mut cols = vec![0.0; rows * ncols];
    let in_item = c * h * wd;
    let out_item = oc * ncols;
    for i in 0..n {
        im2col(&x.data()[i * in_item..(i + 1) * in_item], &g, &mut cols);
        let y = &mut out.data_mut()[i * out_item..(i + 1) * out_item];
        gemm(oc, rows, ncols, Mat::n(w.data()), Mat::n(&cols), 0.0, y);
        if let Some(b) = b {
            add_bias(y, b.data(), ncols);
        }
    }
    out
}

fn conv_backward(x: &Tensor, s: &ConvSpec, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, c, h, wd) = x.dims4().expect("rank checked");
    let g = conv_geom(s, c, h, wd);
    let (rows, ncols, oc) = (g.col_rows(), g.col_cols(), s.out_channels);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[oc]);
    let mut cols = vec![0.0; rows * ncols];
    let mut dcols = vec![0.0; rows * ncols];
    let in_item = c * h * wd;
    let out_item = oc * ncols;
    for i in 0..n {
        let dyi = &dy.data()[i * out_item..(i + 1) * out_item];
        im2col(&x.data()[i * in_item..(i + 1) * in_item], &g, &mut cols);
        gemm(oc, ncols, rows, Mat::n(dyi), Mat::t(&cols), 1.0, dw.data_mut());
        gemm(rows, oc, ncols, Mat::t(w.data()), Mat::n(dyi), 0.0, &mut dcols);
        col2im(&dcols, &g, &mut dx.data_mut()[i * in_item..(i + 1) * in_item]);
        sum_planes(dyi, oc, ncols, db.data_mut());
    }
    (dx, dw, db)
}

fn deconv_forward(x: &Tensor, s: &ConvSpec, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (n, c, h, wd) = x.dims4().expect("rank checked");
    let oh = s.deconv_out(h).expect("dims traced");
    let ow = s.deconv_out(wd).expect("dims traced");
    let oc = s.out_channels;
    // The output plane is the "input" of the adjoint convolution.
    let g = conv_geom(s, oc, oh, ow);
    debug_assert_eq!((g.out_h, g.out_w), (h, wd));
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut out = Tensor::zeros(&[n, oc, oh, ow]);
    let mut cols = vec![0.0; rows * ncols];
    let in_item = c * ncols;
    let out_item = oc * oh * ow;
    for i in 0..n {
        gemm(rows, c, ncols, Mat::t(w.data()), Mat::n(&x.data()[i * in_item..(i + 1) * in_item]), 0.0, &mut cols);
        let y = &mut out.data_mut()[i * out_item..(i + 1) * out_item];
        col2im(&cols, &g, y);
        if let Some(b) = b {
            add_bias(y, b.data(), oh * ow);
        }
    }
    out
}

fn deconv_backward(x: &Tensor, s: &ConvSpec, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, c, h, wd) = x.dims4().expect("rank checked");
    let (_, oc, oh, ow) = dy.dims4().expect("rank checked");
    let g = conv_geom(s, oc, oh, ow);
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    debug_assert_eq!(ncols, h * wd);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[oc]);
    let mut dcols = vec![0.0; rows * ncols];
    let in_item = c * ncols;
    let out_item = oc * oh * ow;
    for i in 0..n {
        let dyi = &dy.data()[i * out_item..(i + 1) * out_item];
        im2col(dyi, &g, &mut dcols);
        gemm(c, rows, ncols, Mat::n(w.data()), Mat::n(&dcols), 0.0, &mut dx.data_mut()[i * in_item..(i + 1) * in_item]);
        gemm(c, ncols, rows, Mat::n(&x.data()[i * in_item..(i + 1) * in_item]), Mat::t(&dcols), 1.0, dw.data_mut());
        sum_planes(dyi, oc, oh * ow, db.data_mut());
    }
    (dx, dw, db)
}

type NormOut = (Tensor, Tensor, Vec<f64>, Vec<f64>, Vec<f64>);

/// Returns `(y, xhat, inv_std, batch_mean, unbiased_batch_var)`.
fn batchnorm_train(x: &Tensor, gamma: &[f64], beta: &[f64]) -> NormOut {
    let (n, c, h, w) = x.dims4().expect("rank checked");
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = vec![0.0; c];
    let mut means = vec![0.0; c];
    let mut vars = vec![0.0; c];
    let xd = x.data();
    for ch in 0..c {
        let idx = |i: usize| (i * c + ch) * plane;
        let mut sum = 0.0;
        for i in 0..n {
            sum += xd[idx(i)..idx(i) + plane].iter().sum::<f64>();
        }
        let mean = sum / m;
        let mut sq = 0.0;
        for i in 0..n {
            sq += xd[idx(i)..idx(i) + plane].iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        }
        let var = sq / m;
        let inv = 1.0 / (var + BN_EPS).sqrt();
        for i in 0..n {
            let r = idx(i)..idx(i) + plane;
            let outs = xhat.data_mut()[r.clone()].iter_mut().zip(&mut y.data_mut()[r.clone()]);
            for (&x, (xh, out)) in xd[r].iter().zip(outs) {
                *xh = (x - mean) * inv;
                *out = gamma[ch] * *xh + beta[ch];
            }
        }
        inv_std[ch] = inv;
        means[ch] = mean;
        vars[ch] = if m > 1.0 { sq / (m - 1.0) } else { var };
    }
    (y, xhat, inv_std, means, vars)
}

fn update_running(buf: &mut Tensor, batch: &[f64]) {
    for (r, b) in buf.data_mut().iter_mut().zip(batch) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
    }
}

fn batchnorm_eval(x: &Tensor, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64]) -> Tensor {
    let (n, c, h, w) = x.dims4().expect("rank checked");
    let plane = h * w;
    let mut y = x.clone();
    for i in 0..n {
        for ch in 0..c {
            let inv = 1.0 / (var[ch] + BN_EPS).sqrt();
            let start = (i * c + ch) * plane;
            for v in &mut y.data_mut()[start..start + plane] {
                *v = gamma[ch] * (*v - mean[ch]) * inv + beta[ch];
            }
        }
    }
    y
}

fn batchnorm_backward(xhat: &Tensor, inv_std: &[f64], gamma: &[f64], dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, c, h, w) = xhat.dims4().expect("rank checked");
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut dx = Tensor::zeros(xhat.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let (xd, gd) = (xhat.data(), dy.data());
    for ch in 0..c {
        let idx = |i: usize| (i * c + ch) * plane;
        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
        for i in 0..n {
            for j in idx(i)..idx(i) + plane {
                sum_dy += gd[j];
                sum_dy_xhat += gd[j] * xd[j];
            }
        }
        dgamma.data_mut()[ch] = sum_dy_xhat;
        dbeta.data_mut()[ch] = sum_dy;
        let k = gamma[ch] * inv_std[ch] / m;
        for i in 0..n {
            for j in idx(i)..idx(i) + plane {
                dx.data_mut()[j] = k * (m * gd[j] - sum_dy - xd[j] * sum_dy_xhat);
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_by_one_identity() -> Network {
        let mut net = Network::zeroed(NetworkSpec::chain(vec![LayerSpec::Conv(ConvSpec::new(1, 1, 1, 1, 0))])).unwrap();
        net.params_mut().get_mut("0.weight").unwrap().value.data_mut()[0] = 1.0;
        net
    }

    #[test]
    fn identity_conv_is_identity() {
        let mut net = one_by_one_identity();
        let x = Tensor::from_fn(&[2, 1, 3, 5], |i| (i as f64 * 0.31).sin());
        assert_eq!(net.forward(&x, Mode::Eval).unwrap(), x);
        assert_eq!(net.forward(&x, Mode::Train).unwrap(), x);
    }

    #[test]
    fn backward_requires_train_forward() {
        let mut net = one_by_one_identity();
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(net.backward(&x), Err(Error::Usage(_))));
        net.forward(&x, Mode::Eval).unwrap();
        assert!(matches!(net.backward(&x), Err(Error::Usage(_))));
        net.forward(&x, Mode::Train).unwrap();
        assert!(net.backward(&x).is_ok());
        assert!(matches!(net.backward(&x), Err(Error::Usage(_))));
    }

    #[test]
    fn relu_passes_positive_gradient() {
        let mut net = Network::zeroed(NetworkSpec::chain(vec![LayerSpec::ReLU])).unwrap();
        let x = Tensor::from_fn(&[1, 2, 2, 2], |i| 0.5 + i as f64);
        net.forward(&x, Mode::Train).unwrap();
        let up = Tensor::from_fn(&[1, 2, 2, 2], |i| (i as f64).cos());
        assert_eq!(net.backward(&up).unwrap(), up);
    }

    #[test]
    fn sigmoid_at_zero_scales_by_quarter() {
        let mut net = Network::zeroed(NetworkSpec::chain(vec![LayerSpec::Sigmoid])).unwrap();
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        net.forward(&x, Mode::Train).unwrap();
        let up = Tensor::full(&[1, 1, 2, 2], 2.0);
        assert!(net.backward(&up).unwrap().data().iter().all(|&g| g == 0.5));
    }

    #[test]
    fn input_channel_mismatch_is_shape_error() {
        let mut net = one_by_one_identity();
        let x = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(matches!(net.forward(&x, Mode::Eval), Err(Error::Shape { layer: 0, .. })));
    }

    #[test]
    fn batchnorm_train_normalizes_each_channel() {
        let mut net = Network::zeroed(NetworkSpec::chain(vec![LayerSpec::BatchNorm { channels: 3 }])).unwrap();
        let mut rng = Rng::new(5, 0);
        // Scale ≥ 5 keeps eps/var below 1e-6.
        let x = Tensor::from_fn(&[4, 3, 6, 6], |i| 3.0 * (i % 3) as f64 + 7.0 * rng.normal());
        let y = net.forward(&x, Mode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| y.data()[(n * 3 + ch) * 36..(n * 3 + ch + 1) * 36].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
        let rv = &net.params().buffers()[1].1;
        assert!(rv.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn residual_of_zero_network_is_identity() {
        let spec = NetworkSpec::residual(vec![
            LayerSpec::Conv(ConvSpec::new(1, 4, 3, 1, 1)),
            LayerSpec::ReLU,
            LayerSpec::Conv(ConvSpec::new(4, 1, 3, 1, 1)),
        ]);
        let mut net = Network::zeroed(spec).unwrap();
        let x = Tensor::from_fn(&[1, 1, 7, 5], |i| (i as f64).sin());
        assert_eq!(net.forward(&x, Mode::Eval).unwrap(), x);
    }
}
