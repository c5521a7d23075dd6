use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A learnable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Learnable parameters plus non-learnable buffers (batchnorm running
/// statistics) of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    buffers: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push_param(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.params.push(Param::new(name, value));
        self.params.len() - 1
    }

    pub(crate) fn push_buffer(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.buffers.push((name.into(), value));
        self.buffers.len() - 1
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[(String, Tensor)] {
        &self.buffers
    }

    pub(crate) fn param(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub(crate) fn param_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub(crate) fn buffer(&self, i: usize) -> &Tensor {
        &self.buffers[i].1
    }

    pub(crate) fn buffer_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.buffers[i].1
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Largest `|p|` over every parameter tensor (buffers excluded).
    pub fn max_abs(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.value.max_abs()))
    }

    pub fn grads_are_zero(&self) -> bool {
        self.params.iter().all(|p| p.grad.data().iter().all(|&g| g == 0.0))
    }

    /// Replace every parameter with `clamp(p, −c, c)`.
    pub fn clip(&mut self, c: f64) -> Result<()> {
        if c.is_nan() || c <= 0.0 {
            return Err(Error::Config(format!("clip value must be > 0, got {c}")));
        }
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and raw bits of params and buffers.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let named = self
            .params
            .iter()
            .map(|p| (&p.name, &p.value))
            .chain(self.buffers.iter().map(|(n, t)| (n, t)));
        for (name, t) in named {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// `(prefix + name, tensor)` for every param and buffer, in order.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (format!("{prefix}{}", p.name), p.value.clone()))
            .chain(
                self.buffers
                    .iter()
                    .map(|(n, t)| (format!("{prefix}{n}"), t.clone())),
            )
            .collect()
    }

    /// Overwrite values from `lookup(prefix + name)`; every entry must be
    /// present with a matching shape.
    pub fn load_named<'a>(
        &mut self,
        prefix: &str,
        lookup: impl Fn(&str) -> Option<&'a Tensor>,
    ) -> Result<()> {
        let fetch = |name: &str, want: &Tensor| -> Result<Tensor> {
            let key = format!("{prefix}{name}");
            let t = lookup(&key).ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if t.shape() != want.shape() {
                return Err(Error::Checkpoint(format!(
                    "{key}: shape {:?} does not match expected {:?}",
                    t.shape(),
                    want.shape()
                )));
            }
            Ok(t.clone())
        };
        for p in &mut self.params {
            p.value = fetch(&p.name, &p.value)?;
        }
        for (n, t) in &mut self.buffers {
            *t = fetch(n, t)?;
        }
        Ok(())
    }
}
