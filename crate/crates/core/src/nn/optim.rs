//! Adam and RMSProp with learning-rate schedules.
//!
//! Both optimizers zero the gradients they consume.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::tensor::Tensor;

/// Per-epoch learning-rate policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Constant until `start_epoch`, then linear towards zero at `total_epochs`.
    LinearDecay { start_epoch: usize, total_epochs: usize },
    /// Halve every `every` epochs.
    HalveEvery { every: usize },
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::LinearDecay {
                start_epoch,
                total_epochs,
            } => {
                if epoch < start_epoch || total_epochs <= start_epoch {
                    base
                } else {
                    let span = (total_epochs - start_epoch) as f64;
                    base * (1.0 - (epoch - start_epoch) as f64 / span).max(0.0)
                }
            }
            LrSchedule::HalveEvery { every } => {
                match epoch.checked_div(every) {
                    Some(k) => base * 0.5f64.powi(k as i32),
                    None => base,
                }
            }
        }
    }
}

pub trait Optimizer {
    /// Apply one update from the accumulated gradients, then zero them.
    fn step(&mut self, params: &mut ParamStore) -> Result<()>;
    fn lr(&self) -> f64;
    fn set_lr(&mut self, lr: f64);
    fn steps(&self) -> u64;
}

fn check_lr(lr: f64) -> Result<()> {
    if lr >= 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("learning rate must be finite and ≥ 0, got {lr}")))
    }
}

fn ensure_slots(slots: &mut Vec<Tensor>, params: &ParamStore) -> Result<()> {
    if slots.is_empty() {
        *slots = params.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        return Ok(());
    }
    if slots.len() != params.params().len()
        || slots.iter().zip(params.params()).any(|(s, p)| s.shape() != p.value.shape())
    {
        return Err(Error::Input("optimizer state does not match parameter shapes".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Result<Self> {
        check_lr(lr)?;
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
            t: 0,
        })
    }

    pub fn save(&self, ckpt: &mut Checkpoint, prefix: &str) {
        ckpt.push(format!("{prefix}hyper"), Tensor::new(vec![5], vec![self.lr, self.beta1, self.beta2, self.eps, self.t as f64]).expect("5"));
        for (i, (m, v)) in self.first.iter().zip(&self.second).enumerate() {
            ckpt.push(format!("{prefix}m/{i}"), m.clone());
            ckpt.push(format!("{prefix}v/{i}"), v.clone());
        }
    }

    pub fn load(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let h = ckpt.require(&format!("{prefix}hyper"))?.data().to_vec();
        if h.len() != 5 {
            return Err(Error::Checkpoint("adam hyper record must hold 5 values".into()));
        }
        let mut opt = Adam::new(h[0])?;
        opt.beta1 = h[1];
        opt.beta2 = h[2];
        opt.eps = h[3];
        opt.t = h[4] as u64;
        let mut i = 0;
        while let (Some(m), Some(v)) = (ckpt.get(&format!("{prefix}m/{i}")), ckpt.get(&format!("{prefix}v/{i}"))) {
            opt.first.push(m.clone());
            opt.second.push(v.clone());
            i += 1;
        }
        Ok(opt)
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        ensure_slots(&mut self.first, params)?;
        ensure_slots(&mut self.second, params)?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in params.params_mut().iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grads = p.grad.data();
            for (j, &g) in grads.iter().enumerate() {
                let mj = &mut m.data_mut()[j];
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * g;
                let vj = &mut v.data_mut()[j];
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * g * g;
            }
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let mhat = m.data()[j] / bc1;
                let vhat = v.data()[j] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }

    fn lr(&self) -> f64 {
        self.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn steps(&self) -> u64 {
        self.t
    }
}

/// RMSProp: `s ← ρ·s + (1−ρ)·g²`, `p ← p − lr·g/√(s + ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    mean_square: Vec<Tensor>,
    t: u64,
}

impl RmsProp {
    pub fn new(lr: f64) -> Result<Self> {
        check_lr(lr)?;
        Ok(Self {
            lr,
            decay: 0.99,
            eps: 1e-8,
            mean_square: Vec::new(),
            t: 0,
        })
    }

    pub fn save(&self, ckpt: &mut Checkpoint, prefix: &str) {
        ckpt.push(format!("{prefix}hyper"), Tensor::new(vec![4], vec![self.lr, self.decay, self.eps, self.t as f64]).expect("4"));
        for (i, s) in self.mean_square.iter().enumerate() {
            ckpt.push(format!("{prefix}s/{i}"), s.clone());
        }
    }

    pub fn load(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let h = ckpt.require(&format!("{prefix}hyper"))?.data().to_vec();
        if h.len() != 4 {
            return Err(Error::Checkpoint("rmsprop hyper record must hold 4 values".into()));
        }
        let mut opt = RmsProp::new(h[0])?;
        opt.decay = h[1];
        opt.eps = h[2];
        opt.t = h[3] as u64;
        let mut i = 0;
        while let Some(s) = ckpt.get(&format!("{prefix}s/{i}")) {
            opt.mean_square.push(s.clone());
            i += 1;
        }
        Ok(opt)
    }
}

impl Optimizer for RmsProp {
    fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        ensure_slots(&mut self.mean_square, params)?;
        self.t += 1;
        for (p, s) in params.params_mut().iter_mut().zip(&mut self.mean_square) {
            let grads = p.grad.data().to_vec();
            for ((w, sj), g) in p.value.data_mut().iter_mut().zip(s.data_mut()).zip(grads) {
                *sj = self.decay * *sj + (1.0 - self.decay) * g * g;
                *w -= self.lr * g / (*sj + self.eps).sqrt();
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }

    fn lr(&self) -> f64 {
        self.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn steps(&self) -> u64 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.push_param("p", Tensor::scalar(v));
        s
    }

    fn set_grad(s: &mut ParamStore, g: f64) {
        s.get_mut("p").unwrap().grad.data_mut()[0] = g;
    }

    fn value(s: &ParamStore) -> f64 {
        s.get("p").unwrap().value.data()[0]
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = scalar_store(0.3);
        let mut adam = Adam::new(1e-3).unwrap();
        let mut rms = RmsProp::new(1e-3).unwrap();
        for _ in 0..3 {
            adam.step(&mut s).unwrap();
            rms.step(&mut s).unwrap();
        }
        assert_eq!(value(&s), 0.3);
    }

    #[test]
    fn adam_first_step_is_minus_lr() {
        // m̂ = g, v̂ = g² after bias correction, so Δ = −lr·g/(|g| + ε).
        let mut s = scalar_store(0.0);
        set_grad(&mut s, 1.0);
        let mut adam = Adam::new(1e-3).unwrap();
        adam.step(&mut s).unwrap();
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((value(&s) - expected).abs() < 1e-18);
        assert_eq!(s.get("p").unwrap().grad.data()[0], 0.0);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn rmsprop_first_step_closed_form() {
        let (lr, g) = (5e-5, 0.3);
        let mut s = scalar_store(1.0);
        set_grad(&mut s, g);
        let mut rms = RmsProp::new(lr).unwrap();
        rms.step(&mut s).unwrap();
        let expected = 1.0 - lr * g / ((1.0 - 0.99) * g * g + 1e-8f64).sqrt();
        assert!((value(&s) - expected).abs() < 1e-15);
        // ≈ −lr/√(1−ρ), sign of g
        assert!(((value(&s) - 1.0) + lr / 0.1).abs() < 1e-7);
    }

    #[test]
    fn schedules() {
        let halve = LrSchedule::HalveEvery { every: 20 };
        assert_eq!(halve.lr_at(0.001, 19), 0.001);
        assert_eq!(halve.lr_at(0.001, 20), 0.0005);
        assert_eq!(halve.lr_at(0.001, 45), 0.00025);
        let lin = LrSchedule::LinearDecay { start_epoch: 10, total_epochs: 30 };
        assert_eq!(lin.lr_at(4e-4, 9), 4e-4);
        assert_eq!(lin.lr_at(4e-4, 10), 4e-4);
        assert!((lin.lr_at(4e-4, 20) - 2e-4).abs() < 1e-18);
        assert!(lin.lr_at(4e-4, 29) > 0.0);
        assert_eq!(LrSchedule::Constant.lr_at(1.0, 1000), 1.0);
    }

    #[test]
    fn rejects_negative_or_non_finite_lr() {
        assert!(Adam::new(0.0).is_ok());
        assert!(Adam::new(f64::NAN).is_err());
        assert!(RmsProp::new(-1.0).is_err());
    }

    #[test]
    fn rmsprop_state_round_trips_bit_exact() {
        let mut s = scalar_store(1.0);
        set_grad(&mut s, 0.25);
        let mut rms = RmsProp::new(0.00005).unwrap();
        rms.step(&mut s).unwrap();
        let mut ckpt = Checkpoint::new();
        rms.save(&mut ckpt, "opt/");
        let back = RmsProp::load(&Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap(), "opt/").unwrap();
        assert_eq!(back.lr.to_bits(), 0.00005f64.to_bits());
        assert_eq!(back, rms);
    }

    #[test]
    fn adam_state_round_trips() {
        let mut s = scalar_store(1.0);
        set_grad(&mut s, -2.0);
        let mut adam = Adam::new(4e-4).unwrap();
        adam.step(&mut s).unwrap();
        let mut ckpt = Checkpoint::new();
        adam.save(&mut ckpt, "a/");
        assert_eq!(Adam::load(&ckpt, "a/").unwrap(), adam);
    }
}
