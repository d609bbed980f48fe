//! Adam with a step-decay learning-rate schedule.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::model::NetworkParameters;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::OutOfRange {
                name: "lr",
                value: self.lr,
            });
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::OutOfRange { name, value: v });
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::OutOfRange {
                name: "eps",
                value: self.eps,
            });
        }
        Ok(())
    }
}

/// Learning rate divided by `factor` once each milestone epoch has completed.
///
/// Epochs are 1-based: with milestone 30, epoch 31 is the first to run at
/// `base / factor`.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch > m).count();
        self.base / self.factor.powi(passed as i32)
    }
}

/// Adam moment estimates, laid out like the parameters they track.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: NetworkParameters<f32>,
    pub v: NetworkParameters<f32>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &NetworkParameters<f32>) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One bias-corrected update at learning rate `lr`.
    pub fn update(
        &mut self,
        params: &mut NetworkParameters<f32>,
        grads: &NetworkParameters<f32>,
        lr: f64,
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients"));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = (lr * bc2.sqrt() / bc1) as f32;
        let eps_hat = (c.eps * bc2.sqrt()) as f32;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let tensors = params.tensors_mut().iter_mut();
        let moments = self.m.tensors_mut().iter_mut().zip(self.v.tensors_mut().iter_mut());
        for ((p, g), (m, v)) in tensors.zip(grads.tensors()).zip(moments) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                p.data[i] -= step_size * m.data[i] / (v.data[i].sqrt() + eps_hat);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchConfig, NetworkKind};

    #[test]
    fn schedule_milestones() {
        let s = LrSchedule {
            base: 1e-4,
            milestones: alloc::vec![30, 40],
            factor: 10.0,
        };
        assert_eq!(s.lr_at(1), 1e-4);
        assert_eq!(s.lr_at(30), 1e-4);
        assert!((s.lr_at(31) - 1e-5).abs() < 1e-18);
        assert!((s.lr_at(41) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let arch = ArchConfig {
            widths: [2, 2, 2],
            classes: 2,
            ..ArchConfig::default()
        };
        let mut p = NetworkParameters::<f32>::zeros(NetworkKind::Student, arch);
        let mut g = p.zeros_like();
        for t in g.tensors_mut() {
            t.data.fill(3.0);
        }
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.update(&mut p, &g, 1e-2).unwrap();
        for t in p.tensors() {
            assert!(t.data.iter().all(|&v| (v + 1e-2).abs() < 1e-7));
        }
    }
}
