//! Adam and RMSProp over a [`ParamStore`].

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub betas: (f64, f64),
    /// Smoothing constant of RMSProp.
    pub alpha: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-4,
            betas: (0.5, 0.999),
            alpha: 0.99,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.betas.0)
            && (0.0..1.0).contains(&self.betas.1)
            && (0.0..1.0).contains(&self.alpha)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moment buffers of one network's optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| alloc::vec![T::zero(); t.len()]).collect();
        Self {
            config,
            step: 0,
            first: match config.kind {
                OptimizerKind::Adam => zeros(),
                OptimizerKind::Rmsprop => Vec::new(),
            },
            second: zeros(),
        }
    }

    /// Rebuilds an optimizer from saved moment buffers.
    pub fn from_parts(config: OptimizerConfig, step: u64, first: Vec<Vec<T>>, second: Vec<Vec<T>>) -> Result<Self> {
        let expect_first = match config.kind {
            OptimizerKind::Adam => second.len(),
            OptimizerKind::Rmsprop => 0,
        };
        if first.len() != expect_first {
            return Err(Error::Dimension {
                axis: "moment buffer",
                expected: expect_first,
                found: first.len(),
            });
        }
        Ok(Self {
            config,
            step,
            first,
            second,
        })
    }

    /// First (Adam only) and second moment buffers, one per parameter tensor.
    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.first, &self.second)
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.second.len() != params.len() {
            return Err(Error::Dimension {
                axis: "parameter",
                expected: params.len(),
                found: grads.len(),
            });
        }
        self.step += 1;
        let c = self.config;
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.eps);
        match c.kind {
            OptimizerKind::Adam => {
                let (b1, b2) = (T::from_f64(c.betas.0), T::from_f64(c.betas.1));
                let t = self.step as i32;
                let bc1 = T::one() - T::from_f64(libm::pow(c.betas.0, t as f64));
                let bc2 = T::one() - T::from_f64(libm::pow(c.betas.1, t as f64));
                for (k, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Rmsprop => {
                let a = T::from_f64(c.alpha);
                for (k, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
                    let v = &mut self.second[k];
                    for ((w, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *v = a * *v + (T::one() - a) * g * g;
                        *w -= lr * g / (v.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
