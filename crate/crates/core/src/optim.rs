//! SGD with momentum, ADAM, and the step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::GradientSet;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgdm { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const SGDM: Self = Self::Sgdm { momentum: 0.9 };
    pub const ADAM: Self = Self::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl OptimizerConfig {
    pub fn sgdm(lr0: f64) -> Self {
        Self {
            kind: OptimizerKind::SGDM,
            lr0,
            decay_factor: 0.1,
            decay_every: 10,
        }
    }

    pub fn adam(lr0: f64) -> Self {
        Self {
            kind: OptimizerKind::ADAM,
            lr0,
            decay_factor: 0.1,
            decay_every: 10,
        }
    }

    /// Learning rate for a zero-based epoch: `lr0 · factor^⌊epoch / every⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = epoch.checked_div(self.decay_every).unwrap_or(0);
        self.lr0 * self.decay_factor.powi(drops as i32)
    }
}

/// Per-parameter optimizer state, one slot set per parameter tensor.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Real> {
    config: OptimizerConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    steps: u64,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &[&Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        let second = match config.kind {
            OptimizerKind::Adam { .. } => zeros(),
            OptimizerKind::Sgdm { .. } => Vec::new(),
        };
        Self {
            config,
            first: zeros(),
            second,
            steps: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &GradientSet<T>, lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Dimension(format!(
                "optimizer holds {} slots, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(&grads.tensors) {
            if p.shape() != g.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.steps += 1;
        let lr_t = T::of(lr);
        match self.config.kind {
            OptimizerKind::Sgdm { momentum } => {
                let mu = T::of(momentum);
                for ((p, g), v) in params.into_iter().zip(&grads.tensors).zip(&mut self.first) {
                    for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *vv = mu * *vv - lr_t * *gv;
                        *pv += *vv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = T::of(1.0 - beta1.powi(t));
                let c2 = T::of(1.0 - beta2.powi(t));
                let (b1, b2, e) = (T::of(beta1), T::of(beta2), T::of(eps));
                let one = T::one();
                for (((p, g), m), s) in params
                    .into_iter()
                    .zip(&grads.tensors)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pv, gv), mv), sv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(s.data_mut())
                    {
                        *mv = b1 * *mv + (one - b1) * *gv;
                        *sv = b2 * *sv + (one - b2) * *gv * *gv;
                        let m_hat = *mv / c1;
                        let s_hat = *sv / c2;
                        *pv -= lr_t * m_hat / (s_hat.sqrt() + e);
                    }
                }
            }
        }
        Ok(())
    }
}
