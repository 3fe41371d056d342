//! Adam / AdamW with bias correction and decoupled weight decay.

use crate::error::{ModelError, Result};
use indexmap::IndexMap;
use vsr_core::grad::Gradients;
use vsr_core::store::ParameterStore;
use vsr_core::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimMode {
    Adam,
    /// Decoupled decay p <- p - lr*wd*p applied before the Adam delta.
    AdamW { weight_decay: f64 },
}

#[derive(Debug)]
pub struct Optimizer {
    pub mode: OptimMode,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn new(mode: OptimMode, beta1: f64, beta2: f64, eps: f64) -> Self {
        Optimizer { mode, beta1, beta2, eps, t: 0, m: IndexMap::new(), v: IndexMap::new() }
    }

    /// Pretext/sentence settings: Adam(0.9, 0.98, 1e-9).
    pub fn adam_seq() -> Self {
        Self::new(OptimMode::Adam, 0.9, 0.98, 1e-9)
    }

    /// Word-level settings: AdamW(0.9, 0.999, 1e-8, wd 0.01).
    pub fn adamw_word() -> Self {
        Self::new(OptimMode::AdamW { weight_decay: 0.01 }, 0.9, 0.999, 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over every parameter accepted by `trainable`.
    /// Non-finite gradients abort, naming the parameter.
    pub fn step(
        &mut self,
        params: &mut ParameterStore,
        grads: &Gradients<f32>,
        lr: f64,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
        for name in names {
            if !trainable(&name) {
                continue;
            }
            let Some(g) = grads.get(&name) else { continue };
            if let Some(bad) = g.data().iter().find(|v| !v.is_finite()) {
                let _ = bad;
                return Err(ModelError::NonFiniteGradient(name));
            }
            let mut p: Tensor<f32> = params.get_tensor(&name)?;
            let n = p.numel();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            if let OptimMode::AdamW { weight_decay } = self.mode {
                for x in p.data_mut() {
                    *x -= (lr * weight_decay * (*x as f64)) as f32;
                }
            }
            for i in 0..n {
                let gi = g.data()[i] as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data_mut()[i] -= (lr * mh / (vh.sqrt() + self.eps)) as f32;
            }
            params.set(&name, vsr_core::TensorData::from_tensor(p))?;
        }
        Ok(())
    }
}
