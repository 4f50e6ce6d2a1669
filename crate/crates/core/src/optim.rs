//! Adam over a [`ParamStore`], with moment buffers exposed for checkpoints.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale gradients so their global L2 norm is at most this value.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamStore) -> Result<Self> {
        let mut m = BTreeMap::new();
        for (name, var) in params.vars() {
            m.insert(name.clone(), var.as_tensor().zeros_like()?);
        }
        Ok(Self { cfg, v: m.clone(), m, steps: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Global L2 norm of the gradients present in `grads`.
    pub fn grad_norm(params: &ParamStore, grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0;
        for var in params.vars().values() {
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            }
        }
        Ok(sq.sqrt())
    }

    /// One update at learning rate `lr`. Parameters without a gradient keep
    /// their value and moments.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.steps += 1;
        let scale = match self.cfg.clip_norm {
            Some(c) => {
                let n = Self::grad_norm(params, grads)?;
                if n > c { c / n } else { 1.0 }
            }
            None => 1.0,
        };
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let t = self.steps as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (name, var) in params.vars() {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            // detached so the moments do not keep the step's graph alive
            let g = g.detach();
            let g = if scale != 1.0 { (g * scale)? } else { g };
            let m = self.m.get_mut(name).ok_or_else(|| Error::Checkpoint(format!("no moment for `{name}`")))?;
            *m = ((&*m * b1)? + (&g * (1.0 - b1))?)?;
            let v = self.v.get_mut(name).ok_or_else(|| Error::Checkpoint(format!("no moment for `{name}`")))?;
            *v = ((&*v * b2)? + (g.sqr()? * (1.0 - b2))?)?;
            let m_hat = (&*m / c1)?;
            let v_hat = (&*v / c2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.cfg.eps)?)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
        }
        Ok(())
    }

    /// Moment tensors under `optim.m.<param>` and `optim.v.<param>`.
    pub fn state_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (k, t) in &self.m {
            out.insert(format!("optim.m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("optim.v.{k}"), t.clone());
        }
        out
    }

    pub fn load_state(&mut self, tensors: &BTreeMap<String, Tensor>, steps: u64) -> Result<()> {
        for (prefix, store) in [("optim.m.", &mut self.m), ("optim.v.", &mut self.v)] {
            for (k, t) in store.iter_mut() {
                let key = format!("{prefix}{k}");
                let src = tensors.get(&key).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
                if src.dims() != t.dims() {
                    return Err(Error::Checkpoint(format!("tensor `{key}` has shape {:?}, expected {:?}", src.dims(), t.dims())));
                }
                *t = src.to_dtype(t.dtype())?;
            }
        }
        self.steps = steps;
        Ok(())
    }
}
