//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 2e-2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW<T: Scalar> {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, params: &ParamStore<T>) -> Result<Self> {
        if !(cfg.lr > 0.0 && cfg.eps > 0.0 && cfg.weight_decay >= 0.0)
            || !(0.0..1.0).contains(&cfg.beta1)
            || !(0.0..1.0).contains(&cfg.beta2)
        {
            return Err(Error::Config(format!("invalid optimizer settings {cfg:?}")));
        }
        let zeros = || params.ids().map(|id| vec![T::zero(); params.get(id).numel()]).collect();
        Ok(AdamW {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from the accumulated `grad` buffers, each multiplied by
    /// `grad_scale` first. Parameters without a gradient are left alone.
    pub fn step(&mut self, params: &mut ParamStore<T>, grad_scale: f64) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let decay = T::of(1.0 - c.lr * c.weight_decay);
        let (lr, eps, scale) = (T::of(c.lr), T::of(c.eps), T::of(grad_scale));
        let (bc1, bc2) = (T::of(bc1), T::of(bc2));
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let t = params.get_mut(id);
            let Some(grad) = t.grad.take() else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, p) in t.data_mut().iter_mut().enumerate() {
                let g = grad[i] * scale;
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
            t.grad = Some(grad);
        }
    }
}
