use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "adam betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "adam eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay. Non-trainable tensors are skipped.
#[derive(Debug, Clone)]
pub struct AdamW {
    params: AdamParams,
    weight_decay: f64,
    t: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, params: AdamParams, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .params()
            .iter()
            .map(|p| vec![0.0; p.value.len()])
            .collect();
        AdamW {
            params,
            weight_decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::State("optimizer built for a different model".into()));
        }
        self.t += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for ((p, g), (m, v)) in store
            .values_and_grads_mut()?
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if !p.trainable {
                continue;
            }
            for (((w, &g), m), v) in p
                .value
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let step = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *w = *w * decay - lr * step;
            }
        }
        Ok(())
    }
}
