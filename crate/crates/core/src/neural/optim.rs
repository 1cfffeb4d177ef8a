//! AdamW and the EMA shadow update.

use super::tape::{Grads, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr` (the schedule lives with the caller).
    pub fn update(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, t) in params.tensors_mut().iter_mut().enumerate() {
            let g = &grads.tensors[k].data;
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..t.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                t.data[i] -= lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * t.data[i]);
            }
        }
    }
}

/// `ema = decay * ema + (1 - decay) * params`
pub fn ema_update(ema: &mut ParamStore, params: &ParamStore, decay: f64) {
    for (e, p) in ema.tensors_mut().iter_mut().zip(params.tensors()) {
        for (a, b) in e.data.iter_mut().zip(&p.data) {
            *a = decay * *a + (1.0 - decay) * b;
        }
    }
}

/// Rounds every value to the nearest `f32`, matching the checkpoint
/// precision.
pub fn round_to_f32(ps: &mut ParamStore) {
    for t in ps.tensors_mut() {
        t.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
}
