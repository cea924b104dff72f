//! AdamW: Adam moments with weight decay applied directly to the weights
//! rather than folded into the gradient.

use crate::autodiff::{Gradients, ParamStore};
use crate::tensor::Tensor;

pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(store: &ParamStore, learning_rate: f64, weight_decay: f64) -> Self {
        let (m, v) = store
            .iter()
            .map(|(_, _, t)| (Tensor::zeros_like(t), Tensor::zeros_like(t)))
            .unzip();
        AdamW {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m,
            v,
        }
    }

    /// θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ, with bias-corrected moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let g = grads.get(id);
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let mut theta = store.get(id).clone();
            let (md, vd, gd, td) = (m.data_mut(), v.data_mut(), g.data(), theta.data_mut());
            for k in 0..td.len() {
                md[k] = self.beta1 * md[k] + (1.0 - self.beta1) * gd[k];
                vd[k] = self.beta2 * vd[k] + (1.0 - self.beta2) * gd[k] * gd[k];
                let m_hat = md[k] / bc1;
                let v_hat = vd[k] / bc2;
                td[k] -= self.learning_rate * (m_hat / (v_hat.sqrt() + self.eps))
                    + self.learning_rate * self.weight_decay * td[k];
            }
            store.set(id, theta);
        }
    }
}
