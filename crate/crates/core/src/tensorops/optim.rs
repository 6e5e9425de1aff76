use serde::{Deserialize, Serialize};

use crate::real::Real;

use super::ParamTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

/// Adaptive moment estimation with decoupled weight decay.
///
/// Moment buffers are matched to parameters by position, so every call to
/// [`AdamW::step`] must pass the parameters in the same order.
#[derive(Clone, Debug)]
pub struct AdamW<T = f32> {
    pub config: AdamWConfig,
    pub steps: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW { config, steps: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut ParamTensor<T>>) {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let decay = T::lit(1.0 - c.lr * c.weight_decay);
        let lr = T::lit(c.lr);
        let (bc1, bc2_sqrt) = (T::lit(bc1), T::lit(bc2.sqrt()));
        let eps = T::lit(c.eps);
        for (slot, p) in params.into_iter().enumerate() {
            if slot == self.first.len() {
                self.first.push(vec![T::zero(); p.len()]);
                self.second.push(vec![T::zero(); p.len()]);
            }
            if !p.requires_grad {
                continue;
            }
            let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
            assert_eq!(m.len(), p.len(), "optimizer state does not match parameter {}", slot);
            for (((w, &g), m), v) in p.values.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let denom = v.sqrt() / bc2_sqrt + eps;
                *w = *w * decay - lr * m_hat / denom;
            }
        }
    }
}
