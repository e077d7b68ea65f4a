//! AdamW with decoupled weight decay.

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 0.003,
            weight_decay: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamW {
    /// Optimizer without moment buffers; call [`AdamW::init`] before stepping.
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn for_params(config: AdamWConfig, store: &ParamStore) -> Self {
        let mut opt = Self::new(config);
        opt.init(store);
        opt
    }

    /// Allocates zeroed moments matching every parameter in `store`.
    pub fn init(&mut self, store: &ParamStore) {
        self.step = 0;
        self.first = store
            .ids()
            .map(|id| {
                let (r, c) = store.value(id).shape();
                Tensor::zeros(r, c)
            })
            .collect();
        self.second = self.first.clone();
    }

    /// Restores saved moments; shapes are validated on the next step.
    pub fn from_state(config: AdamWConfig, step: u64, first: Vec<Tensor>, second: Vec<Tensor>) -> Self {
        Self {
            config,
            step,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    /// One update using the gradients currently stored in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.first.len() != store.len() || self.second.len() != store.len() {
            return Err(TensorError::State(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            let shape = store.value(id).shape();
            if self.first[id.index()].shape() != shape || self.second[id.index()].shape() != shape {
                return Err(TensorError::State(format!("moment shape mismatch for {}", store.name(id))));
            }
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;
        for id in store.ids() {
            let grad = store.grad(id).clone();
            let m = self.first[id.index()].data_mut();
            let v = self.second[id.index()].data_mut();
            let p = store.value_mut(id).data_mut();
            for i in 0..p.len() {
                let g = grad.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64, g: f64) -> (ParamStore, crate::params::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::scalar(p));
        store.grad_mut(id).data_mut()[0] = g;
        (store, id)
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let (mut store, id) = scalar_store(0.7, 0.0);
        let mut opt = AdamW::for_params(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &store);
        for _ in 0..5 {
            opt.step(&mut store).unwrap();
        }
        assert_eq!(store.value(id).item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut store, id) = scalar_store(1.0, 1.0);
        let mut opt = AdamW::for_params(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &store);
        opt.step(&mut store).unwrap();
        // m_hat = v_hat = 1 after bias correction.
        let expected = 1.0 - 0.003 / (1.0 + 1e-8);
        assert!((store.value(id).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks_geometrically() {
        let (mut store, id) = scalar_store(2.0, 0.0);
        let mut opt = AdamW::for_params(AdamWConfig::default(), &store);
        for _ in 0..3 {
            opt.step(&mut store).unwrap();
        }
        let factor: f64 = 1.0 - 0.003 * 0.005;
        assert!((store.value(id).item() - 2.0 * factor.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn uninitialized_state_is_rejected() {
        let (mut store, _) = scalar_store(1.0, 1.0);
        let mut opt = AdamW::new(AdamWConfig::default());
        assert!(matches!(opt.step(&mut store), Err(TensorError::State(_))));
        assert_eq!(opt.step_count(), 0);
    }
}
