//! Named parameter store with Adam state.
//!
//! Models hold [`ParamId`]s; values live here so tapes can lease snapshots and
//! the optimizer can update everything in one place. Moment buffers and step
//! counters ride along with each parameter and round-trip through checkpoints.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct ParamId(pub(crate) usize);

pub struct ParamSlot<T: Element> {
    name: String,
    value: Tensor<T>,
    grad: Vec<T>,
    m1: Vec<T>,
    m2: Vec<T>,
    step: u64,
}

impl<T: Element> ParamSlot<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Adam hyperparameters. beta1=0.5 is the usual GAN setting; the paper only
/// pins the learning rate.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Default)]
pub struct ParamStore<T: Element> {
    slots: Vec<ParamSlot<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { slots: Vec::new() }
    }

    /// Register a parameter under a unique name. Moments start at zero.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.slots.iter().all(|s| s.name != name),
            "duplicate parameter name {name}"
        );
        let n = value.shape().numel();
        self.slots.push(ParamSlot {
            name,
            value,
            grad: vec![T::zero(); n],
            m1: vec![T::zero(); n],
            m2: vec![T::zero(); n],
            step: 0,
        });
        ParamId(self.slots.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn slot(&self, id: ParamId) -> &ParamSlot<T> {
        &self.slots[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.slots[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(self.slots[id.0].value.shape(), value.shape(), "parameter reshape");
        self.slots[id.0].value = value;
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.slots[id.0].grad
    }

    pub fn add_grad(&mut self, id: ParamId, g: &[T]) {
        let slot = &mut self.slots[id.0];
        debug_assert_eq!(slot.grad.len(), g.len());
        for (a, b) in slot.grad.iter_mut().zip(g) {
            *a = *a + *b;
        }
    }

    pub fn zero_grad(&mut self, ids: &[ParamId]) {
        for id in ids {
            self.slots[id.0].grad.fill(T::zero());
        }
    }

    pub fn zero_grad_all(&mut self) {
        for slot in &mut self.slots {
            slot.grad.fill(T::zero());
        }
    }

    pub fn grads_all_zero(&self, ids: &[ParamId]) -> bool {
        ids.iter().all(|id| self.slots[id.0].grad.iter().all(|v| *v == T::zero()))
    }

    /// One Adam update with bias correction over the given parameters.
    /// Gradients are left in place; call [`ParamStore::zero_grad`] explicitly.
    pub fn adam_step(&mut self, ids: &[ParamId], cfg: AdamConfig) {
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let lr = T::from_f64(cfg.lr);
        let eps = T::from_f64(cfg.eps);
        for id in ids {
            let slot = &mut self.slots[id.0];
            slot.step += 1;
            let t = slot.step as i32;
            let c1 = T::one() - T::from_f64(cfg.beta1.powi(t));
            let c2 = T::one() - T::from_f64(cfg.beta2.powi(t));
            let data = slot.value.make_mut();
            for i in 0..data.len() {
                let g = slot.grad[i];
                slot.m1[i] = b1 * slot.m1[i] + (T::one() - b1) * g;
                slot.m2[i] = b2 * slot.m2[i] + (T::one() - b2) * g * g;
                let mhat = slot.m1[i] / c1;
                let vhat = slot.m2[i] / c2;
                data[i] = data[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    /// Raw optimizer state access for checkpointing.
    pub fn state(&self, id: ParamId) -> (&[T], &[T], u64) {
        let s = &self.slots[id.0];
        (&s.m1, &s.m2, s.step)
    }

    pub fn restore_state(&mut self, id: ParamId, m1: &[T], m2: &[T], step: u64) -> Result<()> {
        let slot = &mut self.slots[id.0];
        if m1.len() != slot.m1.len() || m2.len() != slot.m2.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer state length mismatch for {}",
                slot.name
            )));
        }
        slot.m1.copy_from_slice(m1);
        slot.m2.copy_from_slice(m2);
        slot.step = step;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.slots.iter().position(|s| s.name == name).map(ParamId)
    }
}

/// Convenience: register a conv weight with DCGAN-style N(0, 0.02) init.
pub fn init_conv_weight<T: Element>(
    store: &mut ParamStore<T>,
    name: impl Into<String>,
    shape: Shape,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> ParamId {
    store.register(name, Tensor::rand_normal(shape, 0.0, 0.02, rng))
}

/// Zero-initialized bias of `c` channels.
pub fn init_bias<T: Element>(
    store: &mut ParamStore<T>,
    name: impl Into<String>,
    c: usize,
) -> ParamId {
    store.register(name, Tensor::zeros(Shape::new(1, c, 1, 1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_step_leaves_fresh_param_unchanged() {
        let mut store = ParamStore::<f32>::new();
        let p = store.register("w", Tensor::full(Shape::new(1, 1, 1, 1), 3.0));
        store.adam_step(&[p], AdamConfig::default());
        assert_eq!(store.value(p).data(), &[3.0]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // grad = 1 constant: mhat = 1, vhat = 1 -> delta = -lr/(1+eps) ~ -lr.
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut store = ParamStore::<f32>::new();
        let p = store.register("w", Tensor::scalar(0.0));
        store.add_grad(p, &[1.0]);
        store.adam_step(&[p], cfg);
        let v = store.value(p).data()[0];
        assert!((v + 0.1).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn adam_is_deterministic_across_runs() {
        let run = || {
            let mut store = ParamStore::<f32>::new();
            let p = store.register("w", Tensor::scalar(1.0));
            for k in 0..25 {
                store.add_grad(p, &[0.3 + 0.01 * k as f32]);
                store.adam_step(&[p], AdamConfig::default());
                store.zero_grad(&[p]);
            }
            store.value(p).data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn grad_accumulates_until_zeroed() {
        let mut store = ParamStore::<f32>::new();
        let p = store.register("w", Tensor::scalar(0.0));
        store.add_grad(p, &[1.0]);
        store.add_grad(p, &[2.0]);
        assert_eq!(store.grad(p), &[3.0]);
        store.zero_grad(&[p]);
        assert_eq!(store.grad(p), &[0.0]);
    }
}
