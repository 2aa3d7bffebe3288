//! Adam with bias correction, one optimizer state per parameter store.

use super::store::{ParamId, ParamStore};
use super::tensor::Tensor;

/// First/second moment estimates for every slot of one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self::with_betas(store, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let m = store.ids().map(|id| Tensor::zeros(store.value(id).shape().to_vec())).collect();
        let v = store.ids().map(|id| Tensor::zeros(store.value(id).shape().to_vec())).collect();
        AdamState { lr, beta1, beta2, eps, t: 0, m, v }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update from the store's accumulated gradients, which are zeroed
    /// afterwards so the next step starts clean.
    pub fn step(&mut self, store: &mut ParamStore) {
        assert_eq!(self.m.len(), store.len(), "optimizer state does not match store");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<ParamId> = store.ids().collect();
        for (slot, id) in ids.into_iter().enumerate() {
            let grad = store.grad(id).clone();
            for ((m, v), g) in self.m[slot]
                .data_mut()
                .iter_mut()
                .zip(self.v[slot].data_mut())
                .zip(grad.data())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            }
            let (ms, vs) = (&self.m[slot], &self.v[slot]);
            for ((x, m), v) in store.value_mut(id).data_mut().iter_mut().zip(ms.data()).zip(vs.data()) {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
    }
}
