//! Parameter storage shared between tapes and the optimizer.
//!
//! Parameters live outside any tape so that values persist across training
//! steps while tapes stay throwaway. A store is one optimization group: the
//! invertible model owns one, the policy another, the critics a third, and
//! each gets stepped by its own [`super::AdamState`].

use super::Tensor;
use sha2::{Digest, Sha256};

/// Handle to one parameter slot inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Slot {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named parameters with accumulated gradients.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names are for checkpoints and diagnostics and
    /// must be unique within the store.
    pub fn alloc(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.slots.iter().all(|s| s.name != name),
            "duplicate parameter name {name:?}"
        );
        let grad = Tensor::zeros(value.shape().to_vec());
        self.slots.push(Slot { name, value, grad });
        ParamId(self.slots.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.slots.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].grad
    }

    /// Adds `delta` into the slot's gradient. Called by [`super::Tape::backward`];
    /// repeated backward passes accumulate.
    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &Tensor) {
        let slot = &mut self.slots[id.0];
        let grad = &mut slot.grad;
        assert_eq!(grad.shape(), delta.shape(), "gradient shape mismatch for {}", slot.name);
        for (g, d) in grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
    }

    pub fn zero_grads(&mut self) {
        for slot in &mut self.slots {
            slot.grad.data_mut().fill(0.0);
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.slots.len()).map(ParamId)
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    /// SHA-256 over every parameter's exact bit pattern, in allocation order.
    /// Two stores hash equal iff their values are bitwise identical; used to
    /// prove a frozen model was not touched by later training.
    pub fn value_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for slot in &self.slots {
            hasher.update(slot.name.as_bytes());
            for x in slot.value.data() {
                hasher.update(x.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grads_accumulate_and_zero() {
        let mut store = ParamStore::new();
        let id = store.alloc("w", Tensor::vector(vec![1.0, 2.0]));
        store.accumulate_grad(id, &Tensor::vector(vec![0.5, 0.5]));
        store.accumulate_grad(id, &Tensor::vector(vec![0.5, 0.5]));
        assert_eq!(store.grad(id).data(), &[1.0, 1.0]);
        store.zero_grads();
        assert_eq!(store.grad(id).data(), &[0.0, 0.0]);
    }

    #[test]
    fn hash_tracks_value_bits() {
        let mut a = ParamStore::new();
        let id = a.alloc("w", Tensor::vector(vec![1.0]));
        let before = a.value_hash();
        assert_eq!(before, a.value_hash());
        let x = &mut a.value_mut(id).data_mut()[0];
        *x = f64::from_bits(x.to_bits() ^ 1);
        assert_ne!(before, a.value_hash());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.alloc("w", Tensor::scalar(0.0));
        store.alloc("w", Tensor::scalar(1.0));
    }
}
