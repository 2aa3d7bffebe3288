//! Small fully connected networks: affine layers interleaved with
//! leaky-ReLU.
//!
//! Whether the output layer is followed by the activation is a construction
//! flag rather than a second type; regression-style heads want it linear.

use super::store::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use super::NumError;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    dims: Vec<usize>,
    slope: f64,
    linear_output: bool,
}

impl Mlp {
    /// He-style init: weights N(0, 2/fan_in), zero biases. `dims` runs from
    /// input width to output width.
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        dims: &[usize],
        slope: f64,
        linear_output: bool,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                let w: Vec<f64> = (0..fan_in * fan_out)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        std * z
                    })
                    .collect();
                let wid = store.alloc(format!("{name}.w{i}"), Tensor::new(vec![fan_out, fan_in], w));
                let bid = store.alloc(format!("{name}.b{i}"), Tensor::zeros(vec![fan_out]));
                (wid, bid)
            })
            .collect();
        Mlp { layers, dims: dims.to_vec(), slope, linear_output }
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|(w, b)| [*w, *b])
    }

    /// Zeroes the last layer so the net starts as the constant zero map.
    /// Invertible couplings init this way to begin life as the identity.
    pub fn zero_output_layer(&self, store: &mut ParamStore) {
        let (w, b) = *self.layers.last().unwrap();
        store.value_mut(w).data_mut().fill(0.0);
        store.value_mut(b).data_mut().fill(0.0);
    }

    /// Records the network on the tape. `frozen` binds parameters as
    /// constants so no gradient reaches them.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        frozen: bool,
    ) -> Result<NodeId, NumError> {
        let mut h = x;
        for (layer, (wid, bid)) in self.layers.iter().enumerate() {
            let expected = self.dims[layer];
            let hv = tape.value(h);
            // rank-2 activations carry one sample per column
            let got = if hv.shape().len() == 2 { hv.rows() } else { hv.len() };
            if got != expected {
                return Err(NumError::LayerShape { layer, expected, got });
            }
            let w = if frozen { tape.frozen_param(store, *wid) } else { tape.param(store, *wid) };
            let b = if frozen { tape.frozen_param(store, *bid) } else { tape.param(store, *bid) };
            let wx = tape.matvec(w, h);
            h = tape.add(wx, b);
            let last = layer == self.layers.len() - 1;
            if !(last && self.linear_output) {
                h = tape.leaky_relu(h, self.slope);
            }
        }
        Ok(h)
    }

    /// Plain evaluation without recording gradients.
    pub fn eval(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor, NumError> {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let out = self.forward(&mut tape, store, xn, true)?;
        Ok(tape.value(out).clone())
    }
}
