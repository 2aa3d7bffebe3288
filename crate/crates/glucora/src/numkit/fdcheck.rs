//! Central finite-difference audit of tape gradients.
//!
//! Rebuilds the same scalar graph with each parameter entry nudged by
//! `+/- h` and compares the quotient against what `backward` reported. This
//! is the independent check that every pullback in [`super::Tape`] and every
//! composite built on top of it differentiates what it evaluates.

use super::store::ParamStore;
use super::tape::{NodeId, Tape};
use super::NumError;

/// Relative error floor: differences below `REL_FLOOR * REL_TOL` in absolute
/// terms are treated as matching regardless of scale.
pub const REL_FLOOR: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Worst relative error between tape gradients and central differences over
/// every entry of every parameter in `store`. `build` must record the same
/// scalar loss each time it is called; it sees the store's current values.
pub fn worst_grad_rel_err(
    store: &mut ParamStore,
    mut build: impl FnMut(&mut Tape, &ParamStore) -> NodeId,
) -> Result<f64, NumError> {
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).data().to_vec()).collect();
    drop(tape);

    let eval = |store: &ParamStore, build: &mut dyn FnMut(&mut Tape, &ParamStore) -> NodeId| {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store);
        tape.value(loss).item()
    };

    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for (slot, id) in ids.into_iter().enumerate() {
        for entry in 0..store.value(id).len() {
            let x0 = store.value(id).data()[entry];
            let h = 1e-5 * (1.0 + x0.abs());
            store.value_mut(id).data_mut()[entry] = x0 + h;
            let up = eval(store, &mut build);
            store.value_mut(id).data_mut()[entry] = x0 - h;
            let down = eval(store, &mut build);
            store.value_mut(id).data_mut()[entry] = x0;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[slot][entry], fd));
        }
    }
    store.zero_grads();
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{Mlp, ParamStore, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn mlp_loss_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mlp = Mlp::init(&mut store, &mut rng, "f", &[4, 8, 3], 0.01, false);
        let x = Tensor::vector((0..4).map(|_| rng.gen_range(-1.5..1.5)).collect());
        let y = Tensor::vector((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect());

        let worst = worst_grad_rel_err(&mut store, |tape, store| {
            let xn = tape.constant(x.clone());
            let yn = tape.constant(y.clone());
            let out = mlp.forward(tape, store, xn, false).unwrap();
            let d = tape.sub(out, yn);
            let sq = tape.mul(d, d);
            tape.mean(sq)
        })
        .unwrap();
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn deliberately_wrong_gradient_is_caught() {
        // The checker itself needs a failing case: differentiate f(w) = w^2
        // but compare against a graph computing w^2 + w, so the analytic and
        // numeric sides disagree.
        let mut store = ParamStore::new();
        let id = store.alloc("w", Tensor::scalar(0.7));
        let mut first = true;
        let worst = worst_grad_rel_err(&mut store, move |tape, store| {
            let w = tape.param(store, id);
            let sq = tape.mul(w, w);
            if first {
                first = false;
                sq
            } else {
                tape.add(sq, w)
            }
        })
        .unwrap();
        assert!(worst > 1e-2, "checker failed to flag a wrong gradient: {worst}");
    }
}
