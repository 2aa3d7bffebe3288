//! Model-error bonus attached to each stored transition.
//!
//! The frozen transition model predicts the step; half the squared
//! residual in raw state units, scaled by `eta`, becomes an intrinsic
//! reward. The curiosity variant pays for being wrong, driving the agent
//! toward transitions the model has not captured; the introspective
//! variant charges for it, keeping the agent where its model is reliable.
//! The plain variant gets exactly zero so the reward channel is
//! bit-identical to running without a model at all.

use super::RlVariant;
use crate::cinn::{CinnError, FrozenCinn};

pub fn intrinsic_reward(
    model: &FrozenCinn,
    s: &[f64],
    a: &[f64],
    s_next: &[f64],
    eta: f64,
    variant: RlVariant,
) -> Result<f64, CinnError> {
    let sign = match variant {
        RlVariant::Sac => return Ok(0.0),
        RlVariant::SacIcm => 1.0,
        RlVariant::SacCinn => -1.0,
    };
    let pred = model.forward(s, a)?;
    let half_err: f64 = s_next
        .iter()
        .zip(&pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        * 0.5
        * eta;
    Ok(sign * half_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::{plan_structure, topo_layering};
    use crate::cinn::{CinnConfig, CinnModel};
    use crate::glucosim::{Environment, ToyEnv};
    use approx::assert_abs_diff_eq;

    fn toy_model() -> FrozenCinn {
        let dag = ToyEnv::new().causal_graph();
        let plan = plan_structure(&dag, &topo_layering(&dag).unwrap()).unwrap();
        FrozenCinn::new(CinnModel::new(plan, CinnConfig::default(), 9)).unwrap()
    }

    #[test]
    fn a_perfectly_predicted_step_earns_nothing() {
        let m = toy_model();
        let s = vec![100.0, 1.0, 0.5, 10.0, 5.0, 2.0];
        let a = [1.5, 0.5];
        let pred = m.forward(&s, &a).unwrap();
        let r = intrinsic_reward(&m, &s, &a, &pred, 1.0, RlVariant::SacCinn).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn unit_residual_in_every_dimension_is_worth_three() {
        let m = toy_model();
        let s = vec![100.0, 1.0, 0.5, 10.0, 5.0, 2.0];
        let a = [1.5, 0.5];
        let off: Vec<f64> = m.forward(&s, &a).unwrap().iter().map(|p| p + 1.0).collect();
        let cinn = intrinsic_reward(&m, &s, &a, &off, 1.0, RlVariant::SacCinn).unwrap();
        let icm = intrinsic_reward(&m, &s, &a, &off, 1.0, RlVariant::SacIcm).unwrap();
        assert_abs_diff_eq!(cinn, -3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(icm, 3.0, epsilon = 1e-9);
        assert_eq!(cinn, -icm);
    }

    #[test]
    fn the_bonus_is_linear_in_eta() {
        let m = toy_model();
        let s = vec![90.0, 0.2, 0.1, 8.0, 4.0, 1.0];
        let a = [2.0, 1.0];
        let t = vec![95.0, 0.3, 0.2, 7.0, 4.5, 1.5];
        let r1 = intrinsic_reward(&m, &s, &a, &t, 1.0, RlVariant::SacIcm).unwrap();
        let r2 = intrinsic_reward(&m, &s, &a, &t, 2.0, RlVariant::SacIcm).unwrap();
        assert_eq!(r2, 2.0 * r1);
    }

    #[test]
    fn the_plain_variant_pays_exactly_zero() {
        let m = toy_model();
        let s = vec![100.0, 1.0, 0.5, 10.0, 5.0, 2.0];
        let r = intrinsic_reward(&m, &s, &[3.0, 2.0], &[0.0; 6], 5.0, RlVariant::Sac).unwrap();
        assert_eq!(r, 0.0);
    }
}
