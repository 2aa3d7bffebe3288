//! Six-variable linear patient.
//!
//! Small enough that the counterfactual action has a closed form, which
//! makes it the calibration target for everything the invertible model
//! claims to do. Dimension 0 plays the glucose role: insulin (action 0)
//! pushes it down, and the two action-driven dimensions fan out into the
//! mediated ones.

use super::{Environment, GlucosimError, StepResult};
use crate::causal::{CausalDag, NodeDef, NodeKind};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Linear structural equations over six state dims and two actions.
///
/// next[i] starts at alpha[i]·s[i]; the actions add beta[j]·a[j] into dims
/// 0 and 1; each mediation entry (to, from, gain) then adds gain·next[from]
/// in listing order, so sources must be listed before their dependents.
#[derive(Debug, Clone)]
pub struct ToyScm {
    pub alpha: [f64; 6],
    pub beta: [f64; 2],
    pub mediation: Vec<(usize, usize, f64)>,
}

impl ToyScm {
    /// The coefficients used everywhere in this crate. Self-persistence
    /// stays close to one so the final linear block's orthogonality
    /// constraint costs little approximation error on the pass-through
    /// dimensions.
    pub fn standard() -> Self {
        ToyScm {
            alpha: [0.9, 0.8, 0.92, 0.88, 0.94, 0.9],
            beta: [-0.5, 0.8],
            mediation: vec![
                (2, 0, 0.15),
                (2, 1, 0.10),
                (5, 0, 0.10),
                (5, 1, 0.20),
                (4, 2, 0.20),
                (4, 5, 0.10),
                (3, 4, 0.25),
            ],
        }
    }

    pub fn step(&self, s: &[f64], a: &[f64; 2]) -> Vec<f64> {
        debug_assert_eq!(s.len(), 6);
        let mut next: Vec<f64> = (0..6).map(|i| self.alpha[i] * s[i]).collect();
        next[0] += self.beta[0] * a[0];
        next[1] += self.beta[1] * a[1];
        for &(to, from, gain) in &self.mediation {
            next[to] += gain * next[from];
        }
        next
    }

    /// The dependency structure of `step`, with both actions read off the
    /// dimensions they influence.
    pub fn causal_graph(&self) -> CausalDag {
        let mut nodes = Vec::new();
        for i in 1..=6 {
            nodes.push(NodeDef { name: format!("s{i}"), kind: NodeKind::State });
        }
        nodes.push(NodeDef { name: "a1".to_string(), kind: NodeKind::Action });
        nodes.push(NodeDef { name: "a2".to_string(), kind: NodeKind::Action });
        for i in 1..=6 {
            nodes.push(NodeDef { name: format!("s'{i}"), kind: NodeKind::NextState });
        }
        let mut edges = vec![
            ("s1".to_string(), "a1".to_string()),
            ("s2".to_string(), "a2".to_string()),
            ("a1".to_string(), "s'1".to_string()),
            ("a2".to_string(), "s'2".to_string()),
        ];
        for i in 1..=6 {
            edges.push((format!("s{i}"), format!("s'{i}")));
        }
        for &(to, from, _) in &self.mediation {
            edges.push((format!("s'{}", from + 1), format!("s'{}", to + 1)));
        }
        CausalDag::new(nodes, &edges).expect("the toy graph is valid by construction")
    }
}

/// Exact counterfactual action for the toy system: the action-driven
/// coordinates are each linear in one action, so a = (s̃'ᵢ − αᵢsᵢ)/βᵢ.
pub fn scm_counterfactual_oracle(
    scm: &ToyScm,
    s: &[f64],
    s_next_desired: &[f64],
) -> Result<[f64; 2], GlucosimError> {
    for (j, name) in [(0usize, "insulin"), (1usize, "carbs")] {
        if scm.beta[j] == 0.0 {
            return Err(GlucosimError::DegenerateAction { name });
        }
    }
    Ok([
        (s_next_desired[0] - scm.alpha[0] * s[0]) / scm.beta[0],
        (s_next_desired[1] - scm.alpha[1] * s[1]) / scm.beta[1],
    ])
}

/// The toy system as an episodic environment. The reward pulls every
/// dimension toward the origin, the one target a nonnegative dose can
/// actually reach here.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    scm: ToyScm,
    state: Vec<f64>,
    init_sigma: f64,
}

pub const TOY_EPISODE_LEN: usize = 64;

impl ToyEnv {
    pub fn new() -> Self {
        ToyEnv { scm: ToyScm::standard(), state: vec![0.0; 6], init_sigma: 2.0 }
    }

    pub fn scm(&self) -> &ToyScm {
        &self.scm
    }
}

impl Default for ToyEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for ToyEnv {
    fn state_dim(&self) -> usize {
        6
    }

    fn action_bounds(&self) -> ([f64; 2], [f64; 2]) {
        ([0.0, 0.0], [4.0, 4.0])
    }

    fn episode_len(&self) -> usize {
        TOY_EPISODE_LEN
    }

    fn causal_graph(&self) -> CausalDag {
        self.scm.causal_graph()
    }

    fn obs_norm(&self) -> (Vec<f64>, Vec<f64>) {
        // Rough stationary spreads under uniform random dosing; the deep
        // mediated dims accumulate the most.
        (vec![0.0; 6], vec![5.0, 5.0, 8.0, 25.0, 15.0, 8.0])
    }

    fn reset(&mut self, rng: &mut ChaCha20Rng) -> Vec<f64> {
        self.state = (0..6).map(|_| self.init_sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        self.state.clone()
    }

    fn step(&mut self, action: &[f64; 2]) -> StepResult {
        let (lo, hi) = self.action_bounds();
        let applied = [action[0].clamp(lo[0], hi[0]), action[1].clamp(lo[1], hi[1])];
        let next = self.scm.step(&self.state, &applied);
        let reward = -next.iter().map(|x| x * x).sum::<f64>() / 6.0;
        self.state = next.clone();
        StepResult { next_state: next, reward, applied_action: applied, clamped: false }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::{plan_structure, topo_layering, BlockSpec};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn origin_is_a_fixed_point() {
        let scm = ToyScm::standard();
        assert_eq!(scm.step(&[0.0; 6], &[0.0, 0.0]), vec![0.0; 6]);
    }

    #[test]
    fn insulin_coordinate_by_hand() {
        let scm = ToyScm::standard();
        let mut s = [0.0; 6];
        s[0] = 100.0;
        let next = scm.step(&s, &[2.0, 0.0]);
        assert_eq!(next[0], 89.0); // 0.9*100 - 0.5*2
    }

    #[test]
    fn oracle_inverts_the_step() {
        let scm = ToyScm::standard();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..100 {
            let s: Vec<f64> = (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let a = [rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)];
            let next = scm.step(&s, &a);
            let got = scm_counterfactual_oracle(&scm, &s, &next).unwrap();
            assert_abs_diff_eq!(got[0], a[0], epsilon = 1e-12);
            assert_abs_diff_eq!(got[1], a[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_hand_value() {
        let scm = ToyScm::standard();
        let mut s = [0.0; 6];
        s[0] = 100.0;
        let mut want = [0.0; 6];
        want[0] = 89.0;
        let a = scm_counterfactual_oracle(&scm, &s, &want).unwrap();
        assert_abs_diff_eq!(a[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_is_linear_in_the_target() {
        let scm = ToyScm::standard();
        let s = [1.0, -2.0, 0.5, 3.0, -1.0, 0.0];
        let base = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut shifted = base;
        shifted[0] += 0.7;
        shifted[1] += -1.3;
        let a0 = scm_counterfactual_oracle(&scm, &s, &base).unwrap();
        let a1 = scm_counterfactual_oracle(&scm, &s, &shifted).unwrap();
        assert_abs_diff_eq!(a1[0] - a0[0], 0.7 / scm.beta[0], epsilon = 1e-12);
        assert_abs_diff_eq!(a1[1] - a0[1], -1.3 / scm.beta[1], epsilon = 1e-12);
    }

    #[test]
    fn zero_beta_is_rejected() {
        let mut scm = ToyScm::standard();
        scm.beta[1] = 0.0;
        let err = scm_counterfactual_oracle(&scm, &[0.0; 6], &[0.0; 6]).unwrap_err();
        assert!(matches!(err, GlucosimError::DegenerateAction { name: "carbs" }), "{err}");
    }

    #[test]
    fn graph_plans_one_coupling_then_linear() {
        let dag = ToyScm::standard().causal_graph();
        let layering = topo_layering(&dag).unwrap();
        assert_eq!(layering.describe(&dag), "a1,a2 | s'1,s'2 | s'3,s'6 | s'5 | s'4");
        let plan = plan_structure(&dag, &layering).unwrap();
        assert_eq!(
            plan.blocks(),
            &[
                BlockSpec::Symmetric { d1: 2, d2: 2, cond_state_idx: vec![0, 1] },
                BlockSpec::Asymmetric { in_dim: 8, out_dim: 6, known_state_idx: vec![2, 3, 4, 5] },
            ]
        );
    }

    #[test]
    fn env_steps_are_the_scm_and_actions_are_clipped() {
        let mut env = ToyEnv::new();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let s0 = env.reset(&mut rng);
        let scm = ToyScm::standard();
        let want = scm.step(&s0, &[4.0, 0.0]);
        let got = env.step(&[7.0, -1.0]); // clips to (4, 0)
        assert_eq!(got.applied_action, [4.0, 0.0]);
        assert_eq!(got.next_state, want);
        assert_abs_diff_eq!(
            got.reward,
            -want.iter().map(|x| x * x).sum::<f64>() / 6.0,
            epsilon = 1e-15
        );
    }
}
