//! Thirteen-compartment glucose-insulin patient.
//!
//! A two-compartment subcutaneous insulin path feeds plasma insulin, which
//! drives two remote action compartments (transport and endogenous
//! production); meals pass through a two-compartment gut into a rate of
//! appearance; plasma glucose integrates production, uptake, and
//! appearance; interstitial glucose lags plasma and is what gets measured.
//! Four passive side compartments (s2, z, d2, c) widen the state so the
//! dependency layers run 2, 4, 3, 2, 2 after the actions.
//!
//! Units: minutes, insulin in U, carbs in grams, glucose in mg/dl.

use super::{band_reward, Environment, MealSchedule, StepResult};
use crate::causal::{CausalDag, NodeDef, NodeKind};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub const ODE_STATE_DIM: usize = 13;
pub const G_INTERSTITIAL: usize = 0;
pub const G_PLASMA: usize = 1;

/// Simulator clamp bounds on the glucose components, mg/dl.
pub const BG_MIN: f64 = 10.0;
pub const BG_MAX: f64 = 600.0;

const STATE_NAMES: [&str; ODE_STATE_DIM] =
    ["g_i", "g", "q2", "s1", "s2", "ins", "x_t", "x_e", "z", "d1", "d2", "ra", "c"];

#[derive(Debug, Clone)]
pub struct OdeParams {
    pub basal: f64, // U/min that holds the fasting equilibrium
    pub t_s: f64,   // subcutaneous absorption time
    pub t_s2: f64,
    pub v_i: f64, // insulin distribution volume
    pub k_e: f64, // plasma insulin elimination
    pub p2: f64,  // remote-action onset rate
    pub k_t: f64, // plasma insulin -> transport action gain
    pub k_e2: f64, // plasma insulin -> production-suppression gain
    pub k_z: f64,
    pub t_z: f64,
    pub k_bio: f64, // carb bioavailability
    pub t_d: f64,   // gut compartment time
    pub t_d2: f64,
    pub k_ra: f64, // gut mass -> appearance gain
    pub t_ra: f64,
    pub egp0: f64, // endogenous glucose production at zero insulin action
    pub s_e: f64,  // production suppression per unit x_e
    pub u0: f64,   // insulin-independent uptake
    pub s_t: f64,  // transport uptake per unit x_t
    pub f_ra: f64, // appearance -> plasma gain
    pub k_c: f64,
    pub t_c: f64,
    pub t_gi: f64, // interstitial lag
    pub k12: f64,
    pub t_q: f64,
}

impl OdeParams {
    /// Calibrated so that at basal dosing the fasting equilibrium sits at
    /// 120 mg/dl with unit remote insulin action, one unit of insulin moves
    /// glucose about -35 mg/dl, and one gram of carbs about +3.5, i.e. a
    /// carb ratio near 10 g/U.
    pub fn standard() -> Self {
        OdeParams {
            basal: 0.02,
            t_s: 20.0,
            t_s2: 40.0,
            v_i: 12.0,
            k_e: 0.09,
            p2: 0.02,
            k_t: 54.0,
            k_e2: 54.0,
            k_z: 10.0,
            t_z: 30.0,
            k_bio: 0.8,
            t_d: 20.0,
            t_d2: 40.0,
            k_ra: 1.75,
            t_ra: 15.0,
            egp0: 2.0,
            s_e: 0.2,
            u0: 1.3,
            s_t: 0.0025,
            f_ra: 0.125,
            k_c: 0.5,
            t_c: 60.0,
            t_gi: 10.0,
            k12: 2.0,
            t_q: 30.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OdePatient {
    pub params: OdeParams,
    pub dt_minutes: f64,
    pub substeps: usize,
}

impl OdePatient {
    pub fn standard() -> Self {
        OdePatient { params: OdeParams::standard(), dt_minutes: 5.0, substeps: 5 }
    }

    /// Fasting fixed point under basal dosing, in closed form.
    pub fn equilibrium_state(&self) -> Vec<f64> {
        let p = &self.params;
        let s1 = p.basal * p.t_s;
        let i = s1 / (p.t_s * p.v_i * p.k_e);
        let x_t = p.k_t * i;
        let x_e = p.k_e2 * i;
        let g = (p.egp0 * (1.0 - p.s_e * x_e) - p.u0) / (p.s_t * x_t);
        let mut s = vec![0.0; ODE_STATE_DIM];
        s[G_INTERSTITIAL] = g;
        s[G_PLASMA] = g;
        s[2] = p.k12 * p.s_t * x_t * g * p.t_q; // q2
        s[3] = s1;
        s[4] = s1; // s2
        s[5] = i;
        s[6] = x_t;
        s[7] = x_e;
        s[8] = p.k_z * i * p.t_z; // z
        s[12] = p.k_c * x_e * p.t_c; // c
        s
    }

    fn deriv(&self, s: &[f64], u_ins: f64, u_carb: f64) -> [f64; ODE_STATE_DIM] {
        let p = &self.params;
        let (g_i, g, q2, s1, s2, ins, x_t, x_e, z, d1, d2, ra, c) = (
            s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7], s[8], s[9], s[10], s[11], s[12],
        );
        let mut d = [0.0; ODE_STATE_DIM];
        d[0] = (g - g_i) / p.t_gi;
        d[1] = p.egp0 * (1.0 - p.s_e * x_e) - p.u0 - p.s_t * x_t * g + p.f_ra * ra;
        d[2] = p.k12 * p.s_t * x_t * g - q2 / p.t_q;
        d[3] = u_ins - s1 / p.t_s;
        d[4] = (s1 - s2) / p.t_s2;
        d[5] = s1 / (p.t_s * p.v_i) - p.k_e * ins;
        d[6] = p.p2 * (p.k_t * ins - x_t);
        d[7] = p.p2 * (p.k_e2 * ins - x_e);
        d[8] = p.k_z * ins - z / p.t_z;
        d[9] = p.k_bio * u_carb - d1 / p.t_d;
        d[10] = (d1 - d2) / p.t_d2;
        d[11] = (p.k_ra * d1 - ra) / p.t_ra;
        d[12] = p.k_c * x_e - c / p.t_c;
        d
    }

    /// One control step: the action is spread as constant infusion rates
    /// over `dt_minutes` and integrated with RK4 substeps. Returns the next
    /// state and whether a glucose component hit the simulator bounds.
    pub fn step(&self, s: &[f64], a: &[f64; 2]) -> (Vec<f64>, bool) {
        debug_assert_eq!(s.len(), ODE_STATE_DIM);
        let u_ins = a[0] / self.dt_minutes;
        let u_carb = a[1] / self.dt_minutes;
        let h = self.dt_minutes / self.substeps as f64;
        let mut x = s.to_vec();
        for _ in 0..self.substeps {
            let k1 = self.deriv(&x, u_ins, u_carb);
            let x2: Vec<f64> = (0..ODE_STATE_DIM).map(|i| x[i] + 0.5 * h * k1[i]).collect();
            let k2 = self.deriv(&x2, u_ins, u_carb);
            let x3: Vec<f64> = (0..ODE_STATE_DIM).map(|i| x[i] + 0.5 * h * k2[i]).collect();
            let k3 = self.deriv(&x3, u_ins, u_carb);
            let x4: Vec<f64> = (0..ODE_STATE_DIM).map(|i| x[i] + h * k3[i]).collect();
            let k4 = self.deriv(&x4, u_ins, u_carb);
            for i in 0..ODE_STATE_DIM {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let mut clamped = false;
        for gi in [G_INTERSTITIAL, G_PLASMA] {
            if x[gi] < BG_MIN || x[gi] > BG_MAX {
                x[gi] = x[gi].clamp(BG_MIN, BG_MAX);
                clamped = true;
            }
        }
        (x, clamped)
    }

    /// Declared dependency structure of one step: each compartment keeps
    /// itself as a parent and reads the compartments that source its
    /// derivative, with dosing entering through the two gateways s1 and d1.
    pub fn causal_graph(&self) -> CausalDag {
        let mut nodes = Vec::new();
        for n in STATE_NAMES {
            nodes.push(NodeDef { name: n.to_string(), kind: NodeKind::State });
        }
        nodes.push(NodeDef { name: "u_ins".to_string(), kind: NodeKind::Action });
        nodes.push(NodeDef { name: "u_carb".to_string(), kind: NodeKind::Action });
        for n in STATE_NAMES {
            nodes.push(NodeDef { name: format!("{n}'"), kind: NodeKind::NextState });
        }
        let mut edges = vec![
            ("g_i".to_string(), "u_ins".to_string()),
            ("g_i".to_string(), "u_carb".to_string()),
        ];
        for n in STATE_NAMES {
            edges.push((n.to_string(), format!("{n}'")));
        }
        for (src, dst) in [
            ("u_ins", "s1'"),
            ("u_carb", "d1'"),
            ("s1'", "s2'"),
            ("s1'", "ins'"),
            ("d1'", "d2'"),
            ("d1'", "ra'"),
            ("ins'", "x_t'"),
            ("ins'", "x_e'"),
            ("ins'", "z'"),
            ("x_t'", "g'"),
            ("x_e'", "g'"),
            ("ra'", "g'"),
            ("x_e'", "c'"),
            ("g'", "g_i'"),
            ("g'", "q2'"),
            ("x_t'", "q2'"),
        ] {
            edges.push((src.to_string(), dst.to_string()));
        }
        CausalDag::new(nodes, &edges).expect("the patient graph is valid by construction")
    }
}

/// The ODE patient as an episodic environment: one day per episode, meals
/// folded into the carb channel, band penalty on the measured glucose.
#[derive(Debug, Clone)]
pub struct OdeEnv {
    patient: OdePatient,
    schedule: MealSchedule,
    state: Vec<f64>,
    minute: u32,
    init_sigma: f64,
}

impl OdeEnv {
    pub fn new(patient: OdePatient, schedule: MealSchedule) -> Self {
        let state = patient.equilibrium_state();
        OdeEnv { patient, schedule, state, minute: 0, init_sigma: 15.0 }
    }

    pub fn standard() -> Self {
        let patient = OdePatient::standard();
        let schedule = MealSchedule::standard_day(patient.dt_minutes as u32);
        Self::new(patient, schedule)
    }

    pub fn patient(&self) -> &OdePatient {
        &self.patient
    }

    pub fn schedule(&self) -> &MealSchedule {
        &self.schedule
    }

    pub fn minute(&self) -> u32 {
        self.minute
    }
}

impl Environment for OdeEnv {
    fn state_dim(&self) -> usize {
        ODE_STATE_DIM
    }

    fn action_bounds(&self) -> ([f64; 2], [f64; 2]) {
        ([0.0, 0.0], [1.0, 5.0])
    }

    fn episode_len(&self) -> usize {
        (24 * 60 / self.patient.dt_minutes as u32) as usize
    }

    fn causal_graph(&self) -> CausalDag {
        self.patient.causal_graph()
    }

    fn obs_norm(&self) -> (Vec<f64>, Vec<f64>) {
        let eq = self.patient.equilibrium_state();
        // Rough excursion scales around the fasting point.
        let scale =
            vec![60.0, 60.0, 10.0, 1.0, 1.0, 0.05, 2.0, 2.0, 10.0, 20.0, 20.0, 20.0, 15.0];
        (eq, scale)
    }

    fn reset(&mut self, rng: &mut ChaCha20Rng) -> Vec<f64> {
        let mut s = self.patient.equilibrium_state();
        let dg = self.init_sigma * rng.sample::<f64, _>(StandardNormal);
        s[G_PLASMA] = (s[G_PLASMA] + dg).clamp(BG_MIN + 10.0, 350.0);
        s[G_INTERSTITIAL] = s[G_PLASMA] + 2.0 * rng.sample::<f64, _>(StandardNormal);
        self.state = s.clone();
        self.minute = 0;
        s
    }

    fn step(&mut self, action: &[f64; 2]) -> StepResult {
        let (lo, hi) = self.action_bounds();
        let applied = [
            action[0].clamp(lo[0], hi[0]),
            action[1].clamp(lo[1], hi[1]) + self.schedule.grams_at(self.minute),
        ];
        let (next, clamped) = self.patient.step(&self.state, &applied);
        let reward = band_reward(next[G_INTERSTITIAL]);
        self.state = next.clone();
        self.minute += self.patient.dt_minutes as u32;
        StepResult { next_state: next, reward, applied_action: applied, clamped }
    }

    fn meal_grams_next(&self) -> f64 {
        self.schedule.grams_at(self.minute)
    }
}
