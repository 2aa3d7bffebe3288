//! Behavior policies for data generation.
//!
//! Nine policies share one shape and differ only in how aggressively they
//! dose insulin: policy 0 doses at the nominal strength and generates
//! training data, policies 1 through 8 scale every insulin delivery by a
//! fixed factor fanning out from 0.9/1.1 to 0.6/1.4 and generate the
//! held-out distribution shifts. Carbohydrate intake is identical across
//! policies; only the dosing moves.

use super::GlucosimError;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Insulin scale per policy id. Ordered so successive ids widen the shift.
pub const POLICY_SCALES: [f64; 9] = [1.0, 0.9, 1.1, 0.8, 1.2, 0.7, 1.3, 0.6, 1.4];

/// Grams of carbohydrate covered by one unit of insulin.
pub const CARB_RATIO: f64 = 10.0;

/// Basal insulin per 5-minute step at nominal strength, U.
pub const BASAL_PER_STEP: f64 = 0.1;

/// A meal bolus is spread over following steps at most this fast (pre-scale
/// U per step), mimicking an extended bolus and keeping doses inside the
/// pump's per-step bound even for the strongest policy.
const BOLUS_STEP_CAP: f64 = 0.55;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Toy,
    Ode,
}

#[derive(Debug, Clone)]
pub struct DosePolicy {
    id: usize,
    mode: Mode,
    pending_bolus: f64,
}

impl DosePolicy {
    /// Policy for the six-variable environment: both action channels drawn
    /// uniformly and scaled.
    pub fn toy(id: usize) -> Result<Self, GlucosimError> {
        Self::new(id, Mode::Toy)
    }

    /// Policy for the patient model: scaled basal plus carb-counted meal
    /// boluses with 5% execution noise.
    pub fn ode(id: usize) -> Result<Self, GlucosimError> {
        Self::new(id, Mode::Ode)
    }

    fn new(id: usize, mode: Mode) -> Result<Self, GlucosimError> {
        if id >= POLICY_SCALES.len() {
            return Err(GlucosimError::UnknownPolicy(id));
        }
        Ok(DosePolicy { id, mode, pending_bolus: 0.0 })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn scale(&self) -> f64 {
        POLICY_SCALES[self.id]
    }

    /// Clears carried bolus state; call at every episode start.
    pub fn reset(&mut self) {
        self.pending_bolus = 0.0;
    }

    /// The dose for the next step. `announced_carbs` is what the
    /// environment will fold into that step's carb channel.
    pub fn dose(&mut self, announced_carbs: f64, rng: &mut ChaCha20Rng) -> [f64; 2] {
        let f = self.scale();
        match self.mode {
            Mode::Toy => [f * rng.gen_range(0.5..2.5), f * rng.gen_range(0.5..2.5)],
            Mode::Ode => {
                if announced_carbs > 0.0 {
                    self.pending_bolus += announced_carbs / CARB_RATIO;
                }
                let delivered = self.pending_bolus.min(BOLUS_STEP_CAP);
                self.pending_bolus -= delivered;
                let jitter = 1.0 + 0.05 * rng.sample::<f64, _>(StandardNormal);
                let insulin = (f * jitter * (BASAL_PER_STEP + delivered)).max(0.0);
                [insulin, 0.0]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn ids_beyond_eight_are_rejected() {
        assert!(DosePolicy::ode(8).is_ok());
        assert!(matches!(DosePolicy::ode(9), Err(GlucosimError::UnknownPolicy(9))));
    }

    #[test]
    fn toy_doses_land_in_the_scaled_band() {
        let mut p = DosePolicy::toy(8).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = p.dose(0.0, &mut rng);
            for v in a {
                assert!((0.5 * 1.4..2.5 * 1.4).contains(&v));
            }
        }
    }

    #[test]
    fn meal_bolus_totals_carbs_over_ratio() {
        let mut p = DosePolicy::ode(0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut total = 0.0;
        let mut basal_only = 0.0;
        // just past the ~11 steps the 6 U bolus needs at the delivery cap
        let n = 30;
        for t in 0..n {
            let carbs = if t == 0 { 60.0 } else { 0.0 };
            total += p.dose(carbs, &mut rng)[0];
            basal_only += BASAL_PER_STEP;
        }
        // everything beyond basal is the bolus; jitter averages out
        let bolus = total - basal_only;
        assert!((bolus - 6.0).abs() < 0.4, "bolus sum {bolus}");
        assert_eq!(p.pending_bolus, 0.0);
    }

    #[test]
    fn bolus_is_spread_not_spiked() {
        let mut p = DosePolicy::ode(0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let first = p.dose(80.0, &mut rng)[0];
        assert!(first < 1.0, "single-step dose too large: {first}");
        // 8 U at 0.55 U/step needs a stretch of nonzero deliveries
        let mut steps_with_bolus = 1;
        for _ in 0..40 {
            if p.dose(0.0, &mut rng)[0] > 3.0 * BASAL_PER_STEP {
                steps_with_bolus += 1;
            }
        }
        assert!(steps_with_bolus >= 10, "bolus not extended: {steps_with_bolus} steps");
    }

    #[test]
    fn strongest_policy_doses_1_4_times_the_nominal() {
        let mut nominal = DosePolicy::ode(0).unwrap();
        let mut strong = DosePolicy::ode(8).unwrap();
        let mut rng_a = ChaCha20Rng::seed_from_u64(11);
        let mut rng_b = ChaCha20Rng::seed_from_u64(11);
        let (mut sum_a, mut sum_b) = (0.0, 0.0);
        for t in 0..(288 * 4) {
            let carbs = if t % 288 == 84 { 60.0 } else { 0.0 };
            sum_a += nominal.dose(carbs, &mut rng_a)[0];
            sum_b += strong.dose(carbs, &mut rng_b)[0];
        }
        let ratio = sum_b / sum_a;
        assert!((ratio - 1.4).abs() < 1e-9, "scale ratio {ratio}");
    }

    #[test]
    fn reset_drops_pending_bolus() {
        let mut p = DosePolicy::ode(0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        p.dose(80.0, &mut rng);
        assert!(p.pending_bolus > 0.0);
        p.reset();
        assert_eq!(p.pending_bolus, 0.0);
    }
}
