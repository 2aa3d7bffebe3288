//! The glucose band penalty.

/// Target band for blood glucose, mg/dl.
pub const BAND_LOW: f64 = 70.0;
/// Upper edge of the target band, mg/dl.
pub const BAND_HIGH: f64 = 180.0;

/// Negative squared distance from the 70..180 mg/dl band; zero inside it.
///
/// The inner expression picks out how far the reading sits beyond whichever
/// edge it violates: both min terms are nonpositive in range, and exactly
/// one turns positive outside it.
pub fn band_reward(s_g: f64) -> f64 {
    let above = (s_g - BAND_LOW).min(s_g - BAND_HIGH);
    let below = (BAND_LOW - s_g).min(BAND_HIGH - s_g);
    let d = above.max(below).max(0.0);
    -(d * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn in_band_is_zero_and_out_of_band_is_negative() {
        for sg in 70..=180 {
            assert_eq!(band_reward(sg as f64), 0.0);
        }
        for sg in [10.0, 69.9, 180.1, 400.0] {
            assert!(band_reward(sg) < 0.0, "reward({sg})");
        }
    }

    #[test]
    fn quadratic_beyond_each_edge() {
        assert_eq!(band_reward(120.0), 0.0);
        assert_eq!(band_reward(200.0), -400.0);
        assert_eq!(band_reward(50.0), -400.0);
    }

    #[test]
    fn continuous_at_the_edges() {
        // power-of-two offset keeps edge +- eps exactly representable, so
        // the quadratic bound holds with equality rather than within an ulp
        let eps = 1.0 / 1024.0;
        for edge in [70.0, 180.0] {
            assert!(band_reward(edge - eps).abs() <= eps * eps);
            assert!(band_reward(edge + eps).abs() <= eps * eps);
            assert_abs_diff_eq!(band_reward(edge), 0.0);
        }
    }
}
