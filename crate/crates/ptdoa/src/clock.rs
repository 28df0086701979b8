//! Affine clock models and timestamp noise parameters.
//!
//! Every node owns an independent oscillator whose local time is an affine
//! function of global time, `t_local = omega * t + phi`. The inverse map uses
//! the calibration parameters `alpha = 1/omega`, `beta = -phi/omega`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine clock: `local = drift * global + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    /// Dimensionless clock drift `omega = 1 + e`, with `e` at ppm scale.
    pub drift: f64,
    /// Initial clock offset `phi` in seconds.
    pub offset: f64,
}

impl ClockModel {
    /// Clock perfectly synchronized with global time.
    pub const IDEAL: ClockModel = ClockModel {
        drift: 1.0,
        offset: 0.0,
    };

    pub fn new(drift: f64, offset: f64) -> Result<Self> {
        if drift.is_nan() || drift <= 0.0 || !drift.is_finite() || !offset.is_finite() {
            return Err(Error::InvalidClock(drift));
        }
        Ok(ClockModel { drift, offset })
    }

    /// Calibration parameters `(alpha, beta)` with `alpha = 1/drift` and
    /// `beta = -offset/drift`.
    pub fn calibration(&self) -> (f64, f64) {
        let alpha = 1.0 / self.drift;
        (alpha, -self.offset * alpha)
    }

    /// Local reading of this clock at global time `t`.
    pub fn local_time(&self, t: f64) -> f64 {
        self.drift * t + self.offset
    }

    /// Global time corresponding to a local reading; inverse of `local_time`.
    pub fn global_time(&self, t_local: f64) -> f64 {
        let (alpha, beta) = self.calibration();
        alpha * t_local + beta
    }

    /// Instantaneous clock offset `local - global` at global time `t`.
    pub fn offset_at(&self, t: f64) -> f64 {
        (self.drift - 1.0) * t + self.offset
    }

    /// Draw a clock with `drift = 1 + U[-b, b] * 1e-6` (ppm bound) and
    /// `offset = U[-offset_bound, offset_bound]`.
    pub fn sample<R: Rng + ?Sized>(
        drift_bound_ppm: f64,
        offset_bound: f64,
        rng: &mut R,
    ) -> ClockModel {
        let e = if drift_bound_ppm > 0.0 {
            rng.random_range(-drift_bound_ppm..=drift_bound_ppm) * 1e-6
        } else {
            0.0
        };
        let phi = if offset_bound > 0.0 {
            rng.random_range(-offset_bound..=offset_bound)
        } else {
            0.0
        };
        ClockModel {
            drift: 1.0 + e,
            offset: phi,
        }
    }
}

/// Standard deviations of the timestamp and side-information noise sources.
///
/// All time-like fields are in seconds; `anchor_pos_sigma` is per-axis meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Transmission-timestamp noise std, seconds.
    pub tx_sigma: f64,
    /// Reception-timestamp noise std, seconds.
    pub rx_sigma: f64,
    /// Anchor clock-offset estimate error std, seconds.
    pub offset_sigma: f64,
    /// Anchor position error std per axis, meters.
    pub anchor_pos_sigma: f64,
}

impl NoiseModel {
    pub fn new(tx_sigma: f64, rx_sigma: f64, offset_sigma: f64, anchor_pos_sigma: f64) -> Result<Self> {
        let m = NoiseModel {
            tx_sigma,
            rx_sigma,
            offset_sigma,
            anchor_pos_sigma,
        };
        for s in [tx_sigma, rx_sigma, offset_sigma, anchor_pos_sigma] {
            if s.is_nan() || s < 0.0 || !s.is_finite() {
                return Err(Error::InvalidScenario(format!(
                    "noise stds must be nonnegative, got {s}"
                )));
            }
        }
        Ok(m)
    }

    pub const ZERO: NoiseModel = NoiseModel {
        tx_sigma: 0.0,
        rx_sigma: 0.0,
        offset_sigma: 0.0,
        anchor_pos_sigma: 0.0,
    };
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn identity_clock_maps_time_through() {
        assert_eq!(ClockModel::IDEAL.local_time(5.0), 5.0);
        assert_eq!(ClockModel::IDEAL.global_time(5.0), 5.0);
        assert_eq!(ClockModel::IDEAL.calibration(), (1.0, 0.0));
    }

    #[test]
    fn local_time_direct_values() {
        let c = ClockModel::new(1.0 + 2e-5, 1e-3).unwrap();
        assert_relative_eq!(c.local_time(1.0), 1.00102, max_relative = 1e-12);
        let c = ClockModel::new(1.0 - 2e-5, -1e-3).unwrap();
        // (1 - 2e-5) * 0.1 - 1e-3
        assert_relative_eq!(c.local_time(0.1), 0.098998, max_relative = 1e-12);
    }

    #[test]
    fn global_time_inverts_local_time() {
        let c = ClockModel::new(1.0 + 2e-5, 1e-3).unwrap();
        assert_relative_eq!(c.global_time(1.00102), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn calibration_identities() {
        let c = ClockModel::new(1.0 - 1.7e-5, 4.2e-4).unwrap();
        let (alpha, beta) = c.calibration();
        assert_relative_eq!(alpha * c.drift, 1.0, max_relative = 1e-15);
        assert_relative_eq!(alpha * c.offset + beta, 0.0, epsilon = 1e-18);
    }

    #[test]
    fn nonpositive_drift_rejected() {
        assert!(ClockModel::new(0.0, 0.0).is_err());
        assert!(ClockModel::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn degenerate_bounds_give_ideal_clock() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let c = ClockModel::sample(0.0, 0.0, &mut rng);
        assert_eq!(c, ClockModel::IDEAL);
    }

    #[test]
    fn sampled_clocks_stay_in_bounds_with_unit_mean() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let c = ClockModel::sample(20.0, 1e-3, &mut rng);
            assert!(c.drift >= 1.0 - 2e-5 && c.drift <= 1.0 + 2e-5);
            assert!(c.offset.abs() <= 1e-3);
            sum += c.drift;
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 1e-6, "mean drift {mean}");
    }

    #[test]
    fn same_seed_reproduces_clock() {
        let a = ClockModel::sample(20.0, 1e-3, &mut ChaCha12Rng::seed_from_u64(77));
        let b = ClockModel::sample(20.0, 1e-3, &mut ChaCha12Rng::seed_from_u64(77));
        assert_eq!(a, b);
    }

    #[test]
    fn round_trip_over_random_clocks() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let c = ClockModel::sample(20.0, 1e-3, &mut rng);
            let t = rng.random_range(0.0..10.0);
            assert_relative_eq!(c.global_time(c.local_time(t)), t, epsilon = 1e-12);
        }
    }

    #[test]
    fn negative_noise_std_rejected() {
        assert!(NoiseModel::new(-1e-12, 0.0, 0.0, 0.0).is_err());
    }
}
