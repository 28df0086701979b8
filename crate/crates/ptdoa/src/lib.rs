//! Instantaneous TDOA estimation and mobile-target localization for
//! time-division broadcast positioning systems.
//!
//! Anchors broadcast timestamped messages in periodic slots; a passive,
//! unsynchronized target records reception times. In dynamic scenes the
//! classical same-frame timestamp difference is biased because the two
//! receptions happen at different target positions. This crate models the
//! time-varying TDOA of each anchor pair as a short polynomial of the
//! target's local time, builds difference equations across successive
//! frames (STDS) that cancel the target clock, solves them by weighted
//! least squares (MWLS), and multilaterates the target from the resulting
//! simultaneous TDOA estimates.
//!
//! The crate also ships the matching Cramér-Rao bounds and theoretical
//! error predictions, plus a seeded Monte Carlo harness with named
//! experiment presets.
//!
//! ```
//! use ptdoa::{
//!     estimator::{build_stds_system, solve_mwls, AnchorPair},
//!     protocol::simulate_campaign,
//!     scenario::{sample_scenario, ScenarioConfig},
//! };
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
//! let scenario = sample_scenario(&ScenarioConfig::default(), &mut rng).unwrap();
//! let log = simulate_campaign(&scenario, &mut rng).unwrap();
//! let pair = AnchorPair::new(1, 2).unwrap();
//! let model = solve_mwls(&build_stds_system(&log, pair, 2).unwrap()).unwrap();
//! let (tdoa, variance) = model.evaluate(model.epoch + 0.1);
//! assert!(tdoa.abs() < 1e-5 && variance > 0.0);
//! ```

pub mod analysis;
pub mod clock;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod localization;
pub mod metrics;
pub mod protocol;
pub mod scenario;

pub use clock::{ClockModel, NoiseModel};
pub use error::{Error, Result};
pub use estimator::{AnchorPair, PairSet, TdoaPolyModel};
pub use localization::{CovarianceMode, PositionFix};
pub use protocol::CampaignLog;
pub use scenario::{Scenario, ScenarioConfig, Trajectory};

/// Speed of light, meters per second.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
