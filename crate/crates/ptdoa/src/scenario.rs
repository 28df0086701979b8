//! Anchor geometry, target motion models and ground-truth ranges.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clock::{ClockModel, NoiseModel};
use crate::error::{Error, Result};
use crate::SPEED_OF_LIGHT;

/// A stationary broadcast anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    /// 1-based index; anchor `i` occupies slot `i` of each frame.
    pub id: usize,
    pub true_position: DVector<f64>,
    /// Position advertised in broadcast messages, `true + N(0, position_covariance)`.
    pub reported_position: DVector<f64>,
    pub position_covariance: DMatrix<f64>,
    pub clock: ClockModel,
    /// Std of the clock-offset estimate error carried in messages, seconds.
    pub offset_estimate_sigma: f64,
}

/// Analytic target motion. Positions are exact closed forms, never integrated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Static {
        start: DVector<f64>,
    },
    UniformLinear {
        start: DVector<f64>,
        velocity: DVector<f64>,
    },
    /// Circle through `start`; angular rate is `speed / radius` with the sign
    /// selecting the direction of travel.
    UniformCircular {
        center: DVector<f64>,
        radius: f64,
        angular_rate: f64,
        initial_phase: f64,
    },
    UniformlyAccelerated {
        start: DVector<f64>,
        velocity: DVector<f64>,
        acceleration: DVector<f64>,
    },
}

impl Trajectory {
    /// Circle of the given radius through `start`, with the center placed at
    /// angle `center_direction` from the start point.
    pub fn circular_through(
        start: DVector<f64>,
        speed: f64,
        radius: f64,
        center_direction: f64,
        counterclockwise: bool,
    ) -> Result<Trajectory> {
        if radius.is_nan() || radius <= 0.0 {
            return Err(Error::InvalidScenario(format!(
                "circular radius must be positive, got {radius}"
            )));
        }
        let mut center = start;
        center[0] += radius * center_direction.cos();
        center[1] += radius * center_direction.sin();
        let sign = if counterclockwise { 1.0 } else { -1.0 };
        Ok(Trajectory::UniformCircular {
            center,
            radius,
            angular_rate: sign * speed / radius,
            // phase pointing from center back to the start position
            initial_phase: center_direction + std::f64::consts::PI,
        })
    }

    pub fn dimension(&self) -> usize {
        match self {
            Trajectory::Static { start } => start.len(),
            Trajectory::UniformLinear { start, .. } => start.len(),
            Trajectory::UniformCircular { center, .. } => center.len(),
            Trajectory::UniformlyAccelerated { start, .. } => start.len(),
        }
    }

    /// Target position at global time `t`.
    pub fn position_at(&self, t: f64) -> DVector<f64> {
        match self {
            Trajectory::Static { start } => start.clone(),
            Trajectory::UniformLinear { start, velocity } => start + velocity * t,
            Trajectory::UniformCircular {
                center,
                radius,
                angular_rate,
                initial_phase,
            } => {
                let phase = initial_phase + angular_rate * t;
                let mut p = center.clone();
                p[0] += radius * phase.cos();
                p[1] += radius * phase.sin();
                p
            }
            Trajectory::UniformlyAccelerated {
                start,
                velocity,
                acceleration,
            } => start + velocity * t + acceleration * (0.5 * t * t),
        }
    }
}

/// Periodic broadcast schedule: `num_slots` slots of `slot_length` per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTiming {
    /// Frame duration `T_f`, seconds.
    pub frame_length: f64,
    /// Slot duration `T_s`, seconds.
    pub slot_length: f64,
    /// Slots per frame `N_s`.
    pub num_slots: usize,
    /// Frames simulated per campaign `N_f`.
    pub num_frames: usize,
}

impl ProtocolTiming {
    /// Global transmission time of anchor `id` (1-based) in frame `m` (1-based).
    pub fn tx_time(&self, frame: usize, id: usize) -> f64 {
        (frame - 1) as f64 * self.frame_length + (id - 1) as f64 * self.slot_length
    }
}

/// A fully specified simulation instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dimension: usize,
    pub anchors: Vec<Anchor>,
    pub target_clock: ClockModel,
    pub trajectory: Trajectory,
    pub noise: NoiseModel,
    pub timing: ProtocolTiming,
}

impl Scenario {
    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }

    pub fn anchor(&self, id: usize) -> Result<&Anchor> {
        self.anchors
            .get(id.wrapping_sub(1))
            .filter(|a| a.id == id)
            .ok_or(Error::MissingRecord { anchor: id, frame: 0 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension != 2 && self.dimension != 3 {
            return Err(Error::InvalidScenario(format!(
                "dimension must be 2 or 3, got {}",
                self.dimension
            )));
        }
        if self.anchors.is_empty() {
            return Err(Error::InvalidScenario("no anchors".into()));
        }
        if self.anchors.len() > self.timing.num_slots {
            return Err(Error::InvalidScenario(format!(
                "{} anchors exceed {} slots",
                self.anchors.len(),
                self.timing.num_slots
            )));
        }
        let tf = self.timing.num_slots as f64 * self.timing.slot_length;
        if (tf - self.timing.frame_length).abs() > 1e-12 * self.timing.frame_length {
            return Err(Error::InvalidScenario(format!(
                "frame length {} != num_slots * slot_length = {}",
                self.timing.frame_length, tf
            )));
        }
        if self.timing.num_frames < 2 {
            return Err(Error::InvalidScenario(
                "at least two frames are required".into(),
            ));
        }
        for (k, a) in self.anchors.iter().enumerate() {
            if a.id != k + 1 {
                return Err(Error::InvalidScenario(format!(
                    "anchor ids must be 1..N in order, got {} at index {k}",
                    a.id
                )));
            }
            if a.true_position.len() != self.dimension {
                return Err(Error::InvalidScenario("anchor dimension mismatch".into()));
            }
        }
        if self.trajectory.dimension() != self.dimension {
            return Err(Error::InvalidScenario("trajectory dimension mismatch".into()));
        }
        Ok(())
    }
}

/// One-way propagation delay from `anchor` to the target at global time `t`.
pub fn true_toa(anchor: &Anchor, trajectory: &Trajectory, t: f64) -> f64 {
    (trajectory.position_at(t) - &anchor.true_position).norm() / SPEED_OF_LIGHT
}

/// Instantaneous TDOA `toa_i - toa_j` at global time `t`.
pub fn true_tdoa(i: &Anchor, j: &Anchor, trajectory: &Trajectory, t: f64) -> Result<f64> {
    if i.id == j.id {
        return Err(Error::IdenticalAnchors(i.id));
    }
    Ok(true_toa(i, trajectory, t) - true_toa(j, trajectory, t))
}

/// Target motion family with the distribution parameters used for sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionConfig {
    Static,
    UniformLinear { max_speed: f64 },
    UniformCircular { max_speed: f64, max_radius: f64 },
    UniformlyAccelerated { max_speed: f64, max_acceleration: f64 },
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig::UniformLinear { max_speed: 10.0 }
    }
}

/// Noise configuration; timestamp noises given in meters and converted by `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Reception-timestamp noise std, meters.
    pub rx_noise_m: f64,
    /// Transmission-timestamp noise std, meters.
    pub tx_noise_m: f64,
    /// Anchor clock-offset estimate error std, seconds.
    pub offset_sigma_s: f64,
    /// Anchor position error std per axis, meters.
    pub anchor_pos_sigma_m: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            // -30 dB reception variance: 1e-3 m^2
            rx_noise_m: 1e-3f64.sqrt(),
            tx_noise_m: 0.0,
            offset_sigma_s: 1e-11,
            anchor_pos_sigma_m: 0.1,
        }
    }
}

impl NoiseConfig {
    pub fn to_model(&self) -> Result<NoiseModel> {
        NoiseModel::new(
            self.tx_noise_m / SPEED_OF_LIGHT,
            self.rx_noise_m / SPEED_OF_LIGHT,
            self.offset_sigma_s,
            self.anchor_pos_sigma_m,
        )
    }
}

/// Target clock draw bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockConfig {
    pub drift_bound_ppm: f64,
    pub offset_bound_s: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig {
            drift_bound_ppm: 20.0,
            offset_bound_s: 1e-3,
        }
    }
}

/// Distribution from which scenarios are drawn; defaults follow the reference
/// simulation setup (10 anchors in a 2 km square, 0.1 s frames of twenty 5 ms
/// slots, -30 dB reception noise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub dimension: usize,
    pub num_anchors: usize,
    /// Anchors are drawn uniformly in `[-half_side, half_side]^K`, meters.
    pub half_side_m: f64,
    pub num_frames: usize,
    pub frame_length_s: f64,
    pub slot_length_s: f64,
    pub num_slots: usize,
    pub motion: MotionConfig,
    pub noise: NoiseConfig,
    pub clock: ClockConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            dimension: 2,
            num_anchors: 10,
            half_side_m: 1000.0,
            num_frames: 5,
            frame_length_s: 0.1,
            slot_length_s: 5e-3,
            num_slots: 20,
            motion: MotionConfig::default(),
            noise: NoiseConfig::default(),
            clock: ClockConfig::default(),
        }
    }
}

fn random_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    if dim == 2 {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        DVector::from_vec(vec![theta.cos(), theta.sin()])
    } else {
        // Marsaglia rejection on the unit ball
        loop {
            let v = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }
}

fn sample_trajectory<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    let dim = config.dimension;
    let start = DVector::zeros(dim);
    Ok(match config.motion {
        MotionConfig::Static => Trajectory::Static { start },
        MotionConfig::UniformLinear { max_speed } => {
            let dir = random_direction(dim, rng);
            let speed = rng.random_range(0.0..=max_speed);
            Trajectory::UniformLinear {
                start,
                velocity: dir * speed,
            }
        }
        MotionConfig::UniformCircular {
            max_speed,
            max_radius,
        } => {
            let speed = rng.random_range(0.0..=max_speed);
            // open at zero so the angular rate stays finite
            let radius = max_radius * (1.0 - rng.random::<f64>());
            let center_direction = rng.random_range(0.0..std::f64::consts::TAU);
            let ccw = rng.random::<bool>();
            Trajectory::circular_through(start, speed, radius, center_direction, ccw)?
        }
        MotionConfig::UniformlyAccelerated {
            max_speed,
            max_acceleration,
        } => {
            // straight-line motion: acceleration acts along the travel direction
            let dir = random_direction(dim, rng);
            let speed = rng.random_range(0.0..=max_speed);
            let accel = rng.random_range(0.0..=max_acceleration);
            Trajectory::UniformlyAccelerated {
                start: start.clone(),
                velocity: &dir * speed,
                acceleration: dir * accel,
            }
        }
    })
}

/// Draw a scenario: anchor positions uniform in the square, clocks and motion
/// per the configured bounds. Deterministic given the RNG state.
pub fn sample_scenario<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<Scenario> {
    if config.num_anchors > config.num_slots {
        return Err(Error::InvalidScenario(format!(
            "{} anchors exceed {} slots",
            config.num_anchors, config.num_slots
        )));
    }
    let dim = config.dimension;
    let noise = config.noise.to_model()?;
    let mut anchors = Vec::with_capacity(config.num_anchors);
    for id in 1..=config.num_anchors {
        let true_position =
            DVector::from_fn(dim, |_, _| rng.random_range(-config.half_side_m..=config.half_side_m));
        let sp = noise.anchor_pos_sigma;
        let reported_position = if sp > 0.0 {
            let gauss = rand_distr::Normal::new(0.0, sp).expect("valid std");
            &true_position + DVector::from_fn(dim, |_, _| rng.sample(gauss))
        } else {
            true_position.clone()
        };
        // anchors are pre-synchronized: residual offsets live at the
        // offset-estimate error scale and stay fixed over a campaign
        let residual = if noise.offset_sigma > 0.0 {
            let gauss = rand_distr::Normal::new(0.0, noise.offset_sigma).expect("valid std");
            rng.sample(gauss)
        } else {
            0.0
        };
        anchors.push(Anchor {
            id,
            true_position,
            reported_position,
            position_covariance: DMatrix::identity(dim, dim) * sp * sp,
            clock: ClockModel {
                drift: 1.0,
                offset: residual,
            },
            offset_estimate_sigma: noise.offset_sigma,
        });
    }
    let target_clock = ClockModel::sample(
        config.clock.drift_bound_ppm,
        config.clock.offset_bound_s,
        rng,
    );
    let trajectory = sample_trajectory(config, rng)?;
    let scenario = Scenario {
        dimension: dim,
        anchors,
        target_clock,
        trajectory,
        noise,
        timing: ProtocolTiming {
            frame_length: config.frame_length_s,
            slot_length: config.slot_length_s,
            num_slots: config.num_slots,
            num_frames: config.num_frames,
        },
    };
    scenario.validate()?;
    Ok(scenario)
}
