//! Periodic broadcast protocol simulation.
//!
//! Each frame, every anchor transmits at the start of its slot and the target
//! records a noisy local reception timestamp. Propagation uses the range at
//! the transmit instant; the target displacement during the flight time is
//! far below the timestamp noise floor and is not modeled.

use std::io::{BufRead, Write};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{true_toa, Scenario};

/// Message payload broadcast by an anchor in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastMessage {
    pub anchor_id: usize,
    /// 1-based frame index.
    pub frame: usize,
    /// Noisy transmission timestamp in the anchor's local clock, seconds.
    pub tx_timestamp: f64,
    /// Anchor's estimate of its own clock offset at the transmit instant, seconds.
    pub offset_estimate: f64,
    /// Advertised std of the offset estimate, seconds.
    pub offset_sigma: f64,
    pub reported_position: DVector<f64>,
}

/// Target-side record of one reception.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceptionRecord {
    pub anchor_id: usize,
    pub frame: usize,
    /// Noisy reception timestamp in the target's local clock, seconds.
    pub rx_timestamp: f64,
    /// True global reception instant; ground truth kept for metrics only.
    pub true_rx_global: f64,
}

/// All messages and receptions of one campaign, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignLog {
    pub scenario: Scenario,
    /// `messages[m-1][i-1]` is anchor `i`'s message in frame `m`.
    pub messages: Vec<Vec<BroadcastMessage>>,
    /// `receptions[m-1][i-1]` is the target's record for that message.
    pub receptions: Vec<Vec<ReceptionRecord>>,
    /// Target position at each frame start, ground truth for metrics.
    pub frame_start_positions: Vec<DVector<f64>>,
}

impl CampaignLog {
    pub fn num_frames(&self) -> usize {
        self.scenario.timing.num_frames
    }

    pub fn message(&self, frame: usize, anchor: usize) -> Result<&BroadcastMessage> {
        self.messages
            .get(frame.wrapping_sub(1))
            .and_then(|f| f.get(anchor.wrapping_sub(1)))
            .ok_or(Error::MissingRecord { anchor, frame })
    }

    pub fn reception(&self, frame: usize, anchor: usize) -> Result<&ReceptionRecord> {
        self.receptions
            .get(frame.wrapping_sub(1))
            .and_then(|f| f.get(anchor.wrapping_sub(1)))
            .ok_or(Error::MissingRecord { anchor, frame })
    }

    /// Reception timestamps of one anchor across all frames, target-local.
    pub fn rx_timestamps(&self, anchor: usize) -> Result<Vec<f64>> {
        (1..=self.num_frames())
            .map(|m| self.reception(m, anchor).map(|r| r.rx_timestamp))
            .collect()
    }
}

fn draw<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma > 0.0 {
        rng.sample(Normal::new(0.0, sigma).expect("valid std"))
    } else {
        0.0
    }
}

/// Simulate one campaign. Deterministic given the RNG state.
pub fn simulate_campaign<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<CampaignLog> {
    scenario.validate()?;
    let timing = scenario.timing;
    let noise = scenario.noise;
    let mut messages = Vec::with_capacity(timing.num_frames);
    let mut receptions = Vec::with_capacity(timing.num_frames);
    let mut frame_start_positions = Vec::with_capacity(timing.num_frames);
    for m in 1..=timing.num_frames {
        frame_start_positions.push(scenario.trajectory.position_at(timing.tx_time(m, 1)));
        let mut frame_msgs = Vec::with_capacity(scenario.anchors.len());
        let mut frame_recs = Vec::with_capacity(scenario.anchors.len());
        for anchor in &scenario.anchors {
            let t = timing.tx_time(m, anchor.id);
            let toa = true_toa(anchor, &scenario.trajectory, t);
            let true_rx_global = t + toa;
            frame_msgs.push(BroadcastMessage {
                anchor_id: anchor.id,
                frame: m,
                tx_timestamp: anchor.clock.local_time(t) + draw(noise.tx_sigma, rng),
                offset_estimate: anchor.clock.offset_at(t)
                    + draw(anchor.offset_estimate_sigma, rng),
                offset_sigma: anchor.offset_estimate_sigma,
                reported_position: anchor.reported_position.clone(),
            });
            frame_recs.push(ReceptionRecord {
                anchor_id: anchor.id,
                frame: m,
                rx_timestamp: scenario.target_clock.local_time(true_rx_global)
                    + draw(noise.rx_sigma, rng),
                true_rx_global,
            });
        }
        messages.push(frame_msgs);
        receptions.push(frame_recs);
    }
    Ok(CampaignLog {
        scenario: scenario.clone(),
        messages,
        receptions,
        frame_start_positions,
    })
}

/// Same-frame timestamp difference, the classical TDOA estimate.
///
/// Exact for a stationary target with calibrated clocks; biased under motion
/// because the two receptions happen a slot interval apart.
pub fn naive_same_frame_tdoa(log: &CampaignLog, i: usize, j: usize, frame: usize) -> Result<f64> {
    if i == j {
        return Err(Error::IdenticalAnchors(i));
    }
    let mi = log.message(frame, i)?;
    let mj = log.message(frame, j)?;
    let ri = log.reception(frame, i)?;
    let rj = log.reception(frame, j)?;
    Ok((ri.rx_timestamp - (mi.tx_timestamp - mi.offset_estimate))
        - (rj.rx_timestamp - (mj.tx_timestamp - mj.offset_estimate)))
}

impl CampaignLog {
    /// Write the reception table: one row per (frame, anchor) in slot order.
    ///
    /// Floats use the shortest representation that parses back to the same
    /// bits, so a write/read cycle is exact.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.scenario.dimension;
        let pos_cols: Vec<String> = (0..dim).map(|k| format!("pos_{}", ["x", "y", "z"][k])).collect();
        writeln!(
            w,
            "frame,anchor,tx_local,rx_local,offset_est,offset_sigma,{}",
            pos_cols.join(",")
        )?;
        for (msgs, recs) in self.messages.iter().zip(&self.receptions) {
            for (msg, rec) in msgs.iter().zip(recs) {
                let pos: Vec<String> = msg
                    .reported_position
                    .iter()
                    .map(|v| format!("{v}"))
                    .collect();
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    msg.frame,
                    msg.anchor_id,
                    msg.tx_timestamp,
                    rec.rx_timestamp,
                    msg.offset_estimate,
                    msg.offset_sigma,
                    pos.join(",")
                )?;
            }
        }
        Ok(())
    }

    /// Scenario echo used as the JSON header of a stored campaign.
    pub fn scenario_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.scenario)?)
    }

    /// Rebuild a campaign from the scenario echo and the reception table.
    ///
    /// Ground-truth fields are recomputed from the scenario, which pins them
    /// bit-exactly since they are deterministic functions of it.
    pub fn read_csv<R: BufRead>(scenario: Scenario, reader: R) -> Result<CampaignLog> {
        scenario.validate()?;
        let timing = scenario.timing;
        let dim = scenario.dimension;
        let na = scenario.anchors.len();
        let mut messages: Vec<Vec<Option<BroadcastMessage>>> =
            vec![vec![None; na]; timing.num_frames];
        let mut receptions: Vec<Vec<Option<ReceptionRecord>>> =
            vec![vec![None; na]; timing.num_frames];
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    message: e.to_string(),
                })
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 + dim {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected {} fields, got {}", 6 + dim, fields.len()),
                });
            }
            let frame: usize = fields[0].trim().parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: "bad frame index".into(),
            })?;
            let anchor: usize = fields[1].trim().parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: "bad anchor index".into(),
            })?;
            if frame == 0 || frame > timing.num_frames || anchor == 0 || anchor > na {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("indices out of range: frame {frame}, anchor {anchor}"),
                });
            }
            let tx = parse(fields[2])?;
            let rx = parse(fields[3])?;
            let offset_estimate = parse(fields[4])?;
            let offset_sigma = parse(fields[5])?;
            let pos = DVector::from_iterator(
                dim,
                fields[6..6 + dim]
                    .iter()
                    .map(|s| parse(s))
                    .collect::<Result<Vec<_>>>()?,
            );
            let t = timing.tx_time(frame, anchor);
            let a = scenario.anchor(anchor)?;
            let true_rx_global = t + true_toa(a, &scenario.trajectory, t);
            messages[frame - 1][anchor - 1] = Some(BroadcastMessage {
                anchor_id: anchor,
                frame,
                tx_timestamp: tx,
                offset_estimate,
                offset_sigma,
                reported_position: pos,
            });
            receptions[frame - 1][anchor - 1] = Some(ReceptionRecord {
                anchor_id: anchor,
                frame,
                rx_timestamp: rx,
                true_rx_global,
            });
        }
        let unwrap_grid = |grid: Vec<Vec<Option<BroadcastMessage>>>| -> Result<Vec<Vec<BroadcastMessage>>> {
            grid.into_iter()
                .enumerate()
                .map(|(m, row)| {
                    row.into_iter()
                        .enumerate()
                        .map(|(i, c)| {
                            c.ok_or(Error::MissingRecord {
                                anchor: i + 1,
                                frame: m + 1,
                            })
                        })
                        .collect()
                })
                .collect()
        };
        let messages = unwrap_grid(messages)?;
        let receptions: Vec<Vec<ReceptionRecord>> = receptions
            .into_iter()
            .enumerate()
            .map(|(m, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(i, c)| {
                        c.ok_or(Error::MissingRecord {
                            anchor: i + 1,
                            frame: m + 1,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let frame_start_positions = (1..=timing.num_frames)
            .map(|m| scenario.trajectory.position_at(timing.tx_time(m, 1)))
            .collect();
        Ok(CampaignLog {
            scenario,
            messages,
            receptions,
            frame_start_positions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{ClockModel, NoiseModel};
    use crate::scenario::{
        sample_scenario, true_tdoa, Anchor, MotionConfig, NoiseConfig, ProtocolTiming,
        ScenarioConfig, Trajectory,
    };
    use crate::SPEED_OF_LIGHT;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn ideal_scenario(num_frames: usize, trajectory: Trajectory) -> Scenario {
        let positions = [
            (1000.0, 0.0),
            (-1000.0, 0.0),
            (0.0, 1000.0),
            (0.0, -1000.0),
        ];
        let anchors = positions
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| Anchor {
                id: k + 1,
                true_position: DVector::from_vec(vec![x, y]),
                reported_position: DVector::from_vec(vec![x, y]),
                position_covariance: DMatrix::zeros(2, 2),
                clock: ClockModel::IDEAL,
                offset_estimate_sigma: 0.0,
            })
            .collect();
        Scenario {
            dimension: 2,
            anchors,
            target_clock: ClockModel::IDEAL,
            trajectory,
            noise: NoiseModel::ZERO,
            timing: ProtocolTiming {
                frame_length: 0.1,
                slot_length: 5e-3,
                num_slots: 20,
                num_frames,
            },
        }
    }

    #[test]
    fn noiseless_static_receptions_differ_by_exact_toa() {
        let sc = ideal_scenario(
            4,
            Trajectory::Static {
                start: DVector::from_vec(vec![100.0, 50.0]),
            },
        );
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let log = simulate_campaign(&sc, &mut rng).unwrap();
        for m in 1..=4 {
            for i in 1..=4 {
                let msg = log.message(m, i).unwrap();
                let rec = log.reception(m, i).unwrap();
                let toa = true_toa(&sc.anchors[i - 1], &sc.trajectory, sc.timing.tx_time(m, i));
                assert_relative_eq!(rec.rx_timestamp - msg.tx_timestamp, toa, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn rx_global_times_strictly_increase_in_slot_order() {
        let config = ScenarioConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        for _ in 0..20 {
            let sc = sample_scenario(&config, &mut rng).unwrap();
            let log = simulate_campaign(&sc, &mut rng).unwrap();
            let mut last = f64::NEG_INFINITY;
            for frame in &log.receptions {
                for rec in frame {
                    assert!(rec.true_rx_global > last);
                    last = rec.true_rx_global;
                }
            }
        }
    }

    #[test]
    fn reception_intervals_track_the_slot_schedule() {
        let config = ScenarioConfig::default();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let sc = sample_scenario(&config, &mut rng).unwrap();
        let log = simulate_campaign(&sc, &mut rng).unwrap();
        let ts = sc.timing.slot_length;
        let max_baseline_delay =
            2.0 * 2.0f64.sqrt() * 1000.0 / SPEED_OF_LIGHT + 8.0 * sc.noise.rx_sigma;
        let drift_allowance = 3e-5 * ts;
        // same-frame intervals sit near the slot offset up to propagation
        for m in 1..=sc.timing.num_frames {
            for (i, j) in [(1usize, 2usize), (2, 7), (1, 10)] {
                let d = log.reception(m, i).unwrap().rx_timestamp
                    - log.reception(m, j).unwrap().rx_timestamp;
                let nominal = (i as f64 - j as f64) * ts;
                assert!(
                    (d - nominal).abs() <= max_baseline_delay + drift_allowance,
                    "interval {d} vs nominal {nominal}"
                );
            }
        }
        // and the interval is stable across successive frames: the variation
        // is bounded by the TDOA change over one frame plus timestamp noise
        let vmax = 10.0;
        let tol = 1.5 * vmax * sc.timing.frame_length / SPEED_OF_LIGHT + 8.0 * sc.noise.rx_sigma;
        for m in 1..sc.timing.num_frames {
            for (i, j) in [(1usize, 2usize), (2, 7), (1, 10)] {
                let d0 = log.reception(m, i).unwrap().rx_timestamp
                    - log.reception(m, j).unwrap().rx_timestamp;
                let d1 = log.reception(m + 1, i).unwrap().rx_timestamp
                    - log.reception(m + 1, j).unwrap().rx_timestamp;
                assert!((d0 - d1).abs() <= tol, "interval drift {} > {tol}", d0 - d1);
            }
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_logs() {
        let config = ScenarioConfig::default();
        let run = || {
            let mut rng = ChaCha12Rng::seed_from_u64(99);
            let sc = sample_scenario(&config, &mut rng).unwrap();
            simulate_campaign(&sc, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn naive_tdoa_exact_in_static_ideal_case() {
        let sc = ideal_scenario(
            2,
            Trajectory::Static {
                start: DVector::from_vec(vec![250.0, -80.0]),
            },
        );
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let log = simulate_campaign(&sc, &mut rng).unwrap();
        let est = naive_same_frame_tdoa(&log, 1, 2, 1).unwrap();
        let truth = true_tdoa(&sc.anchors[0], &sc.anchors[1], &sc.trajectory, 0.0).unwrap();
        assert_relative_eq!(est, truth, epsilon = 1e-16);
        // index swap negates
        let swapped = naive_same_frame_tdoa(&log, 2, 1, 1).unwrap();
        assert_relative_eq!(est, -swapped, epsilon = 1e-18);
    }

    #[test]
    fn naive_tdoa_biased_under_motion() {
        // anchors on the x axis, target driving toward anchor 1 at 10 m/s
        let mut sc = ideal_scenario(
            2,
            Trajectory::UniformLinear {
                start: DVector::from_vec(vec![0.0, 0.0]),
                velocity: DVector::from_vec(vec![10.0, 0.0]),
            },
        );
        // widen the slot gap: reuse anchors 1 and 10 positions via ids 1,2 at
        // slots 1 and 10 is not possible here, so compare receptions 45 ms
        // apart by using a 10-anchor scenario
        sc.anchors = (1..=10)
            .map(|id| Anchor {
                id,
                true_position: DVector::from_vec(vec![
                    if id == 1 { 1000.0 } else { -1000.0 - 10.0 * id as f64 },
                    0.0,
                ]),
                reported_position: DVector::from_vec(vec![
                    if id == 1 { 1000.0 } else { -1000.0 - 10.0 * id as f64 },
                    0.0,
                ]),
                position_covariance: DMatrix::zeros(2, 2),
                clock: ClockModel::IDEAL,
                offset_estimate_sigma: 0.0,
            })
            .collect();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let log = simulate_campaign(&sc, &mut rng).unwrap();
        let (i, j, m) = (1usize, 10usize, 1usize);
        let est = naive_same_frame_tdoa(&log, i, j, m).unwrap();
        let t_ref = log.reception(m, j).unwrap().true_rx_global;
        let truth = true_tdoa(&sc.anchors[i - 1], &sc.anchors[j - 1], &sc.trajectory, t_ref).unwrap();
        let bias = est - truth;
        // radial speed ~10 m/s toward anchor 1 over a 45 ms slot gap
        let scale = 10.0 * 0.045 / SPEED_OF_LIGHT;
        assert!(
            bias.abs() > 0.2 * scale && bias.abs() < 5.0 * scale,
            "bias {bias} not at the expected scale {scale}"
        );
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let config = ScenarioConfig {
            num_anchors: 5,
            num_frames: 3,
            motion: MotionConfig::UniformlyAccelerated {
                max_speed: 10.0,
                max_acceleration: 5.0,
            },
            noise: NoiseConfig::default(),
            ..ScenarioConfig::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let sc = sample_scenario(&config, &mut rng).unwrap();
        let log = simulate_campaign(&sc, &mut rng).unwrap();

        let mut csv = Vec::new();
        log.write_csv(&mut csv).unwrap();
        let json = log.scenario_json().unwrap();
        let scenario_back: Scenario = serde_json::from_str(&json).unwrap();
        let back = CampaignLog::read_csv(scenario_back, csv.as_slice()).unwrap();
        assert_eq!(log, back);

        // second write is byte-identical
        let mut csv2 = Vec::new();
        back.write_csv(&mut csv2).unwrap();
        assert_eq!(csv, csv2);
    }
}
