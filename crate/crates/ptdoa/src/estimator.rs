//! Instantaneous TDOA estimation.
//!
//! Time-varying TDOAs are modeled as short polynomials of the target's local
//! time. Pairing receptions of two anchors across successive frames (the
//! successive time difference strategy, STDS) cancels the target clock and
//! the low-order coefficient differences, leaving a linear system in the
//! TDOA polynomial coefficients that a weighted least-squares solve (MWLS)
//! estimates together with its covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::CampaignLog;

/// Whitened condition number above which a system is declared ill-posed.
pub const ILL_POSED_CONDITION: f64 = 1e12;

/// Ordered anchor pair `(first, second)`; the TDOA is `toa_first - toa_second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnchorPair {
    pub first: usize,
    pub second: usize,
}

impl AnchorPair {
    pub fn new(first: usize, second: usize) -> Result<Self> {
        if first == second {
            return Err(Error::IdenticalAnchors(first));
        }
        Ok(AnchorPair { first, second })
    }

    pub fn swapped(&self) -> AnchorPair {
        AnchorPair {
            first: self.second,
            second: self.first,
        }
    }

    /// Slot separation `first - second` in slots.
    pub fn slot_offset(&self) -> i64 {
        self.first as i64 - self.second as i64
    }
}

impl std::fmt::Display for AnchorPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.first, self.second)
    }
}

/// Named pair selections used throughout the experiments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSet {
    /// The single pair (1,2).
    Set1,
    /// All pairs (1,j), j > 1.
    Set2,
    /// All pairs (i,j), i < j.
    Set3,
    Explicit(Vec<AnchorPair>),
}

impl PairSet {
    pub fn pairs(&self, num_anchors: usize) -> Vec<AnchorPair> {
        match self {
            PairSet::Set1 => vec![AnchorPair { first: 1, second: 2 }],
            PairSet::Set2 => (2..=num_anchors)
                .map(|j| AnchorPair { first: 1, second: j })
                .collect(),
            PairSet::Set3 => {
                let mut v = Vec::new();
                for i in 1..=num_anchors {
                    for j in (i + 1)..=num_anchors {
                        v.push(AnchorPair { first: i, second: j });
                    }
                }
                v
            }
            PairSet::Explicit(v) => v.clone(),
        }
    }
}

/// Difference of the order-`l` parameter coefficients for one equation built
/// from receptions `(m, n, p, q)`.
///
/// Vanishes identically for `l = 0, 1`; for `l = 2` it is driven by the
/// variation of the reception intervals, which the successive pairing keeps
/// near zero under a periodic schedule.
pub fn coefficient_difference(l: u32, t_ui_m: f64, t_uj_n: f64, t_ui_p: f64, t_uj_q: f64) -> f64 {
    let pow = |x: f64| x.powi(l as i32);
    (pow(t_ui_m) - pow(t_uj_n)) * (t_ui_p - t_uj_q)
        - (pow(t_ui_p) - pow(t_uj_q)) * (t_ui_m - t_uj_n)
}

/// How the two frames of each equation are assigned to the two anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DifferencingScheme {
    /// Anchor `i` in frame `s` with anchor `j` in frame `s+1` and vice versa.
    /// Keeps the system well-posed.
    Successive,
    /// Both anchors within the same frame, then the next frame. Classical,
    /// but the coefficient matrix becomes rank-deficient.
    SameFrame,
}

/// Linear system for one pair: `b = A * gamma + eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationSystem {
    pub pair: AnchorPair,
    /// `(N_f - 1) x L` coefficient matrix.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Covariance of the combined equation noise, symmetric PSD.
    pub noise_covariance: DMatrix<f64>,
    /// Re-centering offset subtracted from every timestamp before powers.
    pub epoch: f64,
}

/// Estimated TDOA polynomial for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaPolyModel {
    pub pair: AnchorPair,
    /// Coefficients of `(t - epoch)^0 .. (t - epoch)^(L-1)`, seconds * s^-l.
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub epoch: f64,
}

impl TdoaPolyModel {
    pub fn num_coefficients(&self) -> usize {
        self.coefficients.len()
    }

    /// Instantaneous TDOA and its variance at target-local time `t`.
    pub fn evaluate(&self, t: f64) -> (f64, f64) {
        let nu = power_basis(t - self.epoch, self.num_coefficients());
        let tdoa = nu.dot(&self.coefficients);
        let variance = (&self.covariance * &nu).dot(&nu);
        (tdoa, variance)
    }
}

pub(crate) fn power_basis(t: f64, len: usize) -> DVector<f64> {
    let mut nu = DVector::zeros(len);
    let mut p = 1.0;
    for l in 0..len {
        nu[l] = p;
        p *= t;
    }
    nu
}

struct PairData {
    /// Offset-corrected transmit times, both anchors, re-centered.
    tx_i: Vec<f64>,
    tx_j: Vec<f64>,
    rx_i: Vec<f64>,
    rx_j: Vec<f64>,
    epoch: f64,
    offset_sigma_i: f64,
    offset_sigma_j: f64,
}

fn gather(log: &CampaignLog, pair: AnchorPair) -> Result<PairData> {
    let nf = log.num_frames();
    let mut tx_i = Vec::with_capacity(nf);
    let mut tx_j = Vec::with_capacity(nf);
    let mut rx_i = Vec::with_capacity(nf);
    let mut rx_j = Vec::with_capacity(nf);
    let mut offset_sigma_i = 0.0;
    let mut offset_sigma_j = 0.0;
    for m in 1..=nf {
        let mi = log.message(m, pair.first)?;
        let mj = log.message(m, pair.second)?;
        tx_i.push(mi.tx_timestamp - mi.offset_estimate);
        tx_j.push(mj.tx_timestamp - mj.offset_estimate);
        rx_i.push(log.reception(m, pair.first)?.rx_timestamp);
        rx_j.push(log.reception(m, pair.second)?.rx_timestamp);
        offset_sigma_i = mi.offset_sigma;
        offset_sigma_j = mj.offset_sigma;
    }
    let epoch = rx_i[0].min(rx_j[0]);
    for v in [&mut tx_i, &mut tx_j, &mut rx_i, &mut rx_j] {
        for t in v.iter_mut() {
            *t -= epoch;
        }
    }
    Ok(PairData {
        tx_i,
        tx_j,
        rx_i,
        rx_j,
        epoch,
        offset_sigma_i,
        offset_sigma_j,
    })
}

/// Build the pair's linear system with the given frame-pairing scheme.
///
/// Equation `s` (1-based, `s = 1..N_f-1`) combines the receptions of the two
/// anchors in frames `s` and `s+1`. The noise covariance is assembled from
/// the per-source coefficient rows evaluated at the measured timestamps.
pub fn build_system(
    log: &CampaignLog,
    pair: AnchorPair,
    num_coefficients: usize,
    scheme: DifferencingScheme,
) -> Result<EquationSystem> {
    if pair.first == pair.second {
        return Err(Error::IdenticalAnchors(pair.first));
    }
    let nf = log.num_frames();
    let required = (num_coefficients + 1).max(2);
    if nf < required {
        return Err(Error::InsufficientFrames {
            available: nf,
            required,
        });
    }
    let d = gather(log, pair)?;
    let rows = nf - 1;
    let mut a = DMatrix::zeros(rows, num_coefficients);
    let mut b = DVector::zeros(rows);
    // per-source noise coefficient rows; columns indexed by frame
    let mut c_phi_i = DMatrix::<f64>::zeros(rows, nf);
    let mut c_phi_j = DMatrix::<f64>::zeros(rows, nf);
    let mut c_w_i = DMatrix::<f64>::zeros(rows, nf);
    let mut c_w_j = DMatrix::<f64>::zeros(rows, nf);
    for s in 0..rows {
        // frame indices (m, n, p, q) of the four receptions in this equation:
        // anchor i frames m and p, anchor j frames n and q
        let (fm, fn_, fp, fq) = match scheme {
            DifferencingScheme::Successive => (s, s + 1, s + 1, s),
            DifferencingScheme::SameFrame => (s, s, s + 1, s + 1),
        };
        let g1 = d.tx_i[fm] - d.tx_j[fn_];
        let g2 = d.tx_i[fp] - d.tx_j[fq];
        let d1 = d.rx_i[fm] - d.rx_j[fn_];
        let d2 = d.rx_i[fp] - d.rx_j[fq];
        b[s] = g2 * d1 - g1 * d2;
        let mut pow_m = 1.0;
        let mut pow_p = 1.0;
        for l in 0..num_coefficients {
            a[(s, l)] = pow_m * d2 - pow_p * d1;
            pow_m *= d.rx_i[fm];
            pow_p *= d.rx_i[fp];
        }
        // offset-estimate errors enter through the corrected transmit times,
        // transmit noise with the opposite sign, reception noise through the
        // interval factors
        c_phi_i[(s, fm)] += d2;
        c_phi_i[(s, fp)] += -d1;
        c_phi_j[(s, fn_)] += -d2;
        c_phi_j[(s, fq)] += d1;
        c_w_i[(s, fm)] += g2;
        c_w_i[(s, fp)] += -g1;
        c_w_j[(s, fn_)] += -g2;
        c_w_j[(s, fq)] += g1;
    }
    let noise = log.scenario.noise;
    let tx_var = noise.tx_sigma * noise.tx_sigma;
    let rx_var = noise.rx_sigma * noise.rx_sigma;
    let phi_i_var = d.offset_sigma_i * d.offset_sigma_i;
    let phi_j_var = d.offset_sigma_j * d.offset_sigma_j;
    // transmit noise has the same coefficient rows as the offset errors up to
    // sign, so the Gram matrices coincide
    let noise_covariance = &c_phi_i * c_phi_i.transpose() * (phi_i_var + tx_var)
        + &c_phi_j * c_phi_j.transpose() * (phi_j_var + tx_var)
        + &c_w_i * c_w_i.transpose() * rx_var
        + &c_w_j * c_w_j.transpose() * rx_var;
    Ok(EquationSystem {
        pair,
        a,
        b,
        noise_covariance,
        epoch: d.epoch,
    })
}

/// Build the system with the successive time difference strategy.
pub fn build_stds_system(
    log: &CampaignLog,
    pair: AnchorPair,
    num_coefficients: usize,
) -> Result<EquationSystem> {
    build_system(log, pair, num_coefficients, DifferencingScheme::Successive)
}

/// Build the system with same-frame differencing. Diagnostic only: the
/// resulting coefficient matrix is rank-deficient by construction.
pub fn build_same_frame_system(
    log: &CampaignLog,
    pair: AnchorPair,
    num_coefficients: usize,
) -> Result<EquationSystem> {
    build_system(log, pair, num_coefficients, DifferencingScheme::SameFrame)
}

/// Whiten `A` and `b` by the Cholesky factor of the noise covariance.
///
/// A zero covariance (noise-free campaigns) degrades to unweighted least
/// squares; a nonzero covariance that is not positive definite is an error.
fn whiten(system: &EquationSystem) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let sigma = &system.noise_covariance;
    let max_abs = sigma.amax();
    if max_abs == 0.0 {
        return Ok((system.a.clone(), system.b.clone()));
    }
    let chol = nalgebra::linalg::Cholesky::new(sigma.clone()).ok_or(Error::InvalidCovariance)?;
    let l = chol.l();
    let aw = l
        .clone()
        .solve_lower_triangular(&system.a)
        .ok_or(Error::InvalidCovariance)?;
    let bw = l
        .solve_lower_triangular(&system.b)
        .ok_or(Error::InvalidCovariance)?;
    Ok((aw, bw))
}

/// Condition number of the whitened coefficient matrix.
pub fn whitened_condition(system: &EquationSystem) -> Result<f64> {
    let (aw, _) = whiten(system)?;
    let sv = aw.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smin == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(smax / smin)
}

/// Weighted least-squares solve of the pair system.
///
/// Whitens by the covariance Cholesky factor, then solves through a QR
/// factorization; the coefficient covariance is recovered from the
/// triangular factor. Never forms the normal equations explicitly.
pub fn solve_mwls(system: &EquationSystem) -> Result<TdoaPolyModel> {
    let rows = system.a.nrows();
    let cols = system.a.ncols();
    if rows < cols {
        return Err(Error::InsufficientFrames {
            available: rows + 1,
            required: cols + 1,
        });
    }
    let (aw, bw) = whiten(system)?;
    let sv = aw.singular_values();
    let smin = sv.min();
    let condition = if smin > 0.0 {
        sv.max() / smin
    } else {
        f64::INFINITY
    };
    if !condition.is_finite() || condition > ILL_POSED_CONDITION {
        return Err(Error::IllPosed { condition });
    }
    let qr = aw.qr();
    let r = qr.r();
    let qtb = qr.q().transpose() * &bw;
    let coefficients = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::IllPosed { condition })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(cols, cols))
        .ok_or(Error::IllPosed { condition })?;
    let covariance = &r_inv * r_inv.transpose();
    Ok(TdoaPolyModel {
        pair: system.pair,
        coefficients,
        covariance,
        epoch: system.epoch,
    })
}

/// Build, solve and evaluate one pair at the given target-local query times.
pub fn estimate_pair(
    log: &CampaignLog,
    pair: AnchorPair,
    num_coefficients: usize,
    query_times: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let model = solve_mwls(&build_stds_system(log, pair, num_coefficients)?)?;
    Ok(query_times.iter().map(|&t| model.evaluate(t)).collect())
}
