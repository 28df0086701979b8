//! Multilateration of the mobile target from instantaneous TDOA estimates.
//!
//! The solver is the classical two-stage closed-form weighted least squares
//! for hyperbolic positioning: stage one linearizes the range-difference
//! equations with the range to the reference anchor as an auxiliary unknown,
//! stage two refines the result through the quadratic constraint tying that
//! range to the position. Both stages weight by the TDOA covariance and
//! propagate anchor-position uncertainty; the linear error chain yields the
//! gain matrices used for the reported covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::position_covariance_prediction;
use crate::error::{Error, Result};
use crate::estimator::{build_stds_system, solve_mwls, AnchorPair, TdoaPolyModel};
use crate::protocol::CampaignLog;
use crate::SPEED_OF_LIGHT;

/// How the cross-pair covariance of simultaneous TDOA estimates is filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Per-pair variances only; off-diagonals zero.
    Diagonal,
    /// Off-diagonals set to half the average of the two variances, the
    /// shared-anchor coupling of estimates with a common reference.
    Structured,
}

/// Inputs to one multilateration: simultaneous TDOAs against a common
/// reference anchor, their covariance, and the advertised anchor geometry.
#[derive(Debug, Clone)]
pub struct TdoaFixInput {
    /// 0-based index of the reference anchor within the position arrays.
    pub reference: usize,
    /// TDOAs `toa_i - toa_ref` in ascending anchor order, seconds.
    pub tdoas: DVector<f64>,
    /// Covariance of `tdoas`, seconds squared.
    pub covariance: DMatrix<f64>,
    /// Reported anchor positions, all anchors including the reference.
    pub anchor_positions: Vec<DVector<f64>>,
    pub anchor_covariances: Vec<DMatrix<f64>>,
    /// Target-local query epoch the TDOAs refer to.
    pub epoch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// Root-mean-square range-difference residual at the solution, meters.
    pub residual_norm: f64,
    /// Stage two produced a negative squared coordinate; the stage-one
    /// solution was returned instead.
    pub stage2_fallback: bool,
}

/// Estimated target position with covariance and the solver's error gains.
#[derive(Debug, Clone)]
pub struct PositionFix {
    pub position: DVector<f64>,
    /// Covariance in meters squared, `G1 Q G1' + G2 Spa G2'`.
    pub covariance: DMatrix<f64>,
    pub epoch: f64,
    /// Sensitivity of the position to the TDOA vector, meters per second.
    pub gain_tdoa: DMatrix<f64>,
    /// Sensitivity to the stacked anchor position errors.
    pub gain_anchor: DMatrix<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Evaluate per-pair models at a common epoch and assemble the fix input.
///
/// Every model must share the same second (reference) anchor; models are
/// sorted by their first anchor id.
pub fn assemble_fix_input(
    models: &[TdoaPolyModel],
    t_query: f64,
    mode: CovarianceMode,
    anchor_positions: Vec<DVector<f64>>,
    anchor_covariances: Vec<DMatrix<f64>>,
) -> Result<TdoaFixInput> {
    if models.is_empty() {
        return Err(Error::TooFewAnchors {
            got: 1,
            required: 4,
            dimension: 2,
        });
    }
    let reference_id = models[0].pair.second;
    let mut sorted: Vec<&TdoaPolyModel> = models.iter().collect();
    sorted.sort_by_key(|m| m.pair.first);
    let n = sorted.len();
    let mut tdoas = DVector::zeros(n);
    let mut variances = DVector::zeros(n);
    for (k, model) in sorted.iter().enumerate() {
        if model.pair.second != reference_id {
            return Err(Error::InconsistentReference {
                expected: reference_id,
                got: model.pair.second,
            });
        }
        let (tau, var) = model.evaluate(t_query);
        tdoas[k] = tau;
        variances[k] = var;
    }
    let mut covariance = DMatrix::from_diagonal(&variances);
    if mode == CovarianceMode::Structured {
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    covariance[(a, b)] = 0.25 * (variances[a] + variances[b]);
                }
            }
        }
    }
    Ok(TdoaFixInput {
        reference: reference_id - 1,
        tdoas,
        covariance,
        anchor_positions,
        anchor_covariances,
        epoch: t_query,
    })
}

struct Stage1 {
    theta: DVector<f64>,
    covariance: DMatrix<f64>,
    /// Maps range-difference errors (meters) to theta.
    gain_d: DMatrix<f64>,
    /// Maps stacked anchor position errors to theta.
    gain_a: DMatrix<f64>,
}

fn stacked_anchor_covariance(covs: &[DMatrix<f64>], k: usize) -> DMatrix<f64> {
    let n = covs.len();
    let mut spa = DMatrix::zeros(k * n, k * n);
    for (idx, cov) in covs.iter().enumerate() {
        spa.view_mut((k * idx, k * idx), (k, k)).copy_from(cov);
    }
    spa
}

fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    nalgebra::linalg::Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or(Error::DegenerateGeometry)
}

/// Invert the stage-one normal matrix; falls back to a pseudo-inverse when
/// the range column degenerates (all TDOAs near zero), which still pins the
/// position block.
fn invert_normal(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = nalgebra::linalg::Cholesky::new(m.clone()) {
        return Ok(chol.inverse());
    }
    let svd = m.clone().svd(true, true);
    let tol = svd.singular_values.max() * 1e-12;
    svd.pseudo_inverse(tol).map_err(|_| Error::DegenerateGeometry)
}

fn stage1(
    input: &TdoaFixInput,
    d: &DVector<f64>,
    q_d: &DMatrix<f64>,
    dim: usize,
    others: &[usize],
) -> Result<Stage1> {
    let n = others.len();
    let s_ref = &input.anchor_positions[input.reference];
    let mut g = DMatrix::zeros(n, dim + 1);
    let mut h = DVector::zeros(n);
    for (row, &idx) in others.iter().enumerate() {
        let s_i = &input.anchor_positions[idx];
        for a in 0..dim {
            g[(row, a)] = 2.0 * (s_i[a] - s_ref[a]);
        }
        g[(row, dim)] = 2.0 * d[row];
        h[row] = s_i.norm_squared() - s_ref.norm_squared() - d[row] * d[row];
    }
    // first pass with the TDOA covariance alone, then reweight with the
    // range-dependent factors and anchor uncertainty at the provisional fix
    let mut weight = invert_spd(q_d)?;
    let mut theta = DVector::zeros(dim + 1);
    let mut normal_inv = DMatrix::zeros(dim + 1, dim + 1);
    let mut b_t = DMatrix::zeros(n, n);
    let mut d_a = DMatrix::zeros(n, dim * input.anchor_positions.len());
    for _pass in 0..3 {
        let gtw = g.transpose() * &weight;
        normal_inv = invert_normal(&(&gtw * &g))?;
        theta = &normal_inv * (&gtw * &h);
        let p0 = theta.rows(0, dim).into_owned();
        let r_ref = ((&p0 - s_ref) as DVector<f64>).norm().max(1e-9);
        let rho_ref = (&p0 - s_ref) / r_ref;
        d_a.fill(0.0);
        for (row, &idx) in others.iter().enumerate() {
            let s_i = &input.anchor_positions[idx];
            let r_i = ((&p0 - s_i) as DVector<f64>).norm().max(1e-9);
            let rho_i = (&p0 - s_i) / r_i;
            b_t[(row, row)] = r_i;
            for a in 0..dim {
                d_a[(row, dim * idx + a)] = -2.0 * r_i * rho_i[a];
                d_a[(row, dim * input.reference + a)] = 2.0 * r_ref * rho_ref[a];
            }
        }
        let spa = stacked_anchor_covariance(&input.anchor_covariances, dim);
        let cov_eps = &b_t * q_d * &b_t * 4.0 + &d_a * &spa * d_a.transpose();
        weight = invert_spd(&cov_eps)?;
    }
    let s1 = &normal_inv * g.transpose() * &weight;
    Ok(Stage1 {
        theta,
        covariance: normal_inv,
        gain_d: &s1 * &b_t * -2.0,
        gain_a: s1 * &d_a,
    })
}

/// Two-stage closed-form WLS hyperbolic solve.
pub fn multilaterate(input: &TdoaFixInput, dimension: usize) -> Result<PositionFix> {
    let n_anchors = input.anchor_positions.len();
    let required = dimension + 2;
    if n_anchors < required {
        return Err(Error::TooFewAnchors {
            got: n_anchors,
            required,
            dimension,
        });
    }
    let others: Vec<usize> = (0..n_anchors).filter(|&i| i != input.reference).collect();
    if input.tdoas.len() != others.len() {
        return Err(Error::InvalidScenario(format!(
            "{} TDOAs for {} non-reference anchors",
            input.tdoas.len(),
            others.len()
        )));
    }
    // work in range differences, meters
    let d = &input.tdoas * SPEED_OF_LIGHT;
    let q_d = &input.covariance * (SPEED_OF_LIGHT * SPEED_OF_LIGHT);
    let st1 = stage1(input, &d, &q_d, dimension, &others)?;
    let s_ref = &input.anchor_positions[input.reference];
    let p1 = st1.theta.rows(0, dimension).into_owned();
    let r1_est = st1.theta[dimension];

    let residual_norm = {
        let mut acc = 0.0;
        let r_ref = ((&p1 - s_ref) as DVector<f64>).norm();
        for (row, &idx) in others.iter().enumerate() {
            let r_i = (&p1 - &input.anchor_positions[idx]).norm();
            let res = d[row] - (r_i - r_ref);
            acc += res * res;
        }
        (acc / others.len() as f64).sqrt()
    };

    let fallback = |diag_fallback: bool| -> PositionFix {
        let g1_time = st1.gain_d.rows(0, dimension) * SPEED_OF_LIGHT;
        let g2 = st1.gain_a.rows(0, dimension).into_owned();
        let covariance = position_covariance_prediction(
            &g1_time.clone_owned(),
            &g2,
            &input.covariance,
            &input.anchor_covariances,
        );
        PositionFix {
            position: p1.clone(),
            covariance,
            epoch: input.epoch,
            gain_tdoa: g1_time.clone_owned(),
            gain_anchor: g2,
            diagnostics: SolveDiagnostics {
                residual_norm,
                stage2_fallback: diag_fallback,
            },
        }
    };

    // stage 2: enforce r_ref^2 = sum_k (p - s_ref)_k^2
    let u = &p1 - s_ref;
    if u.amin() == 0.0 || r1_est.abs() < 1e-9 {
        return Ok(fallback(true));
    }
    let mut h2 = DVector::zeros(dimension + 1);
    for a in 0..dimension {
        h2[a] = u[a] * u[a];
    }
    h2[dimension] = r1_est * r1_est;
    let mut g2m = DMatrix::zeros(dimension + 1, dimension);
    for a in 0..dimension {
        g2m[(a, a)] = 1.0;
        g2m[(dimension, a)] = 1.0;
    }
    let mut b2 = DMatrix::zeros(dimension + 1, dimension + 1);
    for a in 0..dimension {
        b2[(a, a)] = 2.0 * u[a];
    }
    b2[(dimension, dimension)] = 2.0 * r1_est;
    let cov_h2 = &b2 * &st1.covariance * b2.transpose();
    let w2 = match invert_spd(&cov_h2) {
        Ok(w) => w,
        Err(_) => return Ok(fallback(true)),
    };
    let n2_inv = match invert_spd(&(g2m.transpose() * &w2 * &g2m)) {
        Ok(m) => m,
        Err(_) => return Ok(fallback(true)),
    };
    let psi = &n2_inv * (g2m.transpose() * &w2 * &h2);
    if psi.iter().any(|&x| x.is_nan() || x <= 0.0) {
        return Ok(fallback(true));
    }
    let s2 = &n2_inv * g2m.transpose() * &w2;
    let mut position = s_ref.clone();
    let mut b3_inv = DMatrix::zeros(dimension, dimension);
    for a in 0..dimension {
        let root = psi[a].sqrt().copysign(u[a]);
        position[a] += root;
        b3_inv[(a, a)] = 1.0 / (2.0 * root);
    }
    // error chain through both stages, plus the direct reference-anchor terms
    let s2b2 = &s2 * &b2;
    let g1_d = &b3_inv * &s2b2 * &st1.gain_d;
    let mut gain_anchor = &b3_inv * &s2b2 * &st1.gain_a;
    // h2 depends on s_ref directly, and the final position adds s_ref back
    let mut e_r = DMatrix::zeros(dimension + 1, dimension);
    for a in 0..dimension {
        e_r[(a, a)] = -2.0 * u[a];
    }
    let direct = &b3_inv * &s2 * e_r;
    for a in 0..dimension {
        for bcol in 0..dimension {
            gain_anchor[(a, dimension * input.reference + bcol)] += direct[(a, bcol)]
                + if a == bcol { 1.0 } else { 0.0 };
        }
    }
    let gain_tdoa = g1_d * SPEED_OF_LIGHT;
    let covariance = position_covariance_prediction(
        &gain_tdoa,
        &gain_anchor,
        &input.covariance,
        &input.anchor_covariances,
    );
    Ok(PositionFix {
        position,
        covariance,
        epoch: input.epoch,
        gain_tdoa,
        gain_anchor,
        diagnostics: SolveDiagnostics {
            residual_norm,
            stage2_fallback: false,
        },
    })
}

/// Estimate the TDOA models of every pair `(i, reference)`; the models do
/// not depend on the query epoch and can serve any number of fixes.
pub fn pair_models(
    log: &CampaignLog,
    num_coefficients: usize,
    reference: usize,
) -> Result<Vec<TdoaPolyModel>> {
    let n = log.scenario.num_anchors();
    (1..=n)
        .filter(|&i| i != reference)
        .map(|i| {
            let pair = AnchorPair::new(i, reference)?;
            solve_mwls(&build_stds_system(log, pair, num_coefficients)?)
        })
        .collect()
}

/// Multilaterate from prebuilt pair models at one target-local epoch.
pub fn localize_models(
    log: &CampaignLog,
    models: &[TdoaPolyModel],
    t_query: f64,
    mode: CovarianceMode,
) -> Result<PositionFix> {
    let scenario = &log.scenario;
    let positions = scenario
        .anchors
        .iter()
        .map(|a| a.reported_position.clone())
        .collect();
    let covariances = scenario
        .anchors
        .iter()
        .map(|a| a.position_covariance.clone())
        .collect();
    let input = assemble_fix_input(models, t_query, mode, positions, covariances)?;
    multilaterate(&input, scenario.dimension)
}

/// Full pipeline for one query epoch: estimate all pairs against the
/// reference anchor, assemble the fix input, and multilaterate.
///
/// `t_query` is target-local time; pass the local time of a frame start to
/// match the ground-truth convention of the experiments.
pub fn localize_at(
    log: &CampaignLog,
    num_coefficients: usize,
    t_query: f64,
    mode: CovarianceMode,
    reference: usize,
) -> Result<PositionFix> {
    let models = pair_models(log, num_coefficients, reference)?;
    localize_models(log, &models, t_query, mode)
}

/// Localize at the start of frame `m` (1-based). The query epoch is the
/// target-local time of the frame start, matching the convention that ground
/// truth is the position at frame starts.
pub fn localize_at_frame(
    log: &CampaignLog,
    num_coefficients: usize,
    frame: usize,
    mode: CovarianceMode,
    reference: usize,
) -> Result<PositionFix> {
    let t_global = log.scenario.timing.tx_time(frame, 1);
    let t_query = log.scenario.target_clock.local_time(t_global);
    localize_at(log, num_coefficients, t_query, mode, reference)
}
