//! Closed-form bounds and theoretical error predictions.
//!
//! Two Cramér-Rao bounds are tracked for instantaneous TDOA estimation under
//! concurrent measurements: CRLB1 without a model constraint and CRLB2 with
//! the polynomial model, a scaled projector onto the polynomial basis. The
//! theoretical MWLS covariance uses the banded protocol structure of the
//! equation noise.

use nalgebra::{DMatrix, DVector};

use crate::clock::NoiseModel;
use crate::error::{Error, Result};
use crate::estimator::power_basis;

/// Variance of a single concurrent-measurement TDOA,
/// `2 (sigma_t^2 + sigma_r^2 + sigma_phi^2)`, seconds squared.
pub fn concurrent_tdoa_variance(noise: &NoiseModel) -> f64 {
    2.0 * (noise.tx_sigma * noise.tx_sigma
        + noise.rx_sigma * noise.rx_sigma
        + noise.offset_sigma * noise.offset_sigma)
}

/// Vandermonde-style basis matrix: row `m` is `[1, t_m, ..., t_m^(L-1)]`.
/// Times are re-centered on the first entry before forming powers.
pub fn basis_matrix(times: &[f64], num_coefficients: usize) -> DMatrix<f64> {
    let t0 = times.first().copied().unwrap_or(0.0);
    let mut v = DMatrix::zeros(times.len(), num_coefficients);
    for (m, &t) in times.iter().enumerate() {
        v.set_row(m, &power_basis(t - t0, num_coefficients).transpose());
    }
    v
}

/// Unconstrained bound: independent concurrent TDOA measurements.
pub fn crlb1(num_frames: usize, sigma_n_sq: f64) -> DMatrix<f64> {
    DMatrix::identity(num_frames, num_frames) * sigma_n_sq
}

fn basis_gram_inverse(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = v.transpose() * v;
    nalgebra::linalg::Cholesky::new(gram)
        .map(|c| c.inverse())
        .ok_or(Error::RepeatedTimes)
}

/// Bound on the polynomial coefficients under concurrent measurements.
pub fn crlb_coefficients(
    query_times: &[f64],
    num_coefficients: usize,
    sigma_n_sq: f64,
) -> Result<DMatrix<f64>> {
    if query_times.len() < num_coefficients {
        return Err(Error::InsufficientFrames {
            available: query_times.len(),
            required: num_coefficients,
        });
    }
    let v = basis_matrix(query_times, num_coefficients);
    Ok(basis_gram_inverse(&v)? * sigma_n_sq)
}

/// Model-constrained bound: `sigma_n^2` times the orthogonal projector onto
/// the span of the polynomial basis at the query times.
///
/// The projector is formed from a thin QR factorization of the
/// column-normalized basis so idempotency holds to machine precision even
/// for poorly conditioned monomial bases.
pub fn crlb2(
    query_times: &[f64],
    num_coefficients: usize,
    sigma_n_sq: f64,
) -> Result<DMatrix<f64>> {
    if query_times.len() < num_coefficients {
        return Err(Error::InsufficientFrames {
            available: query_times.len(),
            required: num_coefficients,
        });
    }
    let mut v = basis_matrix(query_times, num_coefficients);
    for mut col in v.column_iter_mut() {
        let n = col.norm();
        if n == 0.0 {
            return Err(Error::RepeatedTimes);
        }
        col /= n;
    }
    let qr = v.qr();
    let r = qr.r();
    let diag_max = (0..num_coefficients)
        .map(|i| r[(i, i)].abs())
        .fold(0.0f64, f64::max);
    if (0..num_coefficients).any(|i| r[(i, i)].abs() < 1e-12 * diag_max) {
        return Err(Error::RepeatedTimes);
    }
    let q = qr.q();
    Ok(&q * q.transpose() * sigma_n_sq)
}

/// Theoretical MWLS covariance structures for one pair under the periodic
/// protocol.
#[derive(Debug, Clone)]
pub struct TheoreticalMwls {
    /// Coefficient covariance.
    pub coefficient_covariance: DMatrix<f64>,
    /// Predicted TDOA variance at each query time.
    pub tdoa_variances: Vec<f64>,
    /// Basis Gram matrix of the observation times.
    pub f1: DMatrix<f64>,
    /// Alternating-sign correction; vanishing `f2` means the bound is met.
    pub f2: DMatrix<f64>,
    pub r1: f64,
    pub r2: f64,
}

/// Theoretical coefficient covariance from the banded noise structure.
///
/// `slot_offset` is the slot separation of the pair (first minus second);
/// `frame_length`/`slot_length` give `r1 = T_f + d*T_s`, `r2 = T_f - d*T_s`.
/// Observation times are the nominal reception epochs of the pair's first
/// anchor, re-centered like the estimator; `query_times` are offsets from the
/// same origin.
pub fn theoretical_mwls_covariance(
    slot_offset: i64,
    frame_length: f64,
    slot_length: f64,
    num_frames: usize,
    query_times: &[f64],
    num_coefficients: usize,
    noise: &NoiseModel,
) -> Result<TheoreticalMwls> {
    if num_frames < num_coefficients + 1 {
        return Err(Error::InsufficientFrames {
            available: num_frames,
            required: num_coefficients + 1,
        });
    }
    let sigma_n_sq = concurrent_tdoa_variance(noise);
    let r1 = frame_length + slot_offset as f64 * slot_length;
    let r2 = frame_length - slot_offset as f64 * slot_length;
    let rows = num_frames - 1;
    // tridiagonal noise covariance, unit variance factored out
    let mut tri = DMatrix::zeros(rows, rows);
    for s in 0..rows {
        tri[(s, s)] = r1 * r1 + r2 * r2;
        if s + 1 < rows {
            tri[(s, s + 1)] = r1 * r2;
            tri[(s + 1, s)] = r1 * r2;
        }
    }
    let mut band = DMatrix::zeros(rows, num_frames);
    for s in 0..rows {
        band[(s, s)] = r1;
        band[(s, s + 1)] = r2;
    }
    let chol = nalgebra::linalg::Cholesky::new(tri).ok_or(Error::InvalidCovariance)?;
    // D = band' * tri^{-1} * band (unit noise scale)
    let d = band.transpose() * chol.solve(&band);
    let obs_times: Vec<f64> = (0..num_frames).map(|m| m as f64 * frame_length).collect();
    let v = basis_matrix(&obs_times, num_coefficients);
    let f1 = v.transpose() * &v;
    let f = v.transpose() * &d * &v;
    let f2 = &f - &f1;
    let info = f / sigma_n_sq;
    let coefficient_covariance = nalgebra::linalg::Cholesky::new(info)
        .map(|c| c.inverse())
        .ok_or(Error::InvalidCovariance)?;
    let tdoa_variances = query_times
        .iter()
        .map(|&t| {
            let nu = power_basis(t, num_coefficients);
            (&coefficient_covariance * &nu).dot(&nu)
        })
        .collect();
    Ok(TheoreticalMwls {
        coefficient_covariance,
        tdoa_variances,
        f1,
        f2,
        r1,
        r2,
    })
}

/// TDOA covariance with a common reference anchor: diagonal `variance`,
/// off-diagonal `variance / 2`.
pub fn localization_q(num_anchors: usize, variance: f64) -> DMatrix<f64> {
    let n = num_anchors - 1;
    DMatrix::from_fn(n, n, |i, j| if i == j { variance } else { 0.5 * variance })
}

/// Per-frame TDOA covariance when the polynomial model is applied: the
/// frame's model-constrained variance replaces the raw one.
pub fn localization_q_framed(num_anchors: usize, frame_variances: &[f64]) -> Vec<DMatrix<f64>> {
    frame_variances
        .iter()
        .map(|&lam| localization_q(num_anchors, lam))
        .collect()
}

/// Geometry Jacobian of the TDOA vector (seconds) with respect to the target
/// position, rows `(rho_i - rho_ref)^T / c`.
fn tdoa_jacobian(
    anchor_positions: &[DVector<f64>],
    target: &DVector<f64>,
    reference: usize,
) -> Result<DMatrix<f64>> {
    let k = target.len();
    let n = anchor_positions.len();
    let r_ref = (target - &anchor_positions[reference]).norm();
    if r_ref == 0.0 {
        return Err(Error::DegenerateGeometry);
    }
    let rho_ref = (target - &anchor_positions[reference]) / r_ref;
    let mut j = DMatrix::zeros(n - 1, k);
    let mut row = 0;
    for (idx, pos) in anchor_positions.iter().enumerate() {
        if idx == reference {
            continue;
        }
        let r = (target - pos).norm();
        if r == 0.0 {
            return Err(Error::DegenerateGeometry);
        }
        let rho = (target - pos) / r;
        j.set_row(row, &((rho - &rho_ref) / crate::SPEED_OF_LIGHT).transpose());
        row += 1;
    }
    Ok(j)
}

/// Localization bound from TDOA noise alone: `(J' Q^{-1} J)^{-1}`, meters^2.
/// `q_seconds_sq` is the TDOA covariance in seconds squared.
pub fn localization_crlb(
    anchor_positions: &[DVector<f64>],
    target: &DVector<f64>,
    q_seconds_sq: &DMatrix<f64>,
    reference: usize,
) -> Result<DMatrix<f64>> {
    let j = tdoa_jacobian(anchor_positions, target, reference)?;
    let qinv = nalgebra::linalg::Cholesky::new(q_seconds_sq.clone())
        .ok_or(Error::InvalidCovariance)?
        .inverse();
    let fim = j.transpose() * qinv * &j;
    nalgebra::linalg::Cholesky::new(fim)
        .map(|c| c.inverse())
        .ok_or(Error::DegenerateGeometry)
}

/// Covariance of an efficient fix including anchor position uncertainty:
/// the TDOA-noise bound plus the anchor term propagated through the
/// efficient-estimator gains.
pub fn localization_bound(
    anchor_positions: &[DVector<f64>],
    anchor_covariances: &[DMatrix<f64>],
    target: &DVector<f64>,
    q_seconds_sq: &DMatrix<f64>,
    reference: usize,
) -> Result<DMatrix<f64>> {
    let k = target.len();
    let n = anchor_positions.len();
    let j = tdoa_jacobian(anchor_positions, target, reference)?;
    let qinv = nalgebra::linalg::Cholesky::new(q_seconds_sq.clone())
        .ok_or(Error::InvalidCovariance)?
        .inverse();
    let fim_inv = nalgebra::linalg::Cholesky::new(j.transpose() * &qinv * &j)
        .map(|c| c.inverse())
        .ok_or(Error::DegenerateGeometry)?;
    let g1 = &fim_inv * j.transpose() * &qinv;
    // TDOA sensitivity to anchor positions
    let r_ref = (target - &anchor_positions[reference]).norm();
    let rho_ref = (target - &anchor_positions[reference]) / r_ref;
    let mut dtau = DMatrix::zeros(n - 1, k * n);
    let mut row = 0;
    for (idx, pos) in anchor_positions.iter().enumerate() {
        if idx == reference {
            continue;
        }
        let r = (target - pos).norm();
        let rho = (target - pos) / r;
        for a in 0..k {
            dtau[(row, k * idx + a)] = -rho[a] / crate::SPEED_OF_LIGHT;
            dtau[(row, k * reference + a)] = rho_ref[a] / crate::SPEED_OF_LIGHT;
        }
        row += 1;
    }
    let g2 = -(&g1) * dtau;
    let mut spa = DMatrix::zeros(k * n, k * n);
    for (idx, cov) in anchor_covariances.iter().enumerate() {
        spa.view_mut((k * idx, k * idx), (k, k)).copy_from(cov);
    }
    Ok(&g1 * q_seconds_sq * g1.transpose() + &g2 * spa * g2.transpose())
}

/// Position covariance from the solver gains: `G1 Q G1' + G2 Spa G2'`.
pub fn position_covariance_prediction(
    gain_tdoa: &DMatrix<f64>,
    gain_anchor: &DMatrix<f64>,
    q_seconds_sq: &DMatrix<f64>,
    anchor_covariances: &[DMatrix<f64>],
) -> DMatrix<f64> {
    let k = gain_tdoa.nrows();
    let n = anchor_covariances.len();
    let mut spa = DMatrix::zeros(k * n, k * n);
    for (idx, cov) in anchor_covariances.iter().enumerate() {
        spa.view_mut((k * idx, k * idx), (k, k)).copy_from(cov);
    }
    gain_tdoa * q_seconds_sq * gain_tdoa.transpose() + gain_anchor * spa * gain_anchor.transpose()
}

/// Per-configuration bound table for one pair.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub query_times: Vec<f64>,
    pub crlb1_variance: Vec<f64>,
    pub crlb2_variance: Vec<f64>,
    pub theoretical_variance: Vec<f64>,
    /// `||F2|| / ||F1||`, small when the bound is attainable.
    pub f_ratio: f64,
    pub r1: f64,
    pub r2: f64,
}

/// Assemble the TDOA bound table for one pair at frame-indexed query times.
pub fn bound_report(
    slot_offset: i64,
    frame_length: f64,
    slot_length: f64,
    num_frames: usize,
    num_coefficients: usize,
    noise: &NoiseModel,
) -> Result<BoundReport> {
    let sigma_n_sq = concurrent_tdoa_variance(noise);
    let query_times: Vec<f64> = (0..num_frames).map(|m| m as f64 * frame_length).collect();
    let c2 = crlb2(&query_times, num_coefficients, sigma_n_sq)?;
    let theory = theoretical_mwls_covariance(
        slot_offset,
        frame_length,
        slot_length,
        num_frames,
        &query_times,
        num_coefficients,
        noise,
    )?;
    Ok(BoundReport {
        crlb1_variance: vec![sigma_n_sq; num_frames],
        crlb2_variance: (0..num_frames).map(|m| c2[(m, m)]).collect(),
        theoretical_variance: theory.tdoa_variances.clone(),
        f_ratio: theory.f2.norm() / theory.f1.norm(),
        r1: theory.r1,
        r2: theory.r2,
        query_times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn default_noise() -> NoiseModel {
        NoiseModel {
            tx_sigma: 0.0,
            rx_sigma: 1e-3f64.sqrt() / crate::SPEED_OF_LIGHT,
            offset_sigma: 1e-11,
            anchor_pos_sigma: 0.1,
        }
    }

    #[test]
    fn concurrent_variance_arithmetic() {
        assert_eq!(concurrent_tdoa_variance(&NoiseModel::ZERO), 0.0);
        let n = default_noise();
        let c = crate::SPEED_OF_LIGHT;
        assert_relative_eq!(
            concurrent_tdoa_variance(&n),
            2.0 * (1e-3 / (c * c) + 1e-22),
            max_relative = 1e-12
        );
        let doubled = NoiseModel {
            tx_sigma: 2.0 * n.tx_sigma,
            rx_sigma: 2.0 * n.rx_sigma,
            offset_sigma: 2.0 * n.offset_sigma,
            anchor_pos_sigma: n.anchor_pos_sigma,
        };
        assert_relative_eq!(
            concurrent_tdoa_variance(&doubled),
            4.0 * concurrent_tdoa_variance(&n),
            max_relative = 1e-12
        );
    }

    #[test]
    fn crlb1_is_scaled_identity() {
        let m = crlb1(4, 2.5);
        assert_eq!(m.nrows(), 4);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m[(i, j)], if i == j { 2.5 } else { 0.0 });
            }
        }
        assert_eq!(crlb1(1, 3.0)[(0, 0)], 3.0);
    }

    #[test]
    fn crlb2_is_projector_with_trace_l() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..100 {
            let nf = rng.random_range(2..10usize);
            let l = rng.random_range(1..=nf);
            let mut times: Vec<f64> = (0..nf)
                .map(|m| m as f64 * 0.1 + rng.random_range(-0.01..0.01))
                .collect();
            times.sort_by(f64::total_cmp);
            let sn2 = 3.7e-20;
            let c2 = crlb2(&times, l, sn2).unwrap();
            let p = &c2 / sn2;
            assert!(((&p * &p) - &p).norm() < 1e-10, "not idempotent");
            assert_relative_eq!(p.trace(), l as f64, max_relative = 1e-10);
            for m in 0..nf {
                assert!(c2[(m, m)] <= sn2 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn crlb2_full_order_is_identity_scale() {
        let times = [0.0, 0.1, 0.2];
        let sn2 = 2e-20;
        let c2 = crlb2(&times, 3, sn2).unwrap();
        assert!((c2 - crlb1(3, sn2)).norm() < 1e-28);
    }

    #[test]
    fn crlb2_constant_model_averages() {
        let times: Vec<f64> = (0..9).map(|m| m as f64 * 0.1).collect();
        let sn2 = 9e-20;
        let c2 = crlb2(&times, 1, sn2).unwrap();
        for m in 0..9 {
            assert_relative_eq!(c2[(m, m)], sn2 / 9.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn repeated_times_rejected() {
        // only two distinct epochs cannot support three coefficients
        let times = [0.0, 0.1, 0.1];
        assert!(crlb2(&times, 3, 1e-20).is_err());
        // a repeat with enough distinct epochs is still full rank
        assert!(crlb2(&[0.0, 0.1, 0.1, 0.3], 3, 1e-20).is_ok());
    }

    #[test]
    fn even_frame_count_meets_the_bound_for_constant_model() {
        // with equal adjacent weights the alternating correction vanishes for
        // even frame counts and the theoretical variance meets CRLB2 exactly
        let noise = default_noise();
        let sn2 = concurrent_tdoa_variance(&noise);
        for nf in [4usize, 6, 8] {
            let times: Vec<f64> = (0..nf).map(|m| m as f64 * 0.1).collect();
            let theory =
                theoretical_mwls_covariance(0, 0.1, 5e-3, nf, &times, 1, &noise).unwrap();
            assert!(theory.f2.norm() < 1e-9 * theory.f1.norm(), "f2 should vanish");
            let c2 = crlb2(&times, 1, sn2).unwrap();
            for m in 0..nf {
                assert_relative_eq!(
                    theory.tdoa_variances[m],
                    c2[(m, m)],
                    max_relative = 1e-6
                );
            }
        }
        // odd frame counts keep a gap above the bound
        let times: Vec<f64> = (0..5).map(|m| m as f64 * 0.1).collect();
        let theory = theoretical_mwls_covariance(0, 0.1, 5e-3, 5, &times, 1, &noise).unwrap();
        let c2 = crlb2(&times, 1, sn2).unwrap();
        assert!(theory.tdoa_variances[0] > c2[(0, 0)] * 1.01);
    }

    #[test]
    fn vanishing_slot_gap_recovers_alternating_correction() {
        // as the slot separation vanishes, D approaches I - uu'/N_f with the
        // alternating unit vector u
        let noise = default_noise();
        let nf = 6;
        let tiny = 1e-9;
        let theory = theoretical_mwls_covariance(
            -1,
            0.1,
            tiny,
            nf,
            &[0.0],
            2,
            &noise,
        )
        .unwrap();
        assert_relative_eq!(theory.r1, 0.1 - tiny, max_relative = 1e-12);
        assert_relative_eq!(theory.r2, 0.1 + tiny, max_relative = 1e-12);
        // rebuild F2 from the closed form and compare
        let times: Vec<f64> = (0..nf).map(|m| m as f64 * 0.1).collect();
        let v = basis_matrix(&times, 2);
        let u = DVector::from_fn(nf, |m, _| if m % 2 == 0 { -1.0 } else { 1.0 });
        let vu = v.transpose() * u;
        let expected = -(&vu * vu.transpose()) / nf as f64;
        assert!(
            (&theory.f2 - &expected).norm() < 1e-6 * expected.norm(),
            "f2 deviates from the closed form by {}",
            (&theory.f2 - &expected).norm() / expected.norm()
        );
    }

    #[test]
    fn q_pattern_and_positivity() {
        let q = localization_q(3, 4e-20);
        assert_eq!(q.nrows(), 2);
        assert_eq!(q[(0, 0)], 4e-20);
        assert_eq!(q[(0, 1)], 2e-20);
        let big = localization_q(10, 1.0);
        let eig = big.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > 0.0));
    }

    #[test]
    fn framed_q_with_full_order_model_reduces_to_plain() {
        let noise = default_noise();
        let sn2 = concurrent_tdoa_variance(&noise);
        let times = [0.0, 0.1, 0.2];
        // full-order model: projector is the identity, every frame variance
        // equals the raw one
        let c2 = crlb2(&times, 3, sn2).unwrap();
        let lams: Vec<f64> = (0..3).map(|m| c2[(m, m)]).collect();
        let framed = localization_q_framed(5, &lams);
        let plain = localization_q(5, sn2);
        for q in framed {
            assert!((&q - &plain).norm() < 1e-12 * plain.norm());
        }
    }

    #[test]
    fn symmetric_square_gives_isotropic_crlb() {
        let anchors: Vec<DVector<f64>> = [
            (1000.0, 0.0),
            (0.0, 1000.0),
            (-1000.0, 0.0),
            (0.0, -1000.0),
        ]
        .iter()
        .map(|&(x, y)| DVector::from_vec(vec![x, y]))
        .collect();
        let target = DVector::zeros(2);
        let q = localization_q(4, 1e-20);
        let crlb = localization_crlb(&anchors, &target, &q, 0).unwrap();
        assert_relative_eq!(crlb[(0, 0)], crlb[(1, 1)], max_relative = 1e-9);
        // scaling Q scales the bound linearly
        let crlb4 = localization_crlb(&anchors, &target, &(q * 4.0), 0).unwrap();
        assert_relative_eq!(crlb4[(0, 0)], 4.0 * crlb[(0, 0)], max_relative = 1e-9);
    }

    #[test]
    fn covariance_prediction_reduces_without_anchor_noise() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let g1 = DMatrix::from_fn(2, 5, |_, _| rng.random_range(-1.0..1.0));
        let g2 = DMatrix::from_fn(2, 12, |_, _| rng.random_range(-1.0..1.0));
        let m = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let q = &m * m.transpose() + DMatrix::identity(5, 5);
        let zero_cov = vec![DMatrix::zeros(2, 2); 6];
        let pred = position_covariance_prediction(&g1, &g2, &q, &zero_cov);
        let direct = &g1 * &q * g1.transpose();
        assert!((pred.clone() - direct).norm() < 1e-12 * pred.norm());
        // PSD for PSD inputs
        let covs = vec![DMatrix::identity(2, 2) * 0.01; 6];
        let pred2 = position_covariance_prediction(&g1, &g2, &q, &covs);
        let eig = pred2.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= -1e-12));
    }

    #[test]
    fn bound_report_orders_bounds() {
        let noise = default_noise();
        let rep = bound_report(-1, 0.1, 5e-3, 5, 2, &noise).unwrap();
        for m in 0..5 {
            assert!(rep.crlb2_variance[m] <= rep.crlb1_variance[m] * (1.0 + 1e-12));
            assert!(rep.theoretical_variance[m] >= rep.crlb2_variance[m] * (1.0 - 1e-9));
        }
    }

    #[test]
    fn tridiagonal_approximation_error_shrinks_with_slot_gap() {
        // condition (a): the alternating correction decays as the slot gap
        // shrinks relative to the frame; measured through the f-ratio of the
        // theoretical structure at fixed frame length
        let noise = default_noise();
        let mut last = f64::INFINITY;
        for ts in [5e-3, 2e-3, 1e-3, 1e-4] {
            let theory =
                theoretical_mwls_covariance(-1, 0.1, ts, 6, &[0.0], 1, &noise).unwrap();
            let gap = (theory.tdoa_variances[0]
                - crlb2(
                    &(0..6).map(|m| m as f64 * 0.1).collect::<Vec<_>>(),
                    1,
                    concurrent_tdoa_variance(&noise),
                )
                .unwrap()[(0, 0)])
            .abs();
            assert!(gap <= last * (1.0 + 1e-9), "gap must shrink with slot gap");
            last = gap;
        }
    }

    #[test]
    fn alternating_correction_decays_with_more_frames() {
        // the alternating structure makes the correction parity-dependent:
        // even frame counts nearly cancel it outright, odd ones shrink as
        // frames accumulate, so the decay holds within each parity class
        let noise = default_noise();
        for parity in [0usize, 1] {
            let mut last = f64::INFINITY;
            for nf in (3..=9usize).filter(|nf| nf % 2 == parity) {
                let theory =
                    theoretical_mwls_covariance(-1, 0.1, 5e-3, nf, &[0.0], 2, &noise).unwrap();
                let ratio = theory.f2.norm() / theory.f1.norm();
                assert!(
                    ratio < last,
                    "ratio {ratio} did not decrease at nf={nf}"
                );
                last = ratio;
            }
        }
        // and even counts sit far below the neighboring odd ones
        let odd = theoretical_mwls_covariance(-1, 0.1, 5e-3, 5, &[0.0], 2, &noise).unwrap();
        let even = theoretical_mwls_covariance(-1, 0.1, 5e-3, 6, &[0.0], 2, &noise).unwrap();
        assert!(even.f2.norm() / even.f1.norm() < 0.2 * odd.f2.norm() / odd.f1.norm());
    }
}
