//! Experiment metrics.

use nalgebra::{DMatrix, DVector};

/// TDOA error metric: the mean over trials of the root of the per-trial
/// mean squared error, pooled over pairs and query times.
///
/// `per_trial_errors[t]` holds one trial's errors, rows = pairs,
/// columns = query times. The root sits inside the trial average.
pub fn rmse_tdoa(per_trial_errors: &[DMatrix<f64>]) -> f64 {
    if per_trial_errors.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for e in per_trial_errors {
        let n = (e.nrows() * e.ncols()) as f64;
        acc += (e.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    }
    acc / per_trial_errors.len() as f64
}

/// Position error metric: the mean Euclidean error norm over fixes.
pub fn rmse_position(fixes: &[DVector<f64>], truths: &[DVector<f64>]) -> f64 {
    assert_eq!(fixes.len(), truths.len());
    if fixes.is_empty() {
        return 0.0;
    }
    let sum: f64 = fixes
        .iter()
        .zip(truths)
        .map(|(f, t)| (f - t).norm())
        .sum();
    sum / fixes.len() as f64
}

/// Normalized estimation error squared of one fix.
pub fn nees(error: &DVector<f64>, covariance: &DMatrix<f64>) -> Option<f64> {
    covariance
        .clone()
        .try_inverse()
        .map(|inv| (inv * error).dot(error))
}

/// Mean and standard deviation of a sample.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn zero_errors_give_zero_rmse() {
        let trials = vec![DMatrix::zeros(3, 4); 5];
        assert_eq!(rmse_tdoa(&trials), 0.0);
        let fixes = vec![DVector::from_vec(vec![1.0, 2.0]); 3];
        assert_eq!(rmse_position(&fixes, &fixes), 0.0);
    }

    #[test]
    fn symmetric_two_trial_errors_average_to_magnitude() {
        let e = 3.5e-10;
        let trials = vec![
            DMatrix::from_element(1, 1, e),
            DMatrix::from_element(1, 1, -e),
        ];
        assert_relative_eq!(rmse_tdoa(&trials), e);
    }

    #[test]
    fn rmse_tdoa_matches_double_loop_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..100 {
            let trials: Vec<DMatrix<f64>> = (0..7)
                .map(|_| DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            // brute force: for each trial, sum squares with explicit loops
            let mut acc = 0.0;
            for t in &trials {
                let mut ss = 0.0;
                let mut count = 0.0;
                for r in 0..t.nrows() {
                    for c in 0..t.ncols() {
                        ss += t[(r, c)] * t[(r, c)];
                        count += 1.0;
                    }
                }
                acc += (ss / count).sqrt();
            }
            let expected = acc / trials.len() as f64;
            assert_relative_eq!(rmse_tdoa(&trials), expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn position_metric_is_mean_of_norms() {
        // 1-D errors of 3 and 4 average to 3.5, not the RMS 3.54
        let truths = vec![DVector::zeros(1), DVector::zeros(1)];
        let fixes = vec![
            DVector::from_vec(vec![3.0]),
            DVector::from_vec(vec![-4.0]),
        ];
        assert_relative_eq!(rmse_position(&fixes, &truths), 3.5);
    }

    #[test]
    fn position_metric_matches_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.random_range(1..20usize);
            let fixes: Vec<DVector<f64>> = (0..n)
                .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0)))
                .collect();
            let truths: Vec<DVector<f64>> = (0..n)
                .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0)))
                .collect();
            let mut acc = 0.0;
            for k in 0..n {
                let dx = fixes[k][0] - truths[k][0];
                let dy = fixes[k][1] - truths[k][1];
                acc += (dx * dx + dy * dy).sqrt();
            }
            assert_relative_eq!(
                rmse_position(&fixes, &truths),
                acc / n as f64,
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn rmse_never_below_bias() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let trials: Vec<DMatrix<f64>> = (0..50)
            .map(|_| DMatrix::from_fn(2, 2, |_, _| rng.random_range(0.5..1.5)))
            .collect();
        let rmse = rmse_tdoa(&trials);
        let bias = trials
            .iter()
            .map(|t| t.iter().sum::<f64>() / 4.0)
            .sum::<f64>()
            / trials.len() as f64;
        assert!(rmse >= bias.abs());
    }
}
