//! Error mean and covariance estimation from raw readings.
//!
//! Technical losses only show up on parent rows, so their mean and variance
//! are estimated from the conservation residual `Σ parents − Σ children` and
//! apportioned over the parents. Meter and clock-sync variances are closed
//! forms of each row's mean reading.

use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pca::{ErrorCovariance, PcaError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("parent and child row sets must both be non-empty")]
    EmptyPartition,
    #[error("row {0} is out of range or listed twice")]
    InvalidPartition(usize),
    #[error("variance vectors have different lengths")]
    LengthMismatch,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error(transparent)]
    Covariance(#[from] PcaError),
}

/// Estimated (or injected) error statistics. Vectors are indexed like the
/// rows of the readings matrix they describe; variances are diagonals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseStats {
    pub mu_lambda: Vec<f64>,
    pub sigma_lambda: Vec<f64>,
    pub sigma_epsilon: Vec<f64>,
    pub sigma_delta: Vec<f64>,
    pub sigma_e: Vec<f64>,
    pub mu_t: f64,
    pub var_lt: f64,
}

impl NoiseStats {
    /// Recomputes `sigma_e` as the element-wise sum of the three sources.
    pub fn refresh_total(&mut self) {
        self.sigma_e = self
            .sigma_lambda
            .iter()
            .zip(&self.sigma_epsilon)
            .zip(&self.sigma_delta)
            .map(|((l, e), d)| l + e + d)
            .collect();
    }
}

fn check_partition(n_rows: usize, parents: &[usize], children: &[usize]) -> Result<(), NoiseError> {
    if parents.is_empty() || children.is_empty() {
        return Err(NoiseError::EmptyPartition);
    }
    let mut seen = vec![false; n_rows];
    for &r in parents.iter().chain(children) {
        if r >= n_rows || std::mem::replace(&mut seen[r], true) {
            return Err(NoiseError::InvalidPartition(r));
        }
    }
    Ok(())
}

/// `Σ parents − Σ children` for every interval.
fn residuals(z: ArrayView2<'_, f64>, parents: &[usize], children: &[usize]) -> Array1<f64> {
    let mut r = Array1::<f64>::zeros(z.ncols());
    for &k in parents {
        r += &z.row(k);
    }
    for &i in children {
        r -= &z.row(i);
    }
    r
}

/// Shares `total` over `parents` in proportion to `weights`; uniform when the
/// weights sum to zero.
fn apportion(n_rows: usize, parents: &[usize], weights: &[f64], total: f64) -> Array1<f64> {
    let sum: f64 = weights.iter().sum();
    let mut out = Array1::<f64>::zeros(n_rows);
    for (&k, &w) in parents.iter().zip(weights) {
        out[k] = if sum != 0.0 {
            total * w / sum
        } else {
            total / parents.len() as f64
        };
    }
    out
}

/// Mean total loss `μ̂_t` and its apportionment `μ̂_λ` over the parents by
/// their share of the summed parent readings. Child entries are zero.
pub fn estimate_mu(
    z: ArrayView2<'_, f64>,
    parents: &[usize],
    children: &[usize],
) -> Result<(f64, Array1<f64>), NoiseError> {
    check_partition(z.nrows(), parents, children)?;
    if z.ncols() == 0 {
        return Err(NoiseError::TooFewSamples { needed: 1, got: 0 });
    }
    let mu_t = residuals(z, parents, children).mean().expect("non-empty");
    let sums: Vec<f64> = parents.iter().map(|&k| z.row(k).sum()).collect();
    Ok((mu_t, apportion(z.nrows(), parents, &sums, mu_t)))
}

/// Subtracts `mu_lambda` from every column.
pub fn separate_mean(z: ArrayView2<'_, f64>, mu_lambda: &Array1<f64>) -> ndarray::Array2<f64> {
    let mut out = z.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        col -= mu_lambda;
    }
    out
}

/// Total-loss variance `Var[l_t]` (population form) and its apportionment
/// `Σ̂_λ` over the parents by each parent's raw reading variance.
pub fn estimate_sigma_lambda(
    z: ArrayView2<'_, f64>,
    parents: &[usize],
    children: &[usize],
    mu_t: f64,
) -> Result<(f64, Array1<f64>), NoiseError> {
    check_partition(z.nrows(), parents, children)?;
    if z.ncols() < 2 {
        return Err(NoiseError::TooFewSamples {
            needed: 2,
            got: z.ncols(),
        });
    }
    let n = z.ncols() as f64;
    let var_lt = residuals(z, parents, children)
        .iter()
        .map(|r| (r - mu_t).powi(2))
        .sum::<f64>()
        / n;
    let variances: Vec<f64> = parents.iter().map(|&k| z.row(k).var(0.0)).collect();
    Ok((var_lt, apportion(z.nrows(), parents, &variances, var_lt)))
}

/// Meter-error variance per row: `(α·z̄_i / 300)²`.
pub fn estimate_sigma_epsilon(z: ArrayView2<'_, f64>, accuracy_class_pct: f64) -> Array1<f64> {
    row_means(z).mapv(|m| (accuracy_class_pct * m / 300.0).powi(2))
}

/// Clock-sync variance per row: `(z̄_i / (60·T))²`.
pub fn estimate_sigma_delta(z: ArrayView2<'_, f64>, interval_minutes: f64) -> Array1<f64> {
    row_means(z).mapv(|m| (m / (60.0 * interval_minutes)).powi(2))
}

fn row_means(z: ArrayView2<'_, f64>) -> Array1<f64> {
    z.mean_axis(Axis(1))
        .unwrap_or_else(|| Array1::zeros(z.nrows()))
}

/// `Σ_e = Σ_λ + Σ_ε + Σ_δ`, floored and factorised.
pub fn combine(
    sigma_lambda: &Array1<f64>,
    sigma_epsilon: &Array1<f64>,
    sigma_delta: &Array1<f64>,
) -> Result<ErrorCovariance, NoiseError> {
    if sigma_lambda.len() != sigma_epsilon.len() || sigma_lambda.len() != sigma_delta.len() {
        return Err(NoiseError::LengthMismatch);
    }
    let total = sigma_lambda + sigma_epsilon + sigma_delta;
    Ok(ErrorCovariance::floored(total.to_vec())?)
}

/// Everything the pipeline needs before whitening: all statistics plus the
/// mean-separated readings.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub stats: NoiseStats,
    pub separated: ndarray::Array2<f64>,
    pub covariance: ErrorCovariance,
}

/// Mean estimate, mean separation, the three variance estimates and their
/// combination, in that order.
pub fn preprocess(
    z: ArrayView2<'_, f64>,
    parents: &[usize],
    children: &[usize],
    accuracy_class_pct: f64,
    interval_minutes: f64,
) -> Result<Preprocessed, NoiseError> {
    let (mu_t, mu_lambda) = estimate_mu(z, parents, children)?;
    let separated = separate_mean(z, &mu_lambda);
    let (var_lt, sigma_lambda) = estimate_sigma_lambda(z, parents, children, mu_t)?;
    let sigma_epsilon = estimate_sigma_epsilon(z, accuracy_class_pct);
    let sigma_delta = estimate_sigma_delta(z, interval_minutes);
    let covariance = combine(&sigma_lambda, &sigma_epsilon, &sigma_delta)?;
    let mut stats = NoiseStats {
        mu_lambda: mu_lambda.to_vec(),
        sigma_lambda: sigma_lambda.to_vec(),
        sigma_epsilon: sigma_epsilon.to_vec(),
        sigma_delta: sigma_delta.to_vec(),
        sigma_e: Vec::new(),
        mu_t,
        var_lt,
    };
    stats.refresh_total();
    Ok(Preprocessed {
        stats,
        separated,
        covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn noise_free_mu_is_zero() {
        // rows: parent, child, child
        let z = array![[3.0, 5.0, 7.0], [1.0, 2.0, 3.0], [2.0, 3.0, 4.0]];
        let (mu_t, mu) = estimate_mu(z.view(), &[0], &[1, 2]).unwrap();
        assert_eq!(mu_t, 0.0);
        assert!(mu.iter().all(|&v| v == 0.0));
        let (var, sig) = estimate_sigma_lambda(z.view(), &[0], &[1, 2], mu_t).unwrap();
        assert_eq!(var, 0.0);
        assert!(sig.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mu_apportioned_by_parent_sums() {
        // Parents sum to 600 and 400 over two intervals; residual mean 10.
        let z = array![[300.0, 300.0], [200.0, 200.0], [490.0, 490.0]];
        let (mu_t, mu) = estimate_mu(z.view(), &[0, 1], &[2]).unwrap();
        assert_relative_eq!(mu_t, 10.0);
        assert_relative_eq!(mu[0], 6.0);
        assert_relative_eq!(mu[1], 4.0);
        assert_eq!(mu[2], 0.0);
    }

    #[test]
    fn zero_parent_sums_apportion_uniformly() {
        let z = array![[0.0, 0.0], [0.0, 0.0], [-2.0, -2.0]];
        let (mu_t, mu) = estimate_mu(z.view(), &[0, 1], &[2]).unwrap();
        assert_relative_eq!(mu_t, 2.0);
        assert_relative_eq!(mu[0], 1.0);
        assert_relative_eq!(mu[1], 1.0);
    }

    #[test]
    fn separation_subtracts_parent_means_only() {
        let z = array![[100.0, 105.0], [40.0, 41.0]];
        let out = separate_mean(z.view(), &array![5.0, 0.0]);
        assert_eq!(out, array![[95.0, 100.0], [40.0, 41.0]]);
        assert_eq!(separate_mean(z.view(), &array![0.0, 0.0]), z);
    }

    #[test]
    fn sigma_lambda_apportioned_by_variance() {
        // Parent variances 30 and 10 (population), Var[l_t] = 8 supplied via
        // a residual of ±sqrt(8) alternating.
        let a = 30f64.sqrt();
        let b = 10f64.sqrt();
        let r = 8f64.sqrt();
        let mut z = Array2::<f64>::zeros((3, 4));
        let signs = [1.0, -1.0, 1.0, -1.0];
        let signs_b = [1.0, 1.0, -1.0, -1.0];
        for j in 0..4 {
            z[[0, j]] = 100.0 + a * signs[j];
            z[[1, j]] = 100.0 + b * signs_b[j];
            // child = parents − residual
            z[[2, j]] = z[[0, j]] + z[[1, j]] - r * signs[j] * signs_b[j];
        }
        let (mu_t, _) = estimate_mu(z.view(), &[0, 1], &[2]).unwrap();
        let (var, sig) = estimate_sigma_lambda(z.view(), &[0, 1], &[2], mu_t).unwrap();
        assert_relative_eq!(var, 8.0, max_relative = 1e-12);
        assert_relative_eq!(sig[0], 6.0, max_relative = 1e-12);
        assert_relative_eq!(sig[1], 2.0, max_relative = 1e-12);
        assert_eq!(sig[2], 0.0);
    }

    #[test]
    fn closed_form_variances() {
        let z = array![[600.0, 600.0], [900.0, 900.0], [0.0, 0.0]];
        let eps = estimate_sigma_epsilon(z.view(), 0.5);
        assert_relative_eq!(eps[0], 1.0);
        assert_eq!(eps[2], 0.0);
        let delta = estimate_sigma_delta(z.view(), 15.0);
        assert_relative_eq!(delta[1], 1.0);
        assert_eq!(delta[2], 0.0);
        let delta2 = estimate_sigma_delta(z.view(), 30.0);
        assert_relative_eq!(delta2[1], delta[1] / 4.0);
        assert!(eps[1] > eps[0]);
    }

    #[test]
    fn combine_sums_then_floors() {
        let cov = combine(&array![1.0, 0.0], &array![2.0, 1.0], &array![3.0, 4.0]).unwrap();
        assert_eq!(cov.variances(), &[6.0, 5.0]);
        let zeros = combine(&array![0.0, 0.0], &array![0.0, 0.0], &array![0.0, 0.0]).unwrap();
        assert!(zeros.variances().iter().all(|&v| v > 0.0));
        assert!(matches!(
            combine(&array![-1.0], &array![0.0], &array![0.0]),
            Err(NoiseError::Covariance(PcaError::NegativeVariance { .. }))
        ));
        assert_eq!(
            combine(&array![1.0], &array![0.0, 1.0], &array![0.0]).unwrap_err(),
            NoiseError::LengthMismatch
        );
    }

    #[test]
    fn partition_errors() {
        let z = Array2::<f64>::zeros((3, 2));
        assert_eq!(estimate_mu(z.view(), &[], &[1]), Err(NoiseError::EmptyPartition));
        assert_eq!(
            estimate_mu(z.view(), &[0], &[0]),
            Err(NoiseError::InvalidPartition(0))
        );
        assert_eq!(
            estimate_sigma_lambda(z.view(), &[0], &[], 0.0),
            Err(NoiseError::EmptyPartition)
        );
    }

    fn readings() -> impl Strategy<Value = (Array2<f64>, Vec<usize>)> {
        (2usize..6, 3usize..12).prop_flat_map(|(rows, cols)| {
            (
                proptest::collection::vec(0.0f64..1000.0, rows * cols)
                    .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap()),
                Just((0..cols).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
    }

    proptest! {
        #[test]
        fn apportionment_identities((z, _) in readings()) {
            let parents = [0usize];
            let children: Vec<usize> = (1..z.nrows()).collect();
            let parents2: Vec<usize> = (0..z.nrows() - 1).collect();
            let children2 = [z.nrows() - 1];
            for (p, c) in [(&parents[..], &children[..]), (&parents2[..], &children2[..])] {
                let (mu_t, mu) = estimate_mu(z.view(), p, c).unwrap();
                prop_assert!((mu.sum() - mu_t).abs() <= 1e-9 * mu_t.abs().max(1.0));
                let (var, sig) = estimate_sigma_lambda(z.view(), p, c, mu_t).unwrap();
                prop_assert!((sig.sum() - var).abs() <= 1e-9 * var.max(1.0));
                prop_assert!(sig.iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn estimators_ignore_time_order((z, perm) in readings()) {
            let shuffled = z.select(Axis(1), &perm);
            let p = [0usize];
            let c: Vec<usize> = (1..z.nrows()).collect();
            let a = preprocess(z.view(), &p, &c, 0.5, 15.0).unwrap().stats;
            let b = preprocess(shuffled.view(), &p, &c, 0.5, 15.0).unwrap().stats;
            let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(u, v)| (u - v).abs() <= 1e-9 * u.abs().max(1.0));
            prop_assert!((a.mu_t - b.mu_t).abs() <= 1e-9 * a.mu_t.abs().max(1.0));
            prop_assert!((a.var_lt - b.var_lt).abs() <= 1e-9 * a.var_lt.max(1.0));
            prop_assert!(close(&a.sigma_e, &b.sigma_e));
            prop_assert!(close(&a.mu_lambda, &b.mu_lambda));
        }
    }
}
