//! Whitened PCA model identification.
//!
//! Given readings `Z` (variables by samples) with diagonal error covariance
//! `Σ_e = L·Lᵀ`, the data are scaled to `Z_s = L⁻¹·Z`, the left singular
//! vectors belonging to the `p` smallest singular values of `Z_s` span the
//! whitened constraint space, and `Ĉ = U₂ₛᵀ·L⁻¹` maps them back. `Ĉ` is only
//! defined up to an invertible row mixing; the regression matrix
//! `R̂ = −Ĉ_d⁻¹·Ĉ_i` that expresses the dependent variables through the
//! independent ones is not, which is what makes it comparable entry by entry
//! with a physical model.

use faer::linalg::solvers::Solve;
use faer::Mat;
use ndarray::{Array2, ArrayView2, Axis};
use thiserror::Error;

/// Variances below this fraction of the largest are raised to it.
pub const VARIANCE_FLOOR_REL: f64 = 1e-12;

/// `Ĉ_d` with a larger 2-norm condition number is treated as singular.
pub const MAX_DEPENDENT_CONDITION: f64 = 1e10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PcaError {
    #[error("variance {value} at index {index} is negative or not finite")]
    NegativeVariance { index: usize, value: f64 },
    #[error("variance at index {index} is zero; covariance is not positive definite")]
    SingularCovariance { index: usize },
    #[error("{samples} samples cannot identify {variables} variables (need samples >= variables)")]
    InsufficientSamples { samples: usize, variables: usize },
    #[error("constraint count {p} must satisfy 1 <= p < {n}")]
    InvalidConstraintCount { p: usize, n: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dependent block of the constraint matrix is singular (condition number {condition:e})")]
    SingularDependentBlock { condition: f64 },
    #[error("singular value decomposition did not converge")]
    Decomposition,
}

/// Diagonal error covariance with its (diagonal) Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorCovariance {
    variances: Vec<f64>,
    factor: Vec<f64>,
}

impl ErrorCovariance {
    /// Takes the diagonal as given; zeros are kept (and rejected by [`whiten`]).
    pub fn new(variances: Vec<f64>) -> Result<Self, PcaError> {
        if let Some((index, &value)) = variances
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(PcaError::NegativeVariance { index, value });
        }
        let factor = variances.iter().map(|v| v.sqrt()).collect();
        Ok(Self { variances, factor })
    }

    /// Raises every entry to at least `VARIANCE_FLOOR_REL` times the largest
    /// (times 1 when all are zero), which makes the result positive definite.
    pub fn floored(variances: Vec<f64>) -> Result<Self, PcaError> {
        let raw = Self::new(variances)?;
        let max = raw.variances.iter().copied().fold(0.0, f64::max);
        let floor = VARIANCE_FLOOR_REL * if max > 0.0 { max } else { 1.0 };
        Self::new(raw.variances.into_iter().map(|v| v.max(floor)).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self {
            variances: vec![1.0; n],
            factor: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Diagonal of `L`.
    pub fn factor_diagonal(&self) -> &[f64] {
        &self.factor
    }

    /// Dense lower-triangular `L` with `Σ_e = L·Lᵀ`.
    pub fn cholesky_factor(&self) -> Array2<f64> {
        Array2::from_diag(&ndarray::Array1::from(self.factor.clone()))
    }

    /// Same variances restricted to `rows`, in that order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            variances: rows.iter().map(|&r| self.variances[r]).collect(),
            factor: rows.iter().map(|&r| self.factor[r]).collect(),
        }
    }

    fn check_definite(&self) -> Result<(), PcaError> {
        match self.factor.iter().position(|&l| l == 0.0) {
            Some(index) => Err(PcaError::SingularCovariance { index }),
            None => Ok(()),
        }
    }
}

/// `Z_s = L⁻¹·Z`; for diagonal `L` each row is divided by its standard deviation.
pub fn whiten(z: ArrayView2<'_, f64>, cov: &ErrorCovariance) -> Result<Array2<f64>, PcaError> {
    if z.nrows() != cov.len() {
        return Err(PcaError::ShapeMismatch(format!(
            "{} rows vs covariance of size {}",
            z.nrows(),
            cov.len()
        )));
    }
    cov.check_definite()?;
    let mut out = z.to_owned();
    for (mut row, &l) in out.axis_iter_mut(Axis(0)).zip(&cov.factor) {
        row /= l;
    }
    Ok(out)
}

/// Singular spectrum and constraint basis of whitened data.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceFit {
    /// All `n` singular values, descending.
    pub singular_values: Vec<f64>,
    /// `U₂ₛᵀ`: orthonormal rows spanning the `p` least-variance directions.
    pub constraint_basis: Array2<f64>,
}

impl SubspaceFit {
    pub fn n_constraints(&self) -> usize {
        self.constraint_basis.nrows()
    }

    /// Ratio of the smallest retained to the largest discarded singular value.
    pub fn spectral_gap(&self) -> f64 {
        let n = self.singular_values.len();
        let p = self.n_constraints();
        let kept = self.singular_values[n - p - 1];
        let dropped = self.singular_values[n - p];
        if dropped > 0.0 {
            kept / dropped
        } else {
            f64::INFINITY
        }
    }
}

/// Left singular vectors of the `p` smallest singular values of `zs`.
///
/// Computed from a thin QR of `zsᵀ` followed by the SVD of the square factor,
/// so the `n × N` data matrix is never squared.
pub fn fit(zs: ArrayView2<'_, f64>, p: usize) -> Result<SubspaceFit, PcaError> {
    let (n, samples) = zs.dim();
    if samples < n {
        return Err(PcaError::InsufficientSamples {
            samples,
            variables: n,
        });
    }
    if p == 0 || p >= n {
        return Err(PcaError::InvalidConstraintCount { p, n });
    }

    let tall = Mat::<f64>::from_fn(samples, n, |j, i| zs[[i, j]]);
    let r = tall.qr().R().to_owned();
    // zs = Rᵀ·Qᵀ, so the left singular vectors of zs are those of Rᵀ.
    let svd = r
        .transpose()
        .svd()
        .map_err(|_| PcaError::Decomposition)?;
    let s = svd.S().column_vector();
    let u = svd.U();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let singular_values = order.iter().map(|&k| s[k]).collect();
    let tail = &order[n - p..];
    let constraint_basis = Array2::from_shape_fn((p, n), |(row, col)| u[(col, tail[row])]);
    Ok(SubspaceFit {
        singular_values,
        constraint_basis,
    })
}

/// `Ĉ = U₂ₛᵀ·L⁻¹`: column `j` is divided by `L_jj`.
pub fn unwhiten_constraints(
    basis: ArrayView2<'_, f64>,
    cov: &ErrorCovariance,
) -> Result<Array2<f64>, PcaError> {
    if basis.ncols() != cov.len() {
        return Err(PcaError::ShapeMismatch(format!(
            "{} columns vs covariance of size {}",
            basis.ncols(),
            cov.len()
        )));
    }
    cov.check_definite()?;
    let mut out = basis.to_owned();
    for (mut col, &l) in out.axis_iter_mut(Axis(1)).zip(&cov.factor) {
        col /= l;
    }
    Ok(out)
}

/// Regression matrix together with the conditioning of the block it inverted.
#[derive(Clone, Debug, PartialEq)]
pub struct Regression {
    pub matrix: Array2<f64>,
    pub dependent_condition: f64,
}

fn to_faer(a: ArrayView2<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// `R̂ = −Ĉ_d⁻¹·Ĉ_i`, so that `z_d = R̂·z_i` on noise-free data.
pub fn regression(
    c_hat: ArrayView2<'_, f64>,
    dependent: &[usize],
    independent: &[usize],
) -> Result<Regression, PcaError> {
    let (p, n) = c_hat.dim();
    if dependent.len() != p || dependent.len() + independent.len() != n {
        return Err(PcaError::ShapeMismatch(format!(
            "{} dependent + {} independent indices for a {p} x {n} constraint matrix",
            dependent.len(),
            independent.len()
        )));
    }
    let c_d = to_faer(c_hat.select(Axis(1), dependent).view());
    let c_i = to_faer(c_hat.select(Axis(1), independent).view());

    let sv = c_d
        .singular_values()
        .map_err(|_| PcaError::Decomposition)?;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_DEPENDENT_CONDITION) {
        return Err(PcaError::SingularDependentBlock { condition });
    }

    let x = c_d.partial_piv_lu().solve(&c_i);
    Ok(Regression {
        matrix: Array2::from_shape_fn((p, independent.len()), |(i, j)| -x[(i, j)]),
        dependent_condition: condition,
    })
}

/// A fitted constraint model in original coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub n_vars: usize,
    pub n_constraints: usize,
    pub singular_values: Vec<f64>,
    pub constraint_matrix: Array2<f64>,
    pub regression_matrix: Array2<f64>,
    pub dependent_indices: Vec<usize>,
    pub independent_indices: Vec<usize>,
    pub dependent_condition: f64,
    pub spectral_gap: f64,
}

impl PcaModel {
    /// Whitens `z`, fits `|dependent|` constraints, un-whitens and regresses.
    pub fn identify(
        z: ArrayView2<'_, f64>,
        cov: &ErrorCovariance,
        dependent: &[usize],
        independent: &[usize],
    ) -> Result<Self, PcaError> {
        let zs = whiten(z, cov)?;
        let sub = fit(zs.view(), dependent.len())?;
        let c_hat = unwhiten_constraints(sub.constraint_basis.view(), cov)?;
        let reg = regression(c_hat.view(), dependent, independent)?;
        Ok(Self {
            n_vars: z.nrows(),
            n_constraints: dependent.len(),
            spectral_gap: sub.spectral_gap(),
            singular_values: sub.singular_values,
            constraint_matrix: c_hat,
            regression_matrix: reg.matrix,
            dependent_indices: dependent.to_vec(),
            independent_indices: independent.to_vec(),
            dependent_condition: reg.dependent_condition,
        })
    }
}

/// Constraint count read off the spectrum: the number of singular values at
/// numerical zero if there are any, otherwise the position of the largest
/// ratio between consecutive values. Diagnostic only; the pipeline takes `p`
/// from the known parent set.
pub fn constraint_count_from_gap(singular_values: &[f64]) -> Option<usize> {
    let n = singular_values.len();
    let top = *singular_values.first()?;
    let tol = top * n as f64 * f64::EPSILON * 16.0;
    let null = singular_values.iter().filter(|&&s| s <= tol).count();
    if null > 0 && null < n {
        return Some(null);
    }
    (1..n)
        .map(|k| {
            let ratio = if singular_values[k] > 0.0 {
                singular_values[k - 1] / singular_values[k]
            } else {
                f64::INFINITY
            };
            (n - k, ratio)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(p, _)| p)
}
