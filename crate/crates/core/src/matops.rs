//! Dense matrix primitives used throughout the policy algebra: the SVD-based
//! generalized inverse, its column/row projectors, PSD checks and symmetrization.
//!
//! Everything works on `nalgebra` dynamic matrices. The SVD itself comes from
//! `nalgebra`; truncation, ordering and the projector identities are handled here.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative truncation tolerance for the generalized inverse. The effective
/// cutoff is `rel_tol * max(rows, cols) * sigma_max`.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Thin, rank-truncated singular value decomposition `m = U S V^T`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// `rows x k`, orthonormal columns.
    pub left: Matrix,
    /// Strictly positive and sorted in descending order.
    pub singular_values: Vector,
    /// `cols x k`, orthonormal columns.
    pub right: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

pub fn ensure_finite_matrix(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn ensure_finite_vector(v: &Vector, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn truncation_threshold(rows: usize, cols: usize, sigma_max: f64, rel_tol: f64) -> f64 {
    rel_tol * rows.max(cols) as f64 * sigma_max
}

/// SVD whose factors reproduce `m`. At nalgebra's default convergence
/// threshold (machine epsilon) some rank-deficient inputs come back with
/// singular vectors that do not reconstruct the matrix, so each attempt is
/// checked and retried with a looser threshold.
fn converged_svd(m: &Matrix) -> Option<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale * m.nrows().max(m.ncols()).max(1) as f64;
    let mut last = None;
    for eps in [f64::EPSILON, 1e-14, 1e-13, 1e-12] {
        let Some(svd) = m.clone().try_svd(true, true, eps, 10_000) else {
            continue;
        };
        let err = match (&svd.u, &svd.v_t) {
            (Some(u), Some(v_t)) => {
                let r = u * Matrix::from_diagonal(&svd.singular_values) * v_t;
                (r - m).amax()
            }
            _ => f64::INFINITY,
        };
        if err <= tol {
            return Some(svd);
        }
        last = Some(svd);
    }
    last
}

/// Rank-truncated thin SVD. Singular values at or below the truncation
/// threshold are dropped together with their vectors.
pub fn svd_factors(m: &Matrix, rel_tol: f64) -> Result<SvdFactors> {
    ensure_finite_matrix(m, "matrix passed to svd")?;
    let (rows, cols) = m.shape();
    let svd = converged_svd(m).ok_or(Error::Singular("singular value decomposition"))?;
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let sigma_max = order.first().map(|&i| sv[i]).unwrap_or(0.0);
    let cutoff = truncation_threshold(rows, cols, sigma_max, rel_tol);
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| sv[i] > cutoff && sv[i] > 0.0)
        .collect();

    let k = kept.len();
    let mut left = Matrix::zeros(rows, k);
    let mut right = Matrix::zeros(cols, k);
    let mut values = Vector::zeros(k);
    for (col, &i) in kept.iter().enumerate() {
        left.set_column(col, &u.column(i));
        right.set_column(col, &v_t.row(i).transpose());
        values[col] = sv[i];
    }
    Ok(SvdFactors {
        left,
        singular_values: values,
        right,
    })
}

/// Moore-Penrose generalized inverse `V S^-1 U^T` with small singular values
/// truncated.
pub fn generalized_inverse(m: &Matrix, rel_tol: f64) -> Result<Matrix> {
    let f = svd_factors(m, rel_tol)?;
    let (rows, cols) = m.shape();
    if f.rank() == 0 {
        return Ok(Matrix::zeros(cols, rows));
    }
    let mut scaled = f.right.clone();
    for (j, s) in f.singular_values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    Ok(scaled * f.left.transpose())
}

/// Generalized inverse at the default tolerance.
pub fn pinv(m: &Matrix) -> Result<Matrix> {
    generalized_inverse(m, DEFAULT_REL_TOL)
}

/// Returns `(m⁺ m, m m⁺)`. Following the naming used for the algebra, the
/// first is called the column projector and the second the row projector.
pub fn projector_checks(m: &Matrix) -> Result<(Matrix, Matrix)> {
    let p = pinv(m)?;
    Ok((&p * m, m * &p))
}

/// `(m + m^T) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry, or zero for an empty matrix.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Symmetric within `tol` and every eigenvalue `>= -tol`. Both tolerances are
/// scaled by `max(1, max|m_ij|)` so the test is meaningful for large metrics.
pub fn is_psd(m: &Matrix, tol: f64) -> Result<bool> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    ensure_finite_matrix(m, "matrix passed to is_psd")?;
    let scale = max_abs(m).max(1.0);
    let asym = max_abs(&(m - m.transpose()));
    if asym > tol * scale {
        return Ok(false);
    }
    let eig = symmetrize(m).symmetric_eigen();
    Ok(eig.eigenvalues.iter().all(|&l| l >= -tol * scale))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &Matrix) -> f64 {
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

/// `sigma_max / sigma_min`; infinite when singular.
pub fn condition_number(m: &Matrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
    let min = sv.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Diagonal matrix from a vector of entries.
pub fn diag(entries: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_column_slice(entries))
}
