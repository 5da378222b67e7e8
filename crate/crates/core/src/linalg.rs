//! Dense linear-algebra kernels.
//!
//! `vec` is column-major: entry `(i, j)` of an `N x N` matrix lands at
//! position `j * N + i` (0-based). Every `N^2`-indexed object in the crate
//! (the commutator operator, the chart basis, covariance matrices) uses this
//! ordering, which is also nalgebra's storage order.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Relative eigenvalue floor below which `sym_sqrt` clips negative
/// eigenvalues to zero.
pub const PSD_CLIP: f64 = 1e-10;

/// Relative asymmetry accepted by `sym_sqrt`.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Builds a matrix from row slices, checking shape and finiteness.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DenseMatrix> {
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n_cols) {
        return Err(Error::Dimension(format!(
            "row {} has {} entries, expected {}",
            i,
            r.len(),
            n_cols
        )));
    }
    let m = DMatrix::from_fn(n_rows, n_cols, |i, j| rows[i][j]);
    ensure_finite(&m)?;
    Ok(m)
}

pub fn to_rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn ensure_finite(m: &DenseMatrix) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

pub fn ensure_square(m: &DenseMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// Stacks the columns of a square matrix.
pub fn vec(m: &DenseMatrix) -> Result<DVector<f64>> {
    ensure_square(m)?;
    Ok(DVector::from_column_slice(m.as_slice()))
}

/// Inverse of [`vec`] for a vector of length `n * n`.
pub fn unvec(v: &DVector<f64>, n: usize) -> Result<DenseMatrix> {
    if v.len() != n * n {
        return Err(Error::Dimension(format!(
            "cannot unvec a vector of length {} into {}x{}",
            v.len(),
            n,
            n
        )));
    }
    Ok(DMatrix::from_column_slice(n, n, v.as_slice()))
}

/// Position of entry `(i, j)` inside `vec` of an `n x n` matrix.
#[inline]
pub fn vec_index(n: usize, i: usize, j: usize) -> usize {
    j * n + i
}

pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    a.kronecker(b)
}

/// `I (x) Q - Q^T (x) I`, the matrix of `P -> vec(QP - PQ)`.
pub fn commutator_op(q: &DenseMatrix) -> Result<DenseMatrix> {
    let n = ensure_square(q)?;
    let eye = DMatrix::<f64>::identity(n, n);
    Ok(kron(&eye, q) - kron(&q.transpose(), &eye))
}

/// `vec(QM - MQ)` without materializing the `N^2 x N^2` operator.
pub fn commutator_apply(q: &DenseMatrix, m: &DenseMatrix) -> Result<DVector<f64>> {
    if q.shape() != m.shape() {
        return Err(Error::Dimension(format!(
            "commutator of {:?} and {:?}",
            q.shape(),
            m.shape()
        )));
    }
    vec(&(q * m - m * q))
}

/// Default relative singular-value threshold: machine epsilon times the
/// larger dimension.
pub fn default_rtol(rows: usize, cols: usize) -> f64 {
    f64::EPSILON * rows.max(cols).max(1) as f64
}

fn check_rtol(rtol: f64) -> Result<()> {
    if !(rtol > 0.0 && rtol.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be positive, got {rtol}"
        )));
    }
    Ok(())
}

/// Thin singular value decomposition `m = u diag(s) v^T` with `s` in
/// decreasing order and `min(rows, cols)` columns in `u` and `v`.
///
/// Singular vectors belonging to (numerically) zero singular values are not
/// meaningful; callers apply a relative cutoff before using them.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub s: DVector<f64>,
    pub v: DenseMatrix,
}

impl ThinSvd {
    pub fn max_singular_value(&self) -> f64 {
        self.s.iter().copied().fold(0.0, f64::max)
    }
}

/// Thin SVD computed from a Householder QR followed by the symmetric
/// eigendecomposition of `[[0, R], [R^T, 0]]`, whose positive eigenpairs
/// are `(sigma_k, [u_k; v_k] / sqrt 2)`.
pub fn thin_svd(m: &DenseMatrix) -> Result<ThinSvd> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(ThinSvd {
            u: DMatrix::zeros(rows, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(cols, 0),
        });
    }
    if rows < cols {
        let t = thin_svd(&m.transpose())?;
        return Ok(ThinSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    ensure_finite(m)?;
    let (q, r) = m.clone().qr().unpack();
    let n = cols;
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, n), (n, n)).copy_from(&r);
    h.view_mut((n, 0), (n, n)).copy_from(&r.transpose());
    let eig = SymmetricEigen::try_new(h, f64::EPSILON, 0).ok_or_else(|| {
        Error::Numerical("eigendecomposition for the SVD did not converge".into())
    })?;
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut ur = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    let mut s = DVector::zeros(n);
    for (k, &idx) in order[..n].iter().enumerate() {
        s[k] = eig.eigenvalues[idx].max(0.0);
        let w = eig.eigenvectors.column(idx);
        ur.set_column(k, &(w.rows(0, n) * std::f64::consts::SQRT_2));
        v.set_column(k, &(w.rows(n, n) * std::f64::consts::SQRT_2));
    }
    Ok(ThinSvd { u: q * ur, s, v })
}

/// Singular values in decreasing order.
pub fn singular_values(m: &DenseMatrix) -> Result<DVector<f64>> {
    Ok(thin_svd(m)?.s)
}

/// Moore-Penrose pseudoinverse; singular values at or below
/// `rtol * sigma_max` are treated as zero.
pub fn pinv(m: &DenseMatrix, rtol: f64) -> Result<DenseMatrix> {
    check_rtol(rtol)?;
    let (rows, cols) = m.shape();
    let svd = thin_svd(m)?;
    let cutoff = rtol * svd.max_singular_value();
    let mut out = DMatrix::zeros(cols, rows);
    for (k, &s) in svd.s.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            // out += v_k u_k^T / s
            out.ger(1.0 / s, &svd.v.column(k), &svd.u.column(k), 1.0);
        }
    }
    Ok(out)
}

/// Number of singular values strictly above `rtol * sigma_max`.
pub fn numeric_rank(m: &DenseMatrix, rtol: f64) -> Result<usize> {
    check_rtol(rtol)?;
    let s = singular_values(m)?;
    let s_max = s.iter().copied().fold(0.0, f64::max);
    if s_max == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&x| x > rtol * s_max).count())
}

fn symmetric_eigen(m: &DenseMatrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let n = ensure_square(m)?;
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * scale.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let sym = (m + m.transpose()) * 0.5;
    if n == 0 {
        return Ok(SymmetricEigen::new(sym));
    }
    SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))
}

/// Symmetric PSD square root. Eigenvalues down to `-PSD_CLIP * lambda_max`
/// are clipped to zero; anything more negative is rejected.
pub fn sym_sqrt(m: &DenseMatrix) -> Result<DenseMatrix> {
    let eig = symmetric_eigen(m)?;
    let lambda_max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let floor = -PSD_CLIP * lambda_max.max(f64::MIN_POSITIVE);
    let roots = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if l >= 0.0 {
                Ok(l.sqrt())
            } else if l >= floor {
                Ok(0.0)
            } else {
                Err(Error::InvalidInput(format!(
                    "matrix is not positive semi-definite (eigenvalue {l:e})"
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, k| v[(i, k)] * roots[k]);
    let out = &scaled * v.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Square root of the pseudoinverse of a symmetric PSD matrix, computed in
/// one eigendecomposition: `V diag(lambda^{-1/2}) V^T` over the eigenvalues
/// above `rtol * lambda_max`. Equals `sym_sqrt(pinv(m))` for PSD input.
pub fn psd_pinv_sqrt(m: &DenseMatrix, rtol: f64) -> Result<DenseMatrix> {
    check_rtol(rtol)?;
    let eig = symmetric_eigen(m)?;
    let lambda_max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = rtol * lambda_max;
    let weights: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if lambda_max > 0.0 && l > cutoff {
                l.sqrt().recip()
            } else {
                0.0
            }
        })
        .collect();
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, k| v[(i, k)] * weights[k]);
    let out = &scaled * v.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DenseMatrix) -> Result<f64> {
    let eig = symmetric_eigen(m)?;
    Ok(eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}
