//! Dense linear-algebra and proximal primitives.
//!
//! Everything here is a pure function of its inputs. Rank decisions are made
//! from singular values (or eigenvalues for symmetric input) relative to the
//! largest one, using the thresholds collected in [`Tolerances`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SkfError};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Numerical thresholds shared by the whole crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Singular values below `rank * sigma_max` count as zero.
    pub rank: f64,
    /// Residual bound for Gram / Moore-Penrose identities.
    pub identity: f64,
    /// Eigenvalues in `[-psd_clamp * |M|, 0)` are clamped to zero.
    pub psd_clamp: f64,
    /// Eigenvalues below `-psd_reject * |M|` reject the matrix as indefinite.
    pub psd_reject: f64,
    /// Maximal asymmetry accepted for "symmetric" input, relative to `max(1, |M|)`.
    pub symmetry: f64,
    /// Absolute KKT residual certified on every regularization path point.
    pub kkt: f64,
    /// Coordinate sweeps allowed per path point.
    pub max_sweeps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank: 1e-10,
            identity: 1e-8,
            psd_clamp: 1e-8,
            psd_reject: 1e-6,
            symmetry: 1e-10,
            kkt: 1e-7,
            max_sweeps: 100_000,
        }
    }
}

pub(crate) fn ensure_finite_matrix(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(SkfError::invalid(format!("{what} is empty")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SkfError::invalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

pub(crate) fn ensure_finite_vector(v: &Vector, what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SkfError::invalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// Largest absolute entry.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Scalar shrinkage `sign(x) * max(|x| - t, 0)`.
#[inline]
pub fn shrink(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Coordinate-wise soft thresholding.
pub fn soft_threshold(x: &Vector, t: f64) -> Result<Vector> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(SkfError::invalid(format!("threshold must be finite and >= 0, got {t}")));
    }
    ensure_finite_vector(x, "soft_threshold input")?;
    Ok(x.map(|v| shrink(v, t)))
}

/// Singular values, left singular vectors and right singular vectors
/// (transposed) of `m`, thin.
fn thin_svd(m: &Matrix) -> (Vector, Matrix, Matrix) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    (svd.singular_values, u, v_t)
}

/// Number of singular values above `tol * sigma_max`.
pub fn numerical_rank(m: &Matrix, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Moore-Penrose pseudo-inverse with the default rank tolerance.
pub fn pseudo_inverse(m: &Matrix) -> Result<Matrix> {
    pseudo_inverse_with(m, Tolerances::default().rank)
}

/// Moore-Penrose pseudo-inverse via SVD; singular values below
/// `tol * sigma_max` are treated as zero.
pub fn pseudo_inverse_with(m: &Matrix, tol: f64) -> Result<Matrix> {
    ensure_finite_matrix(m, "pseudo_inverse input")?;
    let (sv, u, v_t) = thin_svd(m);
    let smax = sv.max();
    let mut out = Matrix::zeros(m.ncols(), m.nrows());
    if smax <= 0.0 {
        return Ok(out);
    }
    for (k, &s) in sv.iter().enumerate() {
        if s > tol * smax {
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out.ger(1.0 / s, &vk, &uk, 1.0);
        }
    }
    Ok(out)
}

/// Pseudo-inverse of a symmetric matrix through its eigendecomposition.
/// Returns the inverse together with the numerical rank.
pub fn pseudo_inverse_sym(m: &Matrix, tol: f64) -> Result<(Matrix, usize)> {
    ensure_finite_matrix(m, "pseudo_inverse_sym input")?;
    let eig = SymmetricEigen::new(m.clone());
    Ok(pinv_from_eigen(&eig, tol))
}

pub(crate) fn pinv_from_eigen(eig: &SymmetricEigen<f64, nalgebra::Dyn>, tol: f64) -> (Matrix, usize) {
    let scale = eig.eigenvalues.amax();
    let n = eig.eigenvalues.len();
    let mut scaled = eig.eigenvectors.clone();
    let mut rank = 0;
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if scale > 0.0 && lam.abs() > tol * scale {
            rank += 1;
            let inv = 1.0 / lam;
            scaled.column_mut(k).scale_mut(inv);
        } else {
            scaled.column_mut(k).fill(0.0);
        }
    }
    (scaled * eig.eigenvectors.transpose(), rank)
}

/// Orthonormal basis of `col(b)` (columns of `U` from the SVD whose singular
/// value clears the rank tolerance).
fn column_space_basis(b: &Matrix, tol: f64) -> Matrix {
    let (sv, u, _) = thin_svd(b);
    let smax = sv.max();
    let keep: Vec<usize> = if smax > 0.0 {
        (0..sv.len()).filter(|&k| sv[k] > tol * smax).collect()
    } else {
        Vec::new()
    };
    Matrix::from_fn(b.nrows(), keep.len(), |i, j| u[(i, keep[j])])
}

/// Given an `n x k` matrix with orthonormal columns, returns `r` further
/// orthonormal columns orthogonal to it. The columns are `k..k+r` of the
/// Householder `Q` of `q`, so the result is deterministic.
fn extend_orthonormal(q: &Matrix, r: usize) -> Matrix {
    let n = q.nrows();
    let k = q.ncols();
    debug_assert!(k + r <= n);
    let mut a = q.clone();
    let mut reflectors: Vec<Vector> = Vec::with_capacity(k);
    for j in 0..k {
        let mut v: Vector = a.view((j, j), (n - j, 1)).column(0).clone_owned();
        let norm = v.norm();
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vn = v.norm();
        if vn > 0.0 {
            v /= vn;
            let mut block = a.view_mut((j, j), (n - j, k - j));
            let proj = block.tr_mul(&v);
            block.ger(-2.0, &v, &proj, 1.0);
        } else {
            v.fill(0.0);
        }
        reflectors.push(v);
    }
    let mut out = Matrix::zeros(n, r);
    for c in 0..r {
        let mut e = Vector::zeros(n);
        e[k + c] = 1.0;
        for j in (0..k).rev() {
            let v = &reflectors[j];
            let mut seg = e.rows_mut(j, n - j);
            let dot = v.dot(&seg);
            seg.axpy(-2.0 * dot, v, 1.0);
        }
        out.set_column(c, &e);
    }
    out
}

/// `r` orthonormal columns spanning a subspace of `col(b)`'s orthogonal
/// complement.
pub fn orthonormal_complement(b: &Matrix, r: usize) -> Result<Matrix> {
    orthonormal_complement_with(b, r, Tolerances::default().rank)
}

pub fn orthonormal_complement_with(b: &Matrix, r: usize, tol: f64) -> Result<Matrix> {
    ensure_finite_matrix(b, "orthonormal_complement input")?;
    let n = b.nrows();
    let basis = column_space_basis(b, tol);
    let rank = basis.ncols();
    if r > n - rank {
        return Err(SkfError::infeasible(format!(
            "requested {r} complement directions but only {} exist (n = {n}, rank = {rank})",
            n - rank
        )));
    }
    Ok(extend_orthonormal(&basis, r))
}

/// Orthonormal basis of the whole orthogonal complement of `col(b)`.
pub fn full_orthonormal_complement(b: &Matrix, tol: f64) -> Result<Matrix> {
    ensure_finite_matrix(b, "orthonormal_complement input")?;
    let basis = column_space_basis(b, tol);
    let r = b.nrows() - basis.ncols();
    Ok(extend_orthonormal(&basis, r))
}

/// Orthonormal basis of `ker(m)` as the columns of a `p x (p - rank)` matrix.
pub fn null_space(m: &Matrix, tol: f64) -> Result<Matrix> {
    full_orthonormal_complement(&m.transpose(), tol)
}

fn check_symmetric(m: &Matrix, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(SkfError::invalid(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = max_abs(m).max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return Err(SkfError::invalid(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(m: &Matrix) -> Result<f64> {
    ensure_finite_matrix(m, "min_eigenvalue_sym input")?;
    check_symmetric(m, Tolerances::default().symmetry)?;
    Ok(m.clone().symmetric_eigenvalues().min())
}

/// Returns `K` with `K^T K = M` for a positive semidefinite `M`.
///
/// Eigenvalues slightly below zero (down to `-psd_reject * |M|`) are clamped;
/// anything more negative is reported as [`SkfError::NotPsd`].
pub fn sym_sqrt_factor(m: &Matrix) -> Result<Matrix> {
    sym_sqrt_factor_with(m, &Tolerances::default())
}

pub fn sym_sqrt_factor_with(m: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    ensure_finite_matrix(m, "sym_sqrt_factor input")?;
    check_symmetric(m, tol.symmetry)?;
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.amax();
    let n = m.nrows();
    if scale == 0.0 {
        return Ok(Matrix::zeros(n, n));
    }
    let lam_min = eig.eigenvalues.min();
    if lam_min < -tol.psd_reject * scale {
        return Err(SkfError::NotPsd { min_eigenvalue: lam_min, scale });
    }
    // K = diag(sqrt(lambda)) V^T
    let mut k = eig.eigenvectors.transpose();
    for i in 0..n {
        let root = eig.eigenvalues[i].max(0.0).sqrt();
        k.row_mut(i).scale_mut(root);
    }
    Ok(k)
}

/// Least squares `min 1/2 |y - X beta|^2` subject to `(D beta)_i = 0` for every
/// row `i` outside `support`. Solved in the coordinates of an orthonormal
/// null-space basis of the constrained rows; minimum-norm when the reduced
/// system is singular.
pub fn constrained_least_squares(
    x: &Matrix,
    y: &Vector,
    d: &Matrix,
    support: &[usize],
) -> Result<Vector> {
    let p = x.ncols();
    if y.len() != x.nrows() {
        return Err(SkfError::invalid(format!(
            "y has length {} but X has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    if d.ncols() != p {
        return Err(SkfError::invalid(format!(
            "D has {} columns but X has {p}",
            d.ncols()
        )));
    }
    ensure_finite_matrix(x, "X")?;
    ensure_finite_vector(y, "y")?;
    let m = d.nrows();
    let mut free = vec![false; m];
    for &i in support {
        if i >= m {
            return Err(SkfError::invalid(format!("support index {i} out of range 0..{m}")));
        }
        free[i] = true;
    }
    let fixed: Vec<usize> = (0..m).filter(|&i| !free[i]).collect();
    let tol = Tolerances::default().rank;
    let basis = if fixed.is_empty() {
        Matrix::identity(p, p)
    } else {
        let rows = d.select_rows(fixed.iter());
        null_space(&rows, tol)?
    };
    if basis.ncols() == 0 {
        return Ok(Vector::zeros(p));
    }
    let reduced = x * &basis;
    let z = pseudo_inverse_with(&reduced, tol)? * y;
    Ok(basis * z)
}
