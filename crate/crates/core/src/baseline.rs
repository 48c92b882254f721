//! Classical fixed-design knockoffs on the generalized-LASSO reduction.
//!
//! When `rank(D) = m <= p`, writing `beta = D^+ gamma + D_0 gamma_0` with
//! `D_0` a basis of `ker(D)` and projecting onto the orthogonal complement `U`
//! of `col(X D_0)` gives an ordinary sparse regression
//! `U^T y = U^T X D^+ gamma + noise`, on which the standard knockoff filter
//! applies.

use serde::{Deserialize, Serialize};

use crate::augment::StructuralProblem;
use crate::error::{Result, SkfError};
use crate::filter::{compute_w_statistics, difference_statistics, knockoff_threshold, select};
use crate::numerics::{
    full_orthonormal_complement, null_space, numerical_rank, orthonormal_complement_with,
    pseudo_inverse_sym, pseudo_inverse_with, sym_sqrt_factor_with, Matrix, Tolerances, Vector,
};
use crate::path::lasso::{kkt_violation, QuadraticLasso};
use crate::path::LambdaGrid;

#[derive(Debug, Clone)]
pub struct ReducedProblem {
    /// `U^T y`
    pub y_r: Vector,
    /// `U^T X D^+`
    pub x_r: Matrix,
    pub u: Matrix,
    pub d_dagger: Matrix,
    /// Orthonormal basis of `ker(D)`, `p x (p - m)`.
    pub d_null: Matrix,
}

fn is_identity(d: &Matrix) -> bool {
    d.is_square() && d.iter().enumerate().all(|(k, &v)| {
        let (i, j) = (k % d.nrows(), k / d.nrows());
        v == if i == j { 1.0 } else { 0.0 }
    })
}

pub fn reduce_generalized_lasso(problem: &StructuralProblem) -> Result<ReducedProblem> {
    let tol = Tolerances::default();
    let (n, p, m) = (problem.n(), problem.p(), problem.m());
    let d = problem.d();
    let rank = numerical_rank(d, tol.rank);
    if rank < m {
        return Err(SkfError::RankDeficient(format!(
            "the reduction needs rank(D) = m, got rank {rank} with m = {m}"
        )));
    }
    if n < p + m {
        return Err(SkfError::infeasible(format!(
            "fixed-design knockoffs on the reduced problem need n >= p + m, got n = {n}, p = {p}, m = {m}"
        )));
    }
    if is_identity(d) {
        return Ok(ReducedProblem {
            y_r: problem.y().clone(),
            x_r: problem.x().clone(),
            u: Matrix::identity(n, n),
            d_dagger: Matrix::identity(p, p),
            d_null: Matrix::zeros(p, 0),
        });
    }
    let d_dagger = pseudo_inverse_with(d, tol.rank)?;
    let d_null = null_space(d, tol.rank)?;
    let u = if d_null.ncols() == 0 {
        Matrix::identity(n, n)
    } else {
        full_orthonormal_complement(&(problem.x() * &d_null), tol.rank)?
    };
    let y_r = u.tr_mul(problem.y());
    let x_r = u.tr_mul(&(problem.x() * &d_dagger));
    Ok(ReducedProblem { y_r, x_r, u, d_dagger, d_null })
}

/// Fixed-design knockoff for a column-normalized design.
#[derive(Debug, Clone)]
pub struct FixedKnockoff {
    /// Design with unit-norm columns.
    pub x: Matrix,
    pub x_tilde: Matrix,
    pub s: Vector,
    /// Original column norms.
    pub scales: Vector,
}

/// Equi-correlated fixed-design knockoff:
/// `X~ = X (I - Sigma^-1 S) + U C` with `C^T C = 2S - S Sigma^-1 S`,
/// `s = min(2 lambda_min(Sigma), 1)` on the normalized Gram `Sigma`.
pub fn build_fixed_knockoff(x_r: &Matrix) -> Result<FixedKnockoff> {
    let tol = Tolerances::default();
    let (rows, cols) = x_r.shape();
    if rows < 2 * cols {
        return Err(SkfError::infeasible(format!(
            "fixed-design knockoffs need rows >= 2 * cols, got {rows} x {cols}"
        )));
    }
    let scales = Vector::from_iterator(cols, x_r.column_iter().map(|c| c.norm()));
    if scales.iter().any(|&s| s == 0.0) {
        return Err(SkfError::invalid("design has a zero column"));
    }
    let mut x = x_r.clone();
    for (j, mut col) in x.column_iter_mut().enumerate() {
        col /= scales[j];
    }
    let sigma = x.tr_mul(&x);
    let lam_min = sigma.clone().symmetric_eigenvalues().min().max(0.0);
    let s_val = (2.0 * lam_min).min(1.0);
    let s = Vector::from_element(cols, s_val);
    let (sigma_inv, _) = pseudo_inverse_sym(&sigma, tol.rank)?;

    let sinv_s = &sigma_inv * s_val;
    let mut x_tilde = &x * (Matrix::identity(cols, cols) - &sinv_s);
    if s_val > 0.0 {
        let gram = Matrix::identity(cols, cols) * (2.0 * s_val) - &sinv_s * s_val;
        let gram = (&gram + gram.transpose()) * 0.5;
        let c = sym_sqrt_factor_with(&gram, &tol)?;
        let u = orthonormal_complement_with(&x, cols, tol.rank)?;
        x_tilde += u * c;
    }
    Ok(FixedKnockoff { x, x_tilde, s, scales })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineStatistic {
    /// `(-1)^{1(Z~ > Z)} max(Z, Z~)`, shared with split knockoffs.
    #[default]
    SignedMax,
    /// `Z - Z~`
    Difference,
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub z: Vector,
    pub z_tilde: Vector,
    pub w: Vector,
    pub threshold: f64,
    /// 0-based indices into `gamma`.
    pub selected: Vec<usize>,
    pub kkt_residuals: Vec<f64>,
}

/// LASSO path on `(1/2n) |y - G b|^2 + lambda |b|_1` and the largest grid
/// `lambda` at which each column of `G` enters. Every grid point is
/// re-certified against `G` directly.
pub fn lasso_emergence(
    design: &Matrix,
    y: &Vector,
    grid: &LambdaGrid,
    tol: &Tolerances,
) -> Result<(Vector, Vec<f64>)> {
    let n = design.nrows() as f64;
    let q = design.tr_mul(design) / n;
    let b = design.tr_mul(y) / n;
    let cols = design.ncols();
    let mut solver = QuadraticLasso::new(&q, &b, tol.kkt, tol.max_sweeps);
    let mut z = Vector::zeros(cols);
    let mut residuals = Vec::with_capacity(grid.len());
    for &lam in &grid.values {
        solver.solve(lam)?;
        let coef = solver.solution();
        let grad = design.tr_mul(&(design * coef - y)) / n;
        let res = kkt_violation(coef, &grad, lam);
        if res > tol.kkt {
            return Err(SkfError::Convergence { lambda: lam, residual: res });
        }
        residuals.push(res);
        for j in 0..cols {
            if z[j] == 0.0 && coef[j] != 0.0 {
                z[j] = lam;
            }
        }
    }
    Ok((z, residuals))
}

pub fn baseline_knockoff_select(
    problem: &StructuralProblem,
    grid: &LambdaGrid,
    q: f64,
    plus: bool,
) -> Result<BaselineResult> {
    baseline_knockoff_select_with(problem, grid, q, plus, BaselineStatistic::SignedMax)
}

pub fn baseline_knockoff_select_with(
    problem: &StructuralProblem,
    grid: &LambdaGrid,
    q: f64,
    plus: bool,
    statistic: BaselineStatistic,
) -> Result<BaselineResult> {
    let reduced = reduce_generalized_lasso(problem)?;
    let knock = build_fixed_knockoff(&reduced.x_r)?;
    let m = knock.x.ncols();
    let mut joint = Matrix::zeros(knock.x.nrows(), 2 * m);
    joint.columns_mut(0, m).copy_from(&knock.x);
    joint.columns_mut(m, m).copy_from(&knock.x_tilde);
    let (emerge, kkt_residuals) =
        lasso_emergence(&joint, &reduced.y_r, grid, &Tolerances::default())?;
    let z = emerge.rows(0, m).into_owned();
    let z_tilde = emerge.rows(m, m).into_owned();
    let w = match statistic {
        BaselineStatistic::SignedMax => compute_w_statistics(&z, &z_tilde)?.w,
        BaselineStatistic::Difference => difference_statistics(&z, &z_tilde)?,
    };
    let threshold = knockoff_threshold(&w, q, plus)?;
    let selected = select(&w, threshold);
    Ok(BaselineResult { z, z_tilde, w, threshold, selected, kkt_residuals })
}
