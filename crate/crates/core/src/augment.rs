//! The lifted split system and the split knockoff copy.
//!
//! For `y = X beta + eps` with structural signal `gamma = D beta`, the split
//! relaxation at level `nu` is an ordinary regression in `(beta, gamma)`:
//!
//! ```text
//! y_tilde = [y / sqrt(n); 0_m]
//! A_beta  = [X / sqrt(n); D / sqrt(nu)]
//! A_gamma = [0_{n x m};  -I_m / sqrt(nu)]
//! ```
//!
//! The knockoff copy `A_gamma_tilde` must reproduce the Gram structure of
//! `A_gamma` while being decorrelated from it by `diag(s)`.

use std::sync::OnceLock;

use log::warn;
use nalgebra::{Dyn, SymmetricEigen};

use crate::error::{Result, SkfError};
use crate::numerics::{
    ensure_finite_matrix, ensure_finite_vector, max_abs, orthonormal_complement_with,
    pinv_from_eigen, pseudo_inverse_sym, sym_sqrt_factor_with, Matrix, Tolerances, Vector,
};

/// Default `eta` in the equi-correlated separation `s = min((2 - eta) lambda_min(C_nu), 1/nu)`.
pub const DEFAULT_ETA: f64 = 0.1;

/// An observed regression instance `(y, X, D)`.
#[derive(Debug, Clone)]
pub struct StructuralProblem {
    x: Matrix,
    y: Vector,
    d: Matrix,
    /// Orthonormal complement of `col(X)` with `m` columns, built on demand.
    x_complement: OnceLock<Matrix>,
}

impl PartialEq for StructuralProblem {
    fn eq(&self, other: &Self) -> bool {
        self.x == other.x && self.y == other.y && self.d == other.d
    }
}

impl StructuralProblem {
    pub fn new(x: Matrix, y: Vector, d: Matrix) -> Result<Self> {
        ensure_finite_matrix(&x, "X")?;
        ensure_finite_matrix(&d, "D")?;
        ensure_finite_vector(&y, "y")?;
        if y.len() != x.nrows() {
            return Err(SkfError::invalid(format!(
                "y has length {} but X has {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if d.ncols() != x.ncols() {
            return Err(SkfError::invalid(format!(
                "D has {} columns but X has {}",
                d.ncols(),
                x.ncols()
            )));
        }
        Ok(Self { x, y, d, x_complement: OnceLock::new() })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Vector {
        &self.y
    }

    pub fn d(&self) -> &Matrix {
        &self.d
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.d.nrows()
    }

    /// Same design and transform with a different response.
    pub fn with_response(&self, y: Vector) -> Result<Self> {
        let mut out = Self::new(self.x.clone(), y, self.d.clone())?;
        out.x_complement = self.x_complement.clone();
        Ok(out)
    }

    /// `n x m` orthonormal basis orthogonal to the columns of `X`.
    pub(crate) fn x_complement(&self, tol: f64) -> Result<&Matrix> {
        if let Some(u) = self.x_complement.get() {
            return Ok(u);
        }
        let u = orthonormal_complement_with(&self.x, self.m(), tol)?;
        Ok(self.x_complement.get_or_init(|| u))
    }

    /// Sub-problem on the given rows.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(rows.iter());
        let y = Vector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Self::new(x, y, self.d.clone())
    }

    pub(crate) fn require_split_feasible(&self) -> Result<()> {
        let (n, p, m) = (self.n(), self.p(), self.m());
        if n < m + p {
            return Err(SkfError::infeasible(format!(
                "split knockoffs need n >= m + p, got n = {n}, m = {m}, p = {p}"
            )));
        }
        Ok(())
    }
}

/// The lifted regression at a fixed `nu`, with its Gram blocks.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub nu: f64,
    pub y_tilde: Vector,
    pub a_beta: Matrix,
    pub a_gamma: Matrix,
    /// `X^T X / n`
    pub sigma_x: Matrix,
    /// `X^T X / n + D^T D / nu`
    pub sigma_bb: Matrix,
    /// `-D^T / nu`
    pub sigma_bg: Matrix,
    /// `I / nu - (D / nu) sigma_bb^+ (D^T / nu)`
    pub c_nu: Matrix,
    pub(crate) sigma_bb_pinv: Matrix,
    pub(crate) sigma_bb_rank: usize,
    c_nu_eigen: SymmetricEigen<f64, Dyn>,
    /// Complement of `col(X)`, present when `n >= m + p`.
    x_complement: Option<Matrix>,
    n: usize,
    tol: Tolerances,
}

impl AugmentedSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.a_beta.ncols()
    }

    pub fn m(&self) -> usize {
        self.a_gamma.ncols()
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    /// `sigma_bb` is singular (only possible when `X^T X` is).
    pub fn sigma_bb_rank_deficient(&self) -> bool {
        self.sigma_bb_rank < self.p()
    }

    pub fn sigma_bb_pinv(&self) -> &Matrix {
        &self.sigma_bb_pinv
    }

    pub fn lambda_min_c_nu(&self) -> f64 {
        self.c_nu_eigen.eigenvalues.min()
    }

    /// Equi-correlated `s` from the cached spectrum of `C_nu`.
    pub fn equicorrelated_s(&self, eta: f64) -> Result<Vector> {
        check_eta(eta)?;
        let scale = self.c_nu_eigen.eigenvalues.amax();
        let lam_min = self.lambda_min_c_nu();
        equicorrelated_from_spectrum(lam_min, scale, self.nu, eta, self.m(), &self.tol)
    }

    /// `C_nu^+` and whether `C_nu` is numerically singular.
    fn c_nu_pinv(&self) -> (Matrix, bool) {
        let (pinv, rank) = pinv_from_eigen(&self.c_nu_eigen, self.tol.rank);
        (pinv, rank < self.m())
    }
}

/// Builds the lifted system at relaxation level `nu`.
pub fn build_augmented(problem: &StructuralProblem, nu: f64) -> Result<AugmentedSystem> {
    build_augmented_with(problem, nu, Tolerances::default())
}

pub fn build_augmented_with(
    problem: &StructuralProblem,
    nu: f64,
    tol: Tolerances,
) -> Result<AugmentedSystem> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(SkfError::invalid(format!("nu must be positive and finite, got {nu}")));
    }
    let (n, p, m) = (problem.n(), problem.p(), problem.m());
    let x = problem.x();
    let d = problem.d();
    let sqrt_n = (n as f64).sqrt();
    let sqrt_nu = nu.sqrt();

    let mut y_tilde = Vector::zeros(n + m);
    y_tilde.rows_mut(0, n).copy_from(&(problem.y() / sqrt_n));

    let mut a_beta = Matrix::zeros(n + m, p);
    a_beta.view_mut((0, 0), (n, p)).copy_from(&(x / sqrt_n));
    a_beta.view_mut((n, 0), (m, p)).copy_from(&(d / sqrt_nu));

    let mut a_gamma = Matrix::zeros(n + m, m);
    for i in 0..m {
        a_gamma[(n + i, i)] = -1.0 / sqrt_nu;
    }

    let sigma_x = x.tr_mul(x) / n as f64;
    let sigma_bb = &sigma_x + d.tr_mul(d) / nu;
    let sigma_bg = -d.transpose() / nu;
    let (sigma_bb_pinv, sigma_bb_rank) = pseudo_inverse_sym(&sigma_bb, tol.rank)?;

    // C_nu = Sigma_gg - Sigma_gb Sigma_bb^+ Sigma_bg
    let pinv_bg = &sigma_bb_pinv * &sigma_bg;
    let mut c_nu = Matrix::identity(m, m) / nu - sigma_bg.tr_mul(&pinv_bg);
    c_nu = (&c_nu + c_nu.transpose()) * 0.5;
    let c_nu_eigen = SymmetricEigen::new(c_nu.clone());
    let scale = c_nu_eigen.eigenvalues.amax();
    let lam_min = c_nu_eigen.eigenvalues.min();
    if lam_min < -tol.psd_reject * scale {
        return Err(SkfError::NotPsd { min_eigenvalue: lam_min, scale });
    }

    let x_complement = if n >= m + p {
        Some(problem.x_complement(tol.rank)?.clone())
    } else {
        None
    };

    Ok(AugmentedSystem {
        nu,
        y_tilde,
        a_beta,
        a_gamma,
        sigma_x,
        sigma_bb,
        sigma_bg,
        c_nu,
        sigma_bb_pinv,
        sigma_bb_rank,
        c_nu_eigen,
        x_complement,
        n,
        tol,
    })
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 2.0) {
        return Err(SkfError::invalid(format!("eta must lie in (0, 2), got {eta}")));
    }
    Ok(())
}

fn equicorrelated_from_spectrum(
    lam_min: f64,
    scale: f64,
    nu: f64,
    eta: f64,
    m: usize,
    tol: &Tolerances,
) -> Result<Vector> {
    if lam_min < -tol.psd_reject * scale {
        return Err(SkfError::NotPsd { min_eigenvalue: lam_min, scale });
    }
    let value = ((2.0 - eta) * lam_min.max(0.0)).min(1.0 / nu);
    Ok(Vector::from_element(m, value))
}

/// Equi-correlated separation `s_i = min((2 - eta) lambda_min(C_nu), 1/nu)`.
pub fn equicorrelated_s(c_nu: &Matrix, nu: f64, eta: f64) -> Result<Vector> {
    check_eta(eta)?;
    if !(nu > 0.0) {
        return Err(SkfError::invalid(format!("nu must be positive, got {nu}")));
    }
    ensure_finite_matrix(c_nu, "C_nu")?;
    let eig = c_nu.clone().symmetric_eigenvalues();
    let tol = Tolerances::default();
    equicorrelated_from_spectrum(eig.min(), eig.amax(), nu, eta, c_nu.nrows(), &tol)
}

/// A split knockoff matrix for `A_gamma`.
#[derive(Debug, Clone)]
pub struct SplitKnockoffCopy {
    pub a_gamma_tilde: Matrix,
    pub s: Vector,
    /// `eta` used to derive `s`, when it was equi-correlated.
    pub eta: Option<f64>,
    /// `C_nu` was numerically singular and its pseudo-inverse was used.
    pub c_nu_rank_deficient: bool,
}

impl SplitKnockoffCopy {
    /// Equi-correlated copy with parameter `eta`.
    pub fn equicorrelated(aug: &AugmentedSystem, eta: f64) -> Result<Self> {
        let s = aug.equicorrelated_s(eta)?;
        let mut copy = build_split_knockoff(aug, &s)?;
        copy.eta = Some(eta);
        Ok(copy)
    }

    /// First `n` rows, the block that multiplies the original noise.
    pub fn upper_block(&self, n: usize) -> Matrix {
        self.a_gamma_tilde.rows(0, n).into_owned()
    }
}

/// Explicit construction
/// `A_gamma (I - C^-1 S) + A_beta Sigma_bb^-1 Sigma_bg C^-1 S + U K`
/// with `S = diag(s)`, `U^T [A_beta, A_gamma] = 0` and `K^T K = 2S - S C^-1 S`.
pub fn build_split_knockoff(aug: &AugmentedSystem, s: &Vector) -> Result<SplitKnockoffCopy> {
    let (n, p, m) = (aug.n(), aug.p(), aug.m());
    let tol = aug.tol;
    if s.len() != m {
        return Err(SkfError::invalid(format!("s has length {} but m = {m}", s.len())));
    }
    if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(SkfError::InvalidSeparation("entries must be finite and >= 0".into()));
    }
    if n < m + p {
        return Err(SkfError::infeasible(format!(
            "split knockoffs need n >= m + p, got n = {n}, m = {m}, p = {p}"
        )));
    }

    let (c_pinv, c_singular) = aug.c_nu_pinv();
    if c_singular {
        warn!("C_nu is numerically singular at nu = {}; using its pseudo-inverse", aug.nu);
    }

    // 2 C_nu - diag(s) must be PSD.
    let s_const = s.iter().all(|&v| v == s[0]);
    let scale = aug.c_nu_eigen.eigenvalues.amax().max(s.amax());
    let lam_min = if s_const {
        2.0 * aug.lambda_min_c_nu() - s[0]
    } else {
        let mut shifted = &aug.c_nu * 2.0;
        for i in 0..m {
            shifted[(i, i)] -= s[i];
        }
        shifted.symmetric_eigenvalues().min()
    };
    if lam_min < -tol.psd_reject * scale.max(f64::MIN_POSITIVE) {
        return Err(SkfError::InvalidSeparation(format!(
            "2 C_nu - diag(s) is indefinite (smallest eigenvalue {lam_min:e})"
        )));
    }

    // C^+ S, scaling column j by s_j.
    let mut cps = c_pinv.clone();
    for j in 0..m {
        cps.column_mut(j).scale_mut(s[j]);
    }

    let mut tilde = Matrix::zeros(n + m, m);
    // A_gamma (I - C^+ S): only the lower block of A_gamma is nonzero.
    let inv_sqrt_nu = 1.0 / aug.nu.sqrt();
    {
        let mut lower = tilde.view_mut((n, 0), (m, m));
        lower.copy_from(&(&cps * inv_sqrt_nu));
        for i in 0..m {
            lower[(i, i)] -= inv_sqrt_nu;
        }
    }
    // A_beta Sigma_bb^+ Sigma_bg C^+ S
    let coupling = aug.sigma_bb_pinv() * &aug.sigma_bg * &cps;
    tilde += &aug.a_beta * coupling;

    if s.iter().any(|&v| v > 0.0) {
        let k = if s_const {
            knockoff_factor_constant(aug, s[0])?
        } else {
            // K^T K = 2S - S C^+ S
            let mut gram = Matrix::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    gram[(i, j)] = -s[i] * cps[(i, j)];
                }
                gram[(i, i)] += 2.0 * s[i];
            }
            gram = (&gram + gram.transpose()) * 0.5;
            sym_sqrt_factor_with(&gram, &tol)
                .map_err(|e| SkfError::InvalidSeparation(format!("2S - S C^-1 S: {e}")))?
        };
        // [A_beta, A_gamma] has column space {[u; v] : ...} whose complement is
        // exactly [ker(X^T); 0], so the complement of X lifted by zero rows
        // is orthogonal to both blocks.
        let u_x = aug.x_complement.as_ref().expect("complement exists when n >= m + p");
        let uk = u_x * k;
        let mut top = tilde.view_mut((0, 0), (n, m));
        top += &uk;
    }

    Ok(SplitKnockoffCopy {
        a_gamma_tilde: tilde,
        s: s.clone(),
        eta: None,
        c_nu_rank_deficient: c_singular,
    })
}

/// `K` with `K^T K = s (2I - s C^+)`, read off the spectrum of `C_nu`.
fn knockoff_factor_constant(aug: &AugmentedSystem, s: f64) -> Result<Matrix> {
    let eig = &aug.c_nu_eigen;
    let scale = eig.eigenvalues.amax();
    let values: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&mu| {
            let inv = if scale > 0.0 && mu.abs() > aug.tol.rank * scale { 1.0 / mu } else { 0.0 };
            s * (2.0 - s * inv)
        })
        .collect();
    let top = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let low = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if low < -aug.tol.psd_reject * top {
        return Err(SkfError::InvalidSeparation(format!(
            "2S - S C^-1 S is indefinite (smallest eigenvalue {low:e})"
        )));
    }
    let mut k = eig.eigenvectors.transpose();
    for (i, v) in values.iter().enumerate() {
        k.row_mut(i).scale_mut(v.max(0.0).sqrt());
    }
    Ok(k)
}

/// Max-abs residuals of the three copy identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopyReport {
    /// `|A~^T A~ - I/nu|`
    pub gram: f64,
    /// `|A_gamma^T A~ - (I/nu - diag(s))|`
    pub cross_gamma: f64,
    /// `|A_beta^T A~ + D^T/nu|`
    pub cross_beta: f64,
    pub pass: bool,
}

impl CopyReport {
    pub fn worst(&self) -> f64 {
        self.gram.max(self.cross_gamma).max(self.cross_beta)
    }
}

pub fn verify_copy(aug: &AugmentedSystem, copy: &SplitKnockoffCopy) -> CopyReport {
    let m = aug.m();
    let a = &copy.a_gamma_tilde;
    let ident = Matrix::identity(m, m) / aug.nu;
    let gram = max_abs(&(a.tr_mul(a) - &ident));
    let target = ident - Matrix::from_diagonal(&copy.s);
    let cross_gamma = max_abs(&(aug.a_gamma.tr_mul(a) - target));
    let cross_beta = max_abs(&(aug.a_beta.tr_mul(a) - &aug.sigma_bg));
    let limit = aug.tol.identity;
    CopyReport {
        gram,
        cross_gamma,
        cross_beta,
        pass: gram <= limit && cross_gamma <= limit && cross_beta <= limit,
    }
}
