//! Split LASSO regularization path and the stage-wise significance
//! statistics.
//!
//! The split LASSO
//!
//! ```text
//! min_{beta, gamma} 1/(2n) |y - X beta|^2 + 1/(2 nu) |D beta - gamma|^2 + lambda |gamma|_1
//! ```
//!
//! is solved by eliminating `beta` in closed form,
//! `beta(gamma) = Sigma_bb^-1 (X^T y / n + D^T gamma / nu)`, which leaves a
//! LASSO in `gamma` with Gram matrix `C_nu = H_nu / nu`.

pub(crate) mod lasso;
mod stats;

pub use stats::{
    significance_statistics, stage1_statistics, stage2_statistics, SignificanceStats, StatMode,
};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentedSystem, StructuralProblem};
use crate::error::{Result, SkfError};
use crate::numerics::{pseudo_inverse_sym, Matrix, Tolerances, Vector};

/// Descending geometric grid `lambda_k = 10^(log10_max - k * step)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub log10_max: f64,
    pub log10_min: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl LambdaGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of `lambda` on the grid (relative match to 1e-9).
    pub fn position(&self, lambda: f64) -> Option<usize> {
        self.values
            .iter()
            .position(|&v| (v - lambda).abs() <= 1e-9 * v.abs().max(lambda.abs()))
    }
}

impl Default for LambdaGrid {
    fn default() -> Self {
        make_lambda_grid(0.0, -6.0, 0.01).expect("default grid is valid")
    }
}

pub fn make_lambda_grid(log10_max: f64, log10_min: f64, step: f64) -> Result<LambdaGrid> {
    if !(log10_max.is_finite() && log10_min.is_finite() && step.is_finite()) {
        return Err(SkfError::invalid("lambda grid bounds must be finite"));
    }
    if !(log10_max > log10_min) {
        return Err(SkfError::invalid(format!(
            "lambda grid needs log10_max > log10_min, got {log10_max} and {log10_min}"
        )));
    }
    if !(step > 0.0) {
        return Err(SkfError::invalid(format!("lambda grid step must be > 0, got {step}")));
    }
    let count = ((log10_max - log10_min) / step + 1e-9).floor() as usize + 1;
    let values = (0..count)
        .map(|k| 10f64.powf(log10_max - k as f64 * step))
        .collect();
    Ok(LambdaGrid { log10_max, log10_min, step, values })
}

/// Stage-0 solution `(beta(lambda), gamma(lambda))` on a grid.
#[derive(Debug, Clone)]
pub struct SplitPath {
    pub nu: f64,
    pub grid: LambdaGrid,
    pub beta_path: Vec<Vector>,
    pub gamma_path: Vec<Vector>,
    pub kkt_residuals: Vec<f64>,
}

/// The reduced `gamma`-space problem at a fixed `nu`.
struct GammaSystem {
    nu: f64,
    /// `Sigma_bb^+ X^T y / n`
    beta_ridge: Vector,
    /// `Sigma_bb^+ D^T / nu`, so that `beta(gamma) = beta_ridge + lift * gamma`.
    lift: Matrix,
    /// `C_nu`
    gram: Matrix,
    /// `D beta_ridge / nu`
    linear: Vector,
}

impl GammaSystem {
    fn new(problem: &StructuralProblem, nu: f64, tol: &Tolerances) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(SkfError::invalid(format!("nu must be positive and finite, got {nu}")));
        }
        let n = problem.n() as f64;
        let x = problem.x();
        let d = problem.d();
        let sigma_bb = x.tr_mul(x) / n + d.tr_mul(d) / nu;
        let (pinv, _) = pseudo_inverse_sym(&sigma_bb, tol.rank)?;
        let xty = x.tr_mul(problem.y()) / n;
        Ok(Self::assemble(nu, d, &pinv, &xty))
    }

    fn from_augmented(aug: &AugmentedSystem) -> Self {
        let xty = aug.a_beta.tr_mul(&aug.y_tilde);
        // sigma_bg = -D^T / nu, so D = -nu sigma_bg^T
        let d = -aug.sigma_bg.transpose() * aug.nu;
        Self::assemble(aug.nu, &d, aug.sigma_bb_pinv(), &xty)
    }

    fn assemble(nu: f64, d: &Matrix, sigma_bb_pinv: &Matrix, xty: &Vector) -> Self {
        let m = d.nrows();
        let beta_ridge = sigma_bb_pinv * xty;
        let lift = sigma_bb_pinv * d.transpose() / nu;
        let mut gram = Matrix::identity(m, m) / nu - d * &lift / nu;
        gram = (&gram + gram.transpose()) * 0.5;
        let linear = d * &beta_ridge / nu;
        Self { nu, beta_ridge, lift, gram, linear }
    }

    fn beta(&self, gamma: &Vector) -> Vector {
        &self.beta_ridge + &self.lift * gamma
    }
}

/// Smallest `lambda` at which `gamma(lambda) = 0`: `|D beta_ridge|_inf / nu`.
pub fn lambda_max(problem: &StructuralProblem, nu: f64) -> Result<f64> {
    let sys = GammaSystem::new(problem, nu, &Tolerances::default())?;
    Ok(sys.linear.amax())
}

/// Independent KKT residual of the split LASSO at `(beta, gamma)`:
/// the larger of the `beta`-stationarity residual
/// `|-(Sigma_X + D^T D / nu) beta + D^T gamma / nu + X^T y / n|_inf` and the
/// subgradient violation of `(D beta - gamma) / nu in lambda d|gamma|_1`.
pub fn split_lasso_kkt_residual(
    problem: &StructuralProblem,
    nu: f64,
    lambda: f64,
    beta: &Vector,
    gamma: &Vector,
) -> f64 {
    let n = problem.n() as f64;
    let x = problem.x();
    let d = problem.d();
    let xb = x * beta;
    let db = d * beta;
    let stationarity = -(x.tr_mul(&xb) / n) - d.tr_mul(&db) / nu
        + d.tr_mul(gamma) / nu
        + x.tr_mul(problem.y()) / n;
    let mut worst = stationarity.amax();
    for i in 0..gamma.len() {
        let h = (db[i] - gamma[i]) / nu;
        let v = if gamma[i] != 0.0 {
            (h - lambda * gamma[i].signum()).abs()
        } else {
            (h.abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

pub fn solve_split_lasso_path(
    problem: &StructuralProblem,
    nu: f64,
    grid: &LambdaGrid,
) -> Result<SplitPath> {
    solve_split_lasso_path_with(problem, nu, grid, &Tolerances::default())
}

pub fn solve_split_lasso_path_with(
    problem: &StructuralProblem,
    nu: f64,
    grid: &LambdaGrid,
    tol: &Tolerances,
) -> Result<SplitPath> {
    let sys = GammaSystem::new(problem, nu, tol)?;
    run_path(problem, &sys, grid, tol)
}

/// Same path, reusing the factorizations already held by `aug`.
pub fn solve_split_lasso_path_augmented(
    problem: &StructuralProblem,
    aug: &AugmentedSystem,
    grid: &LambdaGrid,
) -> Result<SplitPath> {
    let sys = GammaSystem::from_augmented(aug);
    run_path(problem, &sys, grid, aug.tolerances())
}

fn run_path(
    problem: &StructuralProblem,
    sys: &GammaSystem,
    grid: &LambdaGrid,
    tol: &Tolerances,
) -> Result<SplitPath> {
    let mut solver = lasso::QuadraticLasso::new(&sys.gram, &sys.linear, tol.kkt, tol.max_sweeps);
    let mut beta_path = Vec::with_capacity(grid.len());
    let mut gamma_path = Vec::with_capacity(grid.len());
    let mut kkt_residuals = Vec::with_capacity(grid.len());
    for &lam in &grid.values {
        solver.solve(lam)?;
        let gamma = solver.solution().clone();
        let beta = sys.beta(&gamma);
        let residual = split_lasso_kkt_residual(problem, sys.nu, lam, &beta, &gamma);
        if residual > tol.kkt {
            return Err(SkfError::Convergence { lambda: lam, residual });
        }
        beta_path.push(beta);
        gamma_path.push(gamma);
        kkt_residuals.push(residual);
    }
    Ok(SplitPath {
        nu: sys.nu,
        grid: grid.clone(),
        beta_path,
        gamma_path,
        kkt_residuals,
    })
}
