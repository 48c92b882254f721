//! Feature (stage 1) and knockoff (stage 2) significance.
//!
//! Both stages fit the stage-0 residual `y_tilde - A_beta beta(lambda)` with
//! an orthogonal design (`A_gamma` or its copy, each with Gram `I / nu`), so
//! each LASSO solution is a soft threshold:
//!
//! * stage 1: `gamma(lambda) = S(D beta(lambda), lambda nu)`
//! * stage 2: `gamma~(lambda) = S(nu A~^T (y_tilde - A_beta beta(lambda)), lambda nu)`

use serde::{Deserialize, Serialize};

use super::SplitPath;
use crate::augment::{AugmentedSystem, SplitKnockoffCopy, StructuralProblem};
use crate::error::{Result, SkfError};
use crate::numerics::{shrink, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatMode {
    /// Largest grid `lambda` at which a coordinate is nonzero.
    #[default]
    PathOrder,
    /// `|coefficient|` at a fixed `lambda_hat` on the grid.
    Magnitude,
}

impl std::str::FromStr for StatMode {
    type Err = SkfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "path" | "path-order" => Ok(StatMode::PathOrder),
            "magnitude" => Ok(StatMode::Magnitude),
            other => Err(SkfError::invalid(format!("unknown statistic mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceStats {
    pub z: Vector,
    pub r: Vector,
    pub z_prime: Vector,
    pub r_prime: Vector,
    pub z_tilde: Vector,
    pub mode: StatMode,
    pub lambda_hat: Option<f64>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn summarize<F>(
    path: &SplitPath,
    m: usize,
    mode: StatMode,
    lambda_hat: Option<f64>,
    mut coef_at: F,
) -> Result<(Vector, Vector)>
where
    F: FnMut(usize) -> Vector,
{
    if path.beta_path.len() != path.grid.len() {
        return Err(SkfError::invalid("path and grid lengths differ"));
    }
    match mode {
        StatMode::PathOrder => {
            let mut z = Vector::zeros(m);
            let mut r = Vector::zeros(m);
            let mut found = vec![false; m];
            let mut remaining = m;
            for (k, &lam) in path.grid.values.iter().enumerate() {
                if remaining == 0 {
                    break;
                }
                let coef = coef_at(k);
                for i in 0..m {
                    if !found[i] && coef[i] != 0.0 {
                        found[i] = true;
                        remaining -= 1;
                        z[i] = lam;
                        r[i] = sign(coef[i]);
                    }
                }
            }
            Ok((z, r))
        }
        StatMode::Magnitude => {
            let lam = lambda_hat
                .ok_or_else(|| SkfError::invalid("magnitude statistics need lambda_hat"))?;
            let k = path.grid.position(lam).ok_or_else(|| {
                SkfError::invalid(format!("lambda_hat = {lam} is not on the lambda grid"))
            })?;
            let coef = coef_at(k);
            Ok((coef.map(f64::abs), coef.map(sign)))
        }
    }
}

/// Feature significance `(Z, r)`.
pub fn stage1_statistics(
    path: &SplitPath,
    problem: &StructuralProblem,
    mode: StatMode,
    lambda_hat: Option<f64>,
) -> Result<(Vector, Vector)> {
    let d = problem.d();
    let nu = path.nu;
    summarize(path, problem.m(), mode, lambda_hat, |k| {
        let t = path.grid.values[k] * nu;
        (d * &path.beta_path[k]).map(|v| shrink(v, t))
    })
}

/// Knockoff significance `(Z', r', Z~)` with `Z~_i = Z'_i 1{r_i = r'_i}`.
pub fn stage2_statistics(
    path: &SplitPath,
    aug: &AugmentedSystem,
    copy: &SplitKnockoffCopy,
    r: &Vector,
    mode: StatMode,
    lambda_hat: Option<f64>,
) -> Result<(Vector, Vector, Vector)> {
    let m = aug.m();
    if r.len() != m || copy.a_gamma_tilde.ncols() != m {
        return Err(SkfError::invalid("stage-2 inputs have inconsistent dimensions"));
    }
    let nu = path.nu;
    let tilde_y: Vector = copy.a_gamma_tilde.tr_mul(&aug.y_tilde);
    let tilde_beta: Matrix = copy.a_gamma_tilde.tr_mul(&aug.a_beta);
    let (z_prime, r_prime) = summarize(path, m, mode, lambda_hat, |k| {
        let t = path.grid.values[k] * nu;
        let resid = &tilde_y - &tilde_beta * &path.beta_path[k];
        resid.map(|v| shrink(nu * v, t))
    })?;
    let z_tilde = Vector::from_fn(m, |i, _| if r[i] == r_prime[i] { z_prime[i] } else { 0.0 });
    Ok((z_prime, r_prime, z_tilde))
}

/// Both stages in one call.
pub fn significance_statistics(
    path: &SplitPath,
    problem: &StructuralProblem,
    aug: &AugmentedSystem,
    copy: &SplitKnockoffCopy,
    mode: StatMode,
    lambda_hat: Option<f64>,
) -> Result<SignificanceStats> {
    let (z, r) = stage1_statistics(path, problem, mode, lambda_hat)?;
    let (z_prime, r_prime, z_tilde) = stage2_statistics(path, aug, copy, &r, mode, lambda_hat)?;
    Ok(SignificanceStats {
        z,
        r,
        z_prime,
        r_prime,
        z_tilde,
        mode,
        lambda_hat: if mode == StatMode::Magnitude { lambda_hat } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{build_augmented, build_split_knockoff, SplitKnockoffCopy};
    use crate::path::{make_lambda_grid, solve_split_lasso_path, LambdaGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_path(nu: f64, grid: LambdaGrid, beta: Vector, m: usize) -> SplitPath {
        let len = grid.len();
        SplitPath {
            nu,
            grid,
            beta_path: vec![beta; len],
            gamma_path: vec![Vector::zeros(m); len],
            kkt_residuals: vec![0.0; len],
        }
    }

    #[test]
    fn stage1_constant_d_beta() {
        // D = I, beta = (2, -1, 0) so D beta = (2, -1, 0); active iff lambda < |c_i| / nu.
        let nu = 0.5;
        let prob = StructuralProblem::new(
            Matrix::identity(3, 3),
            Vector::zeros(3),
            Matrix::identity(3, 3),
        )
        .unwrap();
        let grid = make_lambda_grid(1.0, -3.0, 0.001).unwrap();
        let path = constant_path(nu, grid, Vector::from_vec(vec![2.0, -1.0, 0.0]), 3);
        let (z, r) = stage1_statistics(&path, &prob, StatMode::PathOrder, None).unwrap();
        // largest grid value strictly below the activation threshold
        let step = 10f64.powf(0.001);
        assert!(z[0] < 4.0 && z[0] * step >= 4.0 - 1e-9, "{}", z[0]);
        assert!(z[1] < 2.0 && z[1] * step >= 2.0 - 1e-9, "{}", z[1]);
        assert_eq!(z[2], 0.0);
        assert_eq!(r.as_slice(), &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn never_active_and_top_of_path() {
        let prob = StructuralProblem::new(
            Matrix::identity(2, 2),
            Vector::zeros(2),
            Matrix::identity(2, 2),
        )
        .unwrap();
        let grid = make_lambda_grid(0.0, -2.0, 0.1).unwrap();
        let path = constant_path(1.0, grid.clone(), Vector::zeros(2), 2);
        let (z, r) = stage1_statistics(&path, &prob, StatMode::PathOrder, None).unwrap();
        assert_eq!(z, Vector::zeros(2));
        assert_eq!(r, Vector::zeros(2));

        let path = constant_path(1.0, grid.clone(), Vector::from_vec(vec![0.5, -0.2]), 2);
        let (z, _) =
            stage1_statistics(&path, &prob, StatMode::Magnitude, Some(grid.values[0])).unwrap();
        assert_eq!(z, Vector::zeros(2));
        let (z, r) =
            stage1_statistics(&path, &prob, StatMode::Magnitude, Some(grid.values[20])).unwrap();
        assert!((z[0] - 0.49).abs() < 1e-12 && (z[1] - 0.19).abs() < 1e-12);
        assert_eq!(r.as_slice(), &[1.0, -1.0]);

        assert!(stage1_statistics(&path, &prob, StatMode::Magnitude, Some(0.3)).is_err());
        assert!(stage1_statistics(&path, &prob, StatMode::Magnitude, None).is_err());
    }

    fn small_problem(seed: u64) -> StructuralProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, p) = (30, 4);
        let x = Matrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let y = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        StructuralProblem::new(x, y, Matrix::identity(p, p)).unwrap()
    }

    #[test]
    fn stage2_constant_residual() {
        // Hand-built copy whose residual correlation is c~ = (0.5, -0.2).
        let prob = small_problem(1);
        let aug = build_augmented(&prob, 1.0).unwrap();
        let n = prob.n();
        let mut tilde = Matrix::zeros(n + 4, 2);
        tilde[(0, 0)] = 0.5 / aug.y_tilde[0];
        tilde[(0, 1)] = -0.2 / aug.y_tilde[0];
        let copy = SplitKnockoffCopy {
            a_gamma_tilde: tilde,
            s: Vector::zeros(2),
            eta: None,
            c_nu_rank_deficient: false,
        };
        let grid = make_lambda_grid(0.0, -3.0, 0.001).unwrap();
        let path = constant_path(1.0, grid, Vector::zeros(4), 2);
        let mut aug2 = aug.clone();
        aug2.a_gamma = aug.a_gamma.columns(0, 2).into_owned();
        let r = Vector::from_vec(vec![1.0, -1.0]);
        let (zp, rp, zt) =
            stage2_statistics(&path, &aug2, &copy, &r, StatMode::PathOrder, None).unwrap();
        let step = 10f64.powf(0.001);
        assert!(zp[0] < 0.5 && zp[0] * step >= 0.5 - 1e-9);
        assert!(zp[1] < 0.2 && zp[1] * step >= 0.2 - 1e-9);
        assert_eq!(rp.as_slice(), &[1.0, -1.0]);
        assert_eq!(zt, zp);

        let r = Vector::from_vec(vec![1.0, 1.0]);
        let (_, _, zt) =
            stage2_statistics(&path, &aug2, &copy, &r, StatMode::PathOrder, None).unwrap();
        assert_eq!(zt[1], 0.0);
        assert_eq!(zt[0], zp[0]);
    }

    #[test]
    fn degenerate_copy_reproduces_stage1() {
        for seed in 0..5 {
            let prob = small_problem(seed);
            let aug = build_augmented(&prob, 0.7).unwrap();
            let copy = build_split_knockoff(&aug, &Vector::zeros(4)).unwrap();
            let grid = make_lambda_grid(0.0, -4.0, 0.01).unwrap();
            let path = solve_split_lasso_path(&prob, 0.7, &grid).unwrap();
            let stats =
                significance_statistics(&path, &prob, &aug, &copy, StatMode::PathOrder, None)
                    .unwrap();
            assert_eq!(stats.z_prime, stats.z);
            assert_eq!(stats.r_prime, stats.r);
            assert_eq!(stats.z_tilde, stats.z);
        }
    }

    #[test]
    fn stage1_matches_stage0_gamma() {
        let prob = small_problem(7);
        let grid = make_lambda_grid(0.0, -4.0, 0.05).unwrap();
        let path = solve_split_lasso_path(&prob, 1.5, &grid).unwrap();
        for k in 0..grid.len() {
            let (z, _) =
                stage1_statistics(&path, &prob, StatMode::Magnitude, Some(grid.values[k])).unwrap();
            let g = path.gamma_path[k].map(f64::abs);
            assert!((z - g).amax() < 1e-8);
        }
    }
}
