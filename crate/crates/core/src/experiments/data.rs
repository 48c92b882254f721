use nalgebra::Cholesky;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::SimConfig;
use crate::augment::StructuralProblem;
use crate::error::{Result, SkfError};
use crate::numerics::{Matrix, Vector};

/// Independent random streams within one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Design = 0,
    Noise = 1,
    Folds = 2,
}

/// ChaCha20 keyed by `seed`, on a stream fixed by `(replicate, purpose)`.
pub fn substream(seed: u64, replicate: usize, purpose: Purpose) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((replicate as u64) << 8) | purpose as u64);
    rng
}

/// One simulated data set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vector,
    pub d: Matrix,
    pub beta_star: Vector,
    pub gamma_star: Vector,
    pub eps: Vector,
    /// 0-based support of `gamma_star`.
    pub support: Vec<usize>,
}

impl Dataset {
    pub fn problem(&self) -> Result<StructuralProblem> {
        StructuralProblem::new(self.x.clone(), self.y.clone(), self.d.clone())
    }
}

/// `beta*_i = -A` for `i <= k, i = 1 mod 3`, `+A` for other `i <= k`, else 0
/// (1-based `i`).
pub fn beta_pattern(p: usize, k: usize, amplitude: f64) -> Vector {
    Vector::from_fn(p, |i, _| {
        let i = i + 1;
        if i > k {
            0.0
        } else if i % 3 == 1 {
            -amplitude
        } else {
            amplitude
        }
    })
}

/// `Sigma_ij = c^|i - j|`.
pub fn toeplitz_covariance(p: usize, c: f64) -> Matrix {
    Matrix::from_fn(p, p, |i, j| c.powi(i.abs_diff(j) as i32))
}

fn standard_normals(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Matrix {
    let values: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_row_slice(rows, cols, &values)
}

pub fn gen_dataset(config: &SimConfig, replicate: usize) -> Result<Dataset> {
    config.validate()?;
    let d = config.d_matrix()?;
    gen_dataset_with(config, &d, replicate)
}

/// Same as [`gen_dataset`] with `D` supplied, so a file is read only once.
pub fn gen_dataset_with(config: &SimConfig, d: &Matrix, replicate: usize) -> Result<Dataset> {
    let (n, p) = (config.n, config.p);
    if d.ncols() != p {
        return Err(SkfError::invalid(format!("D has {} columns but p = {p}", d.ncols())));
    }
    let chol = Cholesky::new(toeplitz_covariance(p, config.c))
        .ok_or_else(|| SkfError::invalid("feature covariance is not positive definite"))?;
    let mut design_rng = substream(config.seed, replicate, Purpose::Design);
    let x = standard_normals(n, p, &mut design_rng) * chol.l().transpose();

    let mut noise_rng = substream(config.seed, replicate, Purpose::Noise);
    let eps = Vector::from_iterator(
        n,
        (0..n).map(|_| {
            let z: f64 = StandardNormal.sample(&mut noise_rng);
            config.sigma * z
        }),
    );

    let beta_star = beta_pattern(p, config.k, config.amplitude);
    let gamma_star = d * &beta_star;
    let support = (0..gamma_star.len()).filter(|&i| gamma_star[i] != 0.0).collect();
    let y = &x * &beta_star + &eps;
    Ok(Dataset { x, y, d: d.clone(), beta_star, gamma_star, eps, support })
}
