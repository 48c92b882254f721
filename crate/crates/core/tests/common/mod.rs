//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skf_core::{Matrix, Vector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn uniform_vector(len: usize, rng: &mut ChaCha8Rng) -> Vector {
    Vector::from_fn(len, |_, _| rng.random_range(-1.0..1.0))
}

fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

fn largest_eigenvalue(m: &Matrix) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max()
}

/// Accelerated proximal gradient on the joint `(beta, gamma)` objective
/// `1/(2n)|y - X beta|^2 + 1/(2 nu)|D beta - gamma|^2 + lambda |gamma|_1`,
/// run until the gradient-mapping step falls below `tol`.
pub fn fista_split_lasso(
    x: &Matrix,
    y: &Vector,
    d: &Matrix,
    nu: f64,
    lambda: f64,
    tol: f64,
) -> (Vector, Vector) {
    let (n, p, m) = (x.nrows() as f64, x.ncols(), d.nrows());
    let mut hess = Matrix::zeros(p + m, p + m);
    hess.view_mut((0, 0), (p, p)).copy_from(&(x.tr_mul(x) / n + d.tr_mul(d) / nu));
    hess.view_mut((0, p), (p, m)).copy_from(&(-d.transpose() / nu));
    hess.view_mut((p, 0), (m, p)).copy_from(&(-d / nu));
    hess.view_mut((p, p), (m, m)).copy_from(&(Matrix::identity(m, m) / nu));
    let mut lin = Vector::zeros(p + m);
    lin.rows_mut(0, p).copy_from(&(x.tr_mul(y) / n));
    let step = 1.0 / largest_eigenvalue(&hess);

    let prox = |v: &Vector| {
        let mut out = v.clone();
        for i in p..p + m {
            out[i] = soft(v[i], step * lambda);
        }
        out
    };
    let mut cur = Vector::zeros(p + m);
    let mut look = cur.clone();
    let mut t = 1.0_f64;
    for _ in 0..5_000_000 {
        let grad = &hess * &look - &lin;
        let next = prox(&(&look - grad * step));
        let moved = (&next - &look).amax() / step;
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        // restart momentum when the objective direction turns
        if (&next - &cur).dot(&(&look - &next)) > 0.0 {
            t = 1.0;
            look = next.clone();
        } else {
            look = &next + (&next - &cur) * ((t - 1.0) / t_next);
            t = t_next;
        }
        cur = next;
        if moved < tol {
            break;
        }
    }
    (cur.rows(0, p).into_owned(), cur.rows(p, m).into_owned())
}

/// Plain proximal gradient for `1/2 |b - M v|^2 + lambda |v|_1` with step
/// `scale / L`.
pub fn ista_lasso(m: &Matrix, b: &Vector, lambda: f64, scale: f64, tol: f64) -> Vector {
    let gram = m.tr_mul(m);
    let lin = m.tr_mul(b);
    let step = scale / largest_eigenvalue(&gram);
    let mut v = Vector::zeros(m.ncols());
    for _ in 0..1_000_000 {
        let grad = &gram * &v - &lin;
        let next = (&v - grad * step).map(|z| soft(z, step * lambda));
        let moved = (&next - &v).amax() / step;
        v = next;
        if moved < tol {
            break;
        }
    }
    v
}

/// Smallest `t` in `{|W_i| : W_i != 0}` whose estimated FDP is at most `q`,
/// by direct counting.
pub fn brute_force_threshold(w: &[f64], q: f64, plus: bool) -> f64 {
    let mut best = f64::INFINITY;
    for &c in w {
        if c == 0.0 {
            continue;
        }
        let t = c.abs();
        let neg = w.iter().filter(|&&x| x <= -t).count() + usize::from(plus);
        let pos = w.iter().filter(|&&x| x >= t).count();
        if neg as f64 / pos.max(1) as f64 <= q && t < best {
            best = t;
        }
    }
    best
}

/// Split-LASSO optimality residual at `(beta, gamma)`, recomputed from
/// `(X, y, D)`: `beta`-stationarity plus the subgradient condition on `gamma`.
pub fn split_kkt_residual(
    x: &Matrix,
    y: &Vector,
    d: &Matrix,
    nu: f64,
    lambda: f64,
    beta: &Vector,
    gamma: &Vector,
) -> f64 {
    let n = x.nrows() as f64;
    let fit = y - x * beta;
    let gap = d * beta - gamma;
    let grad_beta = x.tr_mul(&fit) / n - d.tr_mul(&gap) / nu;
    let mut worst = grad_beta.amax();
    for i in 0..gamma.len() {
        let pull = gap[i] / nu;
        let v = if gamma[i] == 0.0 {
            (pull.abs() - lambda).max(0.0)
        } else {
            (pull - lambda * gamma[i].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}
