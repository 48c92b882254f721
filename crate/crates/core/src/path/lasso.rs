//! Warm-started solver for `min 1/2 x^T Q x - b^T x + lambda |x|_1` with a
//! dense PSD `Q`.
//!
//! Cyclic coordinate descent with a maintained gradient `g = Q x - b` finds
//! the active set; once the active set and signs look stable the solution is
//! polished by solving `Q_AA x_A = b_A - lambda sign_A` directly. The affine
//! solution of the last accepted active set is cached so consecutive grid
//! points that share it cost one candidate check.

use nalgebra::{Cholesky, Dyn};

use crate::error::{Result, SkfError};
use crate::numerics::{shrink, Matrix, Vector};

/// KKT violation of `x` for gradient `g = Q x - b` at penalty `lambda`.
pub(crate) fn kkt_violation(x: &Vector, g: &Vector, lambda: f64) -> f64 {
    x.iter().zip(g.iter()).fold(0.0_f64, |acc, (&xi, &gi)| {
        let v = if xi > 0.0 {
            (gi + lambda).abs()
        } else if xi < 0.0 {
            (gi - lambda).abs()
        } else {
            (gi.abs() - lambda).max(0.0)
        };
        acc.max(v)
    })
}

struct ActiveFactor {
    set: Vec<usize>,
    signs: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `Q_AA^-1 b_A`
    base: Vector,
    /// `Q_AA^-1 sign_A`
    slope: Vector,
}

impl ActiveFactor {
    fn new(q: &Matrix, b: &Vector, set: Vec<usize>, signs: Vec<f64>) -> Option<Self> {
        let sub = q.select_rows(set.iter()).select_columns(set.iter());
        let chol = Cholesky::new(sub)?;
        Some(Self::with_factor(b, set, signs, chol))
    }

    fn with_factor(b: &Vector, set: Vec<usize>, signs: Vec<f64>, chol: Cholesky<f64, Dyn>) -> Self {
        let b_a = Vector::from_iterator(set.len(), set.iter().map(|&j| b[j]));
        let base = chol.solve(&b_a);
        let slope = chol.solve(&Vector::from_vec(signs.clone()));
        Self { set, signs, chol, base, slope }
    }

    fn values(&self, lambda: f64) -> Vector {
        &self.base - &self.slope * lambda
    }
}

pub(crate) struct QuadraticLasso<'a> {
    q: &'a Matrix,
    b: &'a Vector,
    tol: f64,
    max_sweeps: usize,
    x: Vector,
    g: Vector,
    factor: Option<ActiveFactor>,
}

/// Inner active-set passes between full sweeps.
const MAX_INNER: usize = 200;
/// Pivots tried before falling back to coordinate descent.
const MAX_PIVOTS: usize = 64;

impl<'a> QuadraticLasso<'a> {
    pub(crate) fn new(q: &'a Matrix, b: &'a Vector, tol: f64, max_sweeps: usize) -> Self {
        let m = b.len();
        Self {
            q,
            b,
            tol,
            max_sweeps,
            x: Vector::zeros(m),
            g: -b.clone(),
            factor: None,
        }
    }

    pub(crate) fn solution(&self) -> &Vector {
        &self.x
    }

    fn fresh_gradient(&self, x: &Vector) -> Vector {
        let mut g = -self.b.clone();
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                g.axpy(xj, &self.q.column(j), 1.0);
            }
        }
        g
    }

    fn update_coordinate(&mut self, j: usize, lambda: f64) -> f64 {
        let qjj = self.q[(j, j)];
        if qjj <= 0.0 {
            return 0.0;
        }
        let old = self.x[j];
        let new = shrink(old * qjj - self.g[j], lambda) / qjj;
        if new != old {
            let delta = new - old;
            self.x[j] = new;
            self.g.axpy(delta, &self.q.column(j), 1.0);
            delta.abs()
        } else {
            0.0
        }
    }

    fn full_sweep(&mut self, lambda: f64) -> f64 {
        (0..self.x.len()).fold(0.0, |acc, j| acc.max(self.update_coordinate(j, lambda)))
    }

    fn active_sweeps(&mut self, lambda: f64, limit: usize) -> usize {
        let active: Vec<usize> = (0..self.x.len()).filter(|&j| self.x[j] != 0.0).collect();
        let scale = 1.0 + self.x.amax();
        for pass in 0..limit {
            let mut change = 0.0_f64;
            for &j in &active {
                change = change.max(self.update_coordinate(j, lambda));
            }
            if change <= 1e-14 * scale {
                return pass + 1;
            }
        }
        limit
    }

    fn candidate(&self, factor: &ActiveFactor, lambda: f64) -> Option<(Vector, Vector, f64)> {
        let mut x = Vector::zeros(self.x.len());
        for (k, (&j, v)) in factor.set.iter().zip(factor.values(lambda).iter()).enumerate() {
            if v * factor.signs[k] < 0.0 {
                return None;
            }
            x[j] = *v;
        }
        let g = self.fresh_gradient(&x);
        let res = kkt_violation(&x, &g, lambda);
        Some((x, g, res))
    }

    fn factorize(&self) -> Option<ActiveFactor> {
        let set: Vec<usize> = (0..self.x.len()).filter(|&j| self.x[j] != 0.0).collect();
        let signs: Vec<f64> = set.iter().map(|&j| self.x[j].signum()).collect();
        ActiveFactor::new(self.q, self.b, set, signs)
    }

    /// Active-set pivoting from the last factor: drop coordinates whose
    /// sign disagrees, append the worst KKT violator, re-solve with an
    /// updated Cholesky factor. Returns `None`, leaving the iterate alone,
    /// after a bounded number of pivots or on a singular block.
    fn pivot(&mut self, lambda: f64, polish_tol: f64) -> Option<f64> {
        let mut factor = match self.factor.take() {
            Some(f) => f,
            None => self.factorize()?,
        };
        let mut refreshed = false;
        for _ in 0..MAX_PIVOTS {
            let values = factor.values(lambda);
            let flipped: Vec<usize> = (0..factor.set.len())
                .filter(|&k| values[k] * factor.signs[k] <= 0.0)
                .collect();
            if !flipped.is_empty() {
                let (mut set, mut signs, mut chol) = (factor.set, factor.signs, factor.chol);
                for &k in flipped.iter().rev() {
                    set.remove(k);
                    signs.remove(k);
                    chol = chol.remove_column(k);
                }
                factor = ActiveFactor::with_factor(self.b, set, signs, chol);
                continue;
            }
            let mut x = Vector::zeros(self.x.len());
            for (k, &j) in factor.set.iter().enumerate() {
                x[j] = values[k];
            }
            let g = self.fresh_gradient(&x);
            let res = kkt_violation(&x, &g, lambda);
            if res <= polish_tol {
                self.x = x;
                self.g = g;
                self.factor = Some(factor);
                return Some(res);
            }
            let mut worst: Option<(usize, f64)> = None;
            for j in 0..x.len() {
                if x[j] == 0.0 {
                    let v = g[j].abs() - lambda;
                    if v > polish_tol && worst.is_none_or(|(_, w)| v > w) {
                        worst = Some((j, v));
                    }
                }
            }
            let Some((j, _)) = worst else {
                // active coordinates off their stationarity line: the
                // updated factor has drifted, so rebuild it once
                if refreshed {
                    return None;
                }
                refreshed = true;
                factor = ActiveFactor::new(self.q, self.b, factor.set, factor.signs)?;
                continue;
            };
            let (mut set, mut signs) = (factor.set, factor.signs);
            set.push(j);
            signs.push(-g[j].signum());
            let col = Vector::from_iterator(set.len(), set.iter().map(|&i| self.q[(i, j)]));
            let k = set.len() - 1;
            let chol = factor.chol.insert_column(k, col);
            let pivot = chol.l_dirty()[(k, k)];
            if !(pivot.is_finite() && pivot > 1e-12 * self.q[(j, j)].sqrt()) {
                return None;
            }
            factor = ActiveFactor::with_factor(self.b, set, signs, chol);
        }
        None
    }

    /// Solves at `lambda` starting from the current iterate. Returns the KKT
    /// violation of the accepted solution.
    pub(crate) fn solve(&mut self, lambda: f64) -> Result<f64> {
        let polish_tol = 0.01 * self.tol;
        if let Some(factor) = &self.factor {
            if let Some((x, g, res)) = self.candidate(factor, lambda) {
                if res <= polish_tol {
                    self.x = x;
                    self.g = g;
                    return Ok(res);
                }
            }
        }

        if let Some(res) = self.pivot(lambda, polish_tol) {
            return Ok(res);
        }

        let mut sweeps = 0usize;
        let mut last_set: Option<Vec<usize>> = None;
        loop {
            let change = self.full_sweep(lambda);
            sweeps += 1;
            if change > 0.0 {
                sweeps += self.active_sweeps(lambda, MAX_INNER);
            }

            let set: Vec<usize> = (0..self.x.len()).filter(|&j| self.x[j] != 0.0).collect();
            if last_set.as_ref() != Some(&set) {
                if let Some(factor) = self.factorize() {
                    if let Some((x, g, res)) = self.candidate(&factor, lambda) {
                        if res <= polish_tol {
                            self.x = x;
                            self.g = g;
                            self.factor = Some(factor);
                            return Ok(res);
                        }
                    }
                }
                last_set = Some(set);
            }

            let res = kkt_violation(&self.x, &self.g, lambda);
            if res <= polish_tol {
                self.g = self.fresh_gradient(&self.x);
                let res = kkt_violation(&self.x, &self.g, lambda);
                if res <= self.tol {
                    self.factor = None;
                    return Ok(res);
                }
            }
            if sweeps >= self.max_sweeps {
                let g = self.fresh_gradient(&self.x);
                return Err(SkfError::Convergence {
                    lambda,
                    residual: kkt_violation(&self.x, &g, lambda),
                });
            }
        }
    }
}
