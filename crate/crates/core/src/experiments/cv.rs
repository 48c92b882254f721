use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::config::CvRefit;
use super::data::{substream, Purpose};
use super::pipeline::{run_split_pipeline, PipelineOptions};
use crate::augment::StructuralProblem;
use crate::error::{Result, SkfError};
use crate::numerics::{constrained_least_squares, Vector};
use crate::path::{solve_split_lasso_path_with, LambdaGrid};

/// Random partition of `0..n` into `folds` validation sets whose sizes differ
/// by at most one. Each set is sorted.
pub fn kfold_partition(n: usize, folds: usize, seed: u64, replicate: usize) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(SkfError::invalid(format!("need 2 <= folds <= n, got folds = {folds}, n = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, replicate, Purpose::Folds));
    let mut parts = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = n / folds + usize::from(f < n % folds);
        let mut part = order[start..start + size].to_vec();
        part.sort_unstable();
        parts.push(part);
        start += size;
    }
    Ok(parts)
}

/// Smallest fold count `>= at_least` whose training parts keep `n_train >= m + p`.
pub fn feasible_folds(n: usize, m: usize, p: usize, at_least: usize) -> Option<usize> {
    (at_least.max(2)..=n).find(|&f| n - n.div_ceil(f) >= m + p)
}

fn complement(n: usize, part: &[usize]) -> Vec<usize> {
    let mut held = vec![false; n];
    for &i in part {
        held[i] = true;
    }
    (0..n).filter(|&i| !held[i]).collect()
}

fn check_partition(problem: &StructuralProblem, parts: &[Vec<usize>], need: usize) -> Result<()> {
    let n = problem.n();
    if parts.len() < 2 {
        return Err(SkfError::invalid("cross-validation needs at least 2 folds"));
    }
    for part in parts {
        if part.is_empty() || part.iter().any(|&i| i >= n) {
            return Err(SkfError::invalid("folds must be non-empty and index rows of X"));
        }
        if n - part.len() < need {
            return Err(SkfError::infeasible(format!(
                "a training fold has {} rows but split knockoffs need n >= m + p = {need}",
                n - part.len()
            )));
        }
    }
    Ok(())
}

/// `(1 / 2 n_val) |y_val - X_val beta|^2` after refitting `beta` with
/// `supp(D beta)` inside `support`.
pub fn refit_loss(
    train: &StructuralProblem,
    validation: &StructuralProblem,
    support: &[usize],
    refit: CvRefit,
) -> Result<f64> {
    let fit_on = match refit {
        CvRefit::Validation => validation,
        CvRefit::Training => train,
    };
    let beta = constrained_least_squares(fit_on.x(), fit_on.y(), fit_on.d(), support)?;
    Ok(prediction_loss(validation, &beta))
}

fn prediction_loss(problem: &StructuralProblem, beta: &Vector) -> f64 {
    let resid = problem.y() - problem.x() * beta;
    resid.norm_squared() / (2.0 * problem.n() as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct CvResult {
    pub nus: Vec<f64>,
    /// Mean validation loss per `nu`.
    pub losses: Vec<f64>,
    pub best_index: usize,
    pub nu_star: f64,
    pub folds: usize,
}

/// Index of the smallest loss; ties go to the earlier entry.
pub fn argmin(losses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in losses.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v < losses[b]) {
            best = Some(i);
        }
    }
    best
}

/// Cross-validated choice of `nu`: for each `nu` and each validation part,
/// select `S_hat` with split knockoffs on the remaining rows, refit on the
/// constrained support and average the validation loss.
pub fn cross_validate_nu(
    problem: &StructuralProblem,
    nus: &[f64],
    parts: &[Vec<usize>],
    refit: CvRefit,
    opts: &PipelineOptions,
) -> Result<CvResult> {
    let per_nu = vec![opts.clone(); nus.len()];
    let losses = cv_losses(problem, nus, parts, refit, &per_nu)?;
    let best_index = argmin(&losses).ok_or_else(|| SkfError::invalid("all validation losses are NaN"))?;
    Ok(CvResult {
        nus: nus.to_vec(),
        nu_star: nus[best_index],
        best_index,
        losses,
        folds: parts.len(),
    })
}

/// Mean validation loss per `nu`, with separate pipeline options per `nu`.
pub(crate) fn cv_losses(
    problem: &StructuralProblem,
    nus: &[f64],
    parts: &[Vec<usize>],
    refit: CvRefit,
    opts: &[PipelineOptions],
) -> Result<Vec<f64>> {
    if nus.is_empty() || nus.len() != opts.len() {
        return Err(SkfError::invalid("need one set of pipeline options per nu"));
    }
    check_partition(problem, parts, problem.m() + problem.p())?;
    let splits = parts
        .iter()
        .map(|part| {
            let train = problem.select_rows(&complement(problem.n(), part))?;
            let validation = problem.select_rows(part)?;
            Ok((train, validation))
        })
        .collect::<Result<Vec<_>>>()?;
    nus.par_iter()
        .zip(opts.par_iter())
        .map(|(&nu, opts)| {
            let mut total = 0.0;
            for (train, validation) in &splits {
                let out = run_split_pipeline(train, nu, opts, None)?;
                total += refit_loss(train, validation, &out.evaluation.selected, refit)?;
            }
            Ok(total / splits.len() as f64)
        })
        .collect()
}

/// Cross-validated `lambda_hat` for magnitude statistics at a fixed `nu`:
/// the grid point minimizing the mean validation loss of the split LASSO
/// `beta(lambda)` fitted on the training rows.
pub fn cross_validate_lambda(
    problem: &StructuralProblem,
    nu: f64,
    grid: &LambdaGrid,
    parts: &[Vec<usize>],
    opts: &PipelineOptions,
) -> Result<(f64, Vec<f64>)> {
    check_partition(problem, parts, 1)?;
    let mut losses = vec![0.0; grid.len()];
    for part in parts {
        let train = problem.select_rows(&complement(problem.n(), part))?;
        let validation = problem.select_rows(part)?;
        let path = solve_split_lasso_path_with(&train, nu, grid, &opts.tol)?;
        for (k, beta) in path.beta_path.iter().enumerate() {
            losses[k] += prediction_loss(&validation, beta) / parts.len() as f64;
        }
    }
    let best = argmin(&losses).ok_or_else(|| SkfError::invalid("all validation losses are NaN"))?;
    Ok((grid.values[best], losses))
}
