use crate::augment::{build_augmented_with, build_split_knockoff, StructuralProblem, SplitKnockoffCopy, DEFAULT_ETA};
use crate::error::Result;
use crate::filter::{compute_w_statistics, knockoff_threshold, select_and_evaluate, Evaluation, WStatistics};
use crate::numerics::{Tolerances, Vector};
use crate::path::{significance_statistics, solve_split_lasso_path_augmented, LambdaGrid, SignificanceStats, StatMode};

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub q: f64,
    pub plus: bool,
    pub eta: f64,
    pub mode: StatMode,
    /// Required in magnitude mode; must lie on `grid`.
    pub lambda_hat: Option<f64>,
    pub grid: LambdaGrid,
    /// Overrides the equi-correlated `s`.
    pub separation: Option<Vector>,
    pub tol: Tolerances,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            q: 0.2,
            plus: false,
            eta: DEFAULT_ETA,
            mode: StatMode::PathOrder,
            lambda_hat: None,
            grid: LambdaGrid::default(),
            separation: None,
            tol: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub nu: f64,
    pub stats: SignificanceStats,
    pub w: WStatistics,
    pub threshold: f64,
    pub evaluation: Evaluation,
    pub copy: SplitKnockoffCopy,
    /// Largest KKT residual along the path.
    pub max_kkt: f64,
}

/// Split knockoff selection at a single `nu`. With `truth` (0-based support
/// of `gamma*`) the evaluation carries FDP and power.
pub fn run_split_pipeline(
    problem: &StructuralProblem,
    nu: f64,
    opts: &PipelineOptions,
    truth: Option<&[usize]>,
) -> Result<PipelineOutput> {
    problem.require_split_feasible()?;
    let aug = build_augmented_with(problem, nu, opts.tol)?;
    let s = match &opts.separation {
        Some(s) => s.clone(),
        None => aug.equicorrelated_s(opts.eta)?,
    };
    let mut copy = build_split_knockoff(&aug, &s)?;
    if opts.separation.is_none() {
        copy.eta = Some(opts.eta);
    }
    let path = solve_split_lasso_path_augmented(problem, &aug, &opts.grid)?;
    let stats = significance_statistics(&path, problem, &aug, &copy, opts.mode, opts.lambda_hat)?;
    let w = compute_w_statistics(&stats.z, &stats.z_tilde)?;
    let threshold = knockoff_threshold(&w.w, opts.q, opts.plus)?;
    let evaluation = select_and_evaluate(&w.w, threshold, truth, problem.m())?;
    let max_kkt = path.kkt_residuals.iter().fold(0.0_f64, |a, &b| a.max(b));
    Ok(PipelineOutput { nu, stats, w, threshold, evaluation, copy, max_kkt })
}
