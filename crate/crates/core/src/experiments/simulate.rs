use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use super::config::SimConfig;
use super::cv::{argmin, cross_validate_lambda, cv_losses, feasible_folds, kfold_partition};
use super::data::gen_dataset_with;
use super::io::{serialize_threshold, write_json};
use super::pipeline::{run_split_pipeline, PipelineOptions};
use crate::baseline::baseline_knockoff_select;
use crate::error::{Result, SkfError};
use crate::filter::{ms_ratio_curve, select_and_evaluate, WStatistics};
use crate::numerics::{numerical_rank, Matrix, Tolerances};
use crate::path::{LambdaGrid, StatMode};

pub const METHOD_SPLIT: &str = "split";
pub const METHOD_SPLIT_CV: &str = "split-cv";
pub const METHOD_KNOCKOFF: &str = "knockoff";

/// One method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub method: &'static str,
    pub nu: Option<f64>,
    pub fdp: f64,
    pub power: f64,
    pub selected: usize,
    #[serde(serialize_with = "serialize_threshold")]
    pub threshold: f64,
    pub cv_loss: Option<f64>,
    /// `M_t(W) <= M_t(W^s)` at every `t`.
    pub m_ratio_dominated: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuRecord {
    pub nu: f64,
    pub mean_fdr: f64,
    pub sd_fdr: f64,
    pub mean_power: f64,
    pub sd_power: f64,
    pub mean_cv_loss: Option<f64>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: &'static str,
    pub mean_fdr: f64,
    pub sd_fdr: f64,
    pub mean_power: f64,
    pub sd_power: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRecord {
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: SimConfig,
    /// Fold count actually used by cross-validation.
    pub cv_folds: Option<usize>,
    pub per_nu: Vec<NuRecord>,
    pub cv_selected: Option<MethodSummary>,
    pub baseline: Option<MethodSummary>,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<FailureRecord>,
}

impl RunSummary {
    pub fn records_for(&self, method: &str) -> impl Iterator<Item = &ReplicateRecord> + '_ {
        let method = method.to_string();
        self.records.iter().filter(move |r| r.method == method)
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Checks `M_t(W) <= M_t(W^s)` at every breakpoint of either ratio.
pub fn m_ratio_dominated(stats: &WStatistics) -> bool {
    let mut ts: Vec<f64> = stats
        .w
        .iter()
        .chain(stats.w_s.iter())
        .map(|v| v.abs())
        .filter(|v| *v > 0.0)
        .collect();
    ts.sort_by(|a, b| a.partial_cmp(b).expect("finite W"));
    ts.dedup();
    match ms_ratio_curve(stats, &ts, None) {
        Ok(curve) => curve.iter().all(|(a, b)| a <= b),
        Err(_) => false,
    }
}

struct Plan {
    d: Matrix,
    nus: Vec<f64>,
    grid: LambdaGrid,
    folds: Option<usize>,
    baseline: bool,
}

fn plan(config: &SimConfig) -> Result<Plan> {
    config.validate()?;
    let d = config.d_matrix()?;
    let (n, p, m) = (config.n, config.p, d.nrows());
    if n < m + p {
        return Err(SkfError::infeasible(format!(
            "split knockoffs need n >= m + p, got n = {n}, m = {m}, p = {p}"
        )));
    }
    let folds = if config.cv {
        let f = feasible_folds(n, m, p, config.folds).ok_or_else(|| {
            SkfError::infeasible(format!(
                "no fold count keeps n_train >= m + p = {} with n = {n}",
                m + p
            ))
        })?;
        if f != config.folds {
            warn!("{} folds leave training parts below m + p = {}; using {f}", config.folds, m + p);
        }
        Some(f)
    } else {
        None
    };
    let baseline = config.baseline && m <= p && numerical_rank(&d, Tolerances::default().rank) == m;
    if config.baseline && !baseline {
        warn!("the knockoff baseline needs rank(D) = m <= p; skipping it");
    }
    Ok(Plan { nus: config.nu_values()?, grid: config.lambda_grid()?, d, folds, baseline })
}

fn run_replicate(config: &SimConfig, plan: &Plan, rep: usize) -> Result<Vec<ReplicateRecord>> {
    let data = gen_dataset_with(config, &plan.d, rep)?;
    let problem = data.problem()?;
    let truth = Some(data.support.as_slice());
    let base_opts = PipelineOptions {
        q: config.q,
        plus: config.plus,
        eta: config.eta,
        mode: config.mode,
        lambda_hat: config.lambda_hat,
        grid: plan.grid.clone(),
        ..PipelineOptions::default()
    };
    let parts = match plan.folds {
        Some(f) => Some(kfold_partition(config.n, f, config.seed, rep)?),
        None if config.mode == StatMode::Magnitude && config.lambda_hat.is_none() => {
            Some(kfold_partition(config.n, config.folds, config.seed, rep)?)
        }
        None => None,
    };

    let mut per_nu_opts = Vec::with_capacity(plan.nus.len());
    for &nu in &plan.nus {
        let mut opts = base_opts.clone();
        if opts.mode == StatMode::Magnitude && opts.lambda_hat.is_none() {
            let parts = parts.as_ref().expect("partition exists in magnitude mode");
            opts.lambda_hat = Some(cross_validate_lambda(&problem, nu, &plan.grid, parts, &opts)?.0);
        }
        per_nu_opts.push(opts);
    }
    let cv_losses: Vec<Option<f64>> = match (plan.folds, &parts) {
        (Some(_), Some(parts)) => cv_losses(&problem, &plan.nus, parts, config.cv_refit, &per_nu_opts)?
            .into_iter()
            .map(Some)
            .collect(),
        _ => vec![None; plan.nus.len()],
    };

    let mut records = Vec::new();
    for ((&nu, opts), &cv_loss) in plan.nus.iter().zip(&per_nu_opts).zip(&cv_losses) {
        let out = run_split_pipeline(&problem, nu, opts, truth)?;
        records.push(ReplicateRecord {
            replicate: rep,
            method: METHOD_SPLIT,
            nu: Some(nu),
            fdp: out.evaluation.fdp.unwrap_or(0.0),
            power: out.evaluation.power.unwrap_or(0.0),
            selected: out.evaluation.selected.len(),
            threshold: out.threshold,
            cv_loss,
            m_ratio_dominated: Some(m_ratio_dominated(&out.w)),
        });
    }

    if plan.folds.is_some() {
        let losses: Vec<f64> = cv_losses.iter().map(|l| l.unwrap_or(f64::NAN)).collect();
        let best = argmin(&losses).ok_or_else(|| SkfError::invalid("no finite CV loss"))?;
        let chosen = ReplicateRecord { method: METHOD_SPLIT_CV, ..records[best].clone() };
        records.push(chosen);
    }

    if plan.baseline {
        let res = baseline_knockoff_select(&problem, &plan.grid, config.q, config.plus)?;
        let eval = select_and_evaluate(&res.w, res.threshold, truth, problem.m())?;
        records.push(ReplicateRecord {
            replicate: rep,
            method: METHOD_KNOCKOFF,
            nu: None,
            fdp: eval.fdp.unwrap_or(0.0),
            power: eval.power.unwrap_or(0.0),
            selected: eval.selected.len(),
            threshold: res.threshold,
            cv_loss: None,
            m_ratio_dominated: None,
        });
    }
    info!("replicate {rep} done");
    Ok(records)
}

fn summarize_method(records: &[ReplicateRecord], method: &'static str) -> Option<MethodSummary> {
    let rows: Vec<&ReplicateRecord> = records.iter().filter(|r| r.method == method).collect();
    if rows.is_empty() {
        return None;
    }
    let (mean_fdr, sd_fdr) = mean_sd(&rows.iter().map(|r| r.fdp).collect::<Vec<_>>());
    let (mean_power, sd_power) = mean_sd(&rows.iter().map(|r| r.power).collect::<Vec<_>>());
    Some(MethodSummary { method, mean_fdr, sd_fdr, mean_power, sd_power, runs: rows.len() })
}

pub fn run_simulation(config: &SimConfig) -> Result<RunSummary> {
    let plan = plan(config)?;
    let outcomes: Vec<Result<Vec<ReplicateRecord>>> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| run_replicate(config, &plan, rep))
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(mut r) => records.append(&mut r),
            Err(e) => {
                warn!("replicate {rep} failed: {e}");
                failures.push(FailureRecord { replicate: rep, error: e.to_string() });
            }
        }
    }
    if failures.len() * 10 > config.replicates {
        return Err(SkfError::TooManyFailures { failed: failures.len(), total: config.replicates });
    }

    let per_nu = plan
        .nus
        .iter()
        .map(|&nu| {
            let rows: Vec<&ReplicateRecord> = records
                .iter()
                .filter(|r| r.method == METHOD_SPLIT && r.nu == Some(nu))
                .collect();
            let (mean_fdr, sd_fdr) = mean_sd(&rows.iter().map(|r| r.fdp).collect::<Vec<_>>());
            let (mean_power, sd_power) = mean_sd(&rows.iter().map(|r| r.power).collect::<Vec<_>>());
            let losses: Vec<f64> = rows.iter().filter_map(|r| r.cv_loss).collect();
            NuRecord {
                nu,
                mean_fdr,
                sd_fdr,
                mean_power,
                sd_power,
                mean_cv_loss: (!losses.is_empty()).then(|| mean_sd(&losses).0),
                runs: rows.len(),
            }
        })
        .collect();

    Ok(RunSummary {
        config: config.clone(),
        cv_folds: plan.folds,
        per_nu,
        cv_selected: summarize_method(&records, METHOD_SPLIT_CV),
        baseline: summarize_method(&records, METHOD_KNOCKOFF),
        records,
        failures,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let to_err = |e: csv::Error| SkfError::Parse { path: path.display().to_string(), message: e.to_string() };
    let mut writer = csv::Writer::from_path(path).map_err(to_err)?;
    for row in rows {
        writer.serialize(row).map_err(to_err)?;
    }
    writer.flush().map_err(|source| SkfError::Io { path: path.display().to_string(), source })
}

/// Writes `per_nu.csv`, `replicates.csv`, `methods.csv` and `summary.json`.
pub fn write_outputs(summary: &RunSummary, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| SkfError::Io { path: dir.display().to_string(), source })?;
    write_csv(&dir.join("per_nu.csv"), &summary.per_nu)?;
    write_csv(&dir.join("replicates.csv"), &summary.records)?;
    let methods: Vec<&MethodSummary> = summary.cv_selected.iter().chain(summary.baseline.iter()).collect();
    write_csv(&dir.join("methods.csv"), &methods)?;
    write_json(&dir.join("summary.json"), summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::DKind;
    use crate::numerics::Vector;

    #[test]
    fn sample_sd() {
        assert_eq!(mean_sd(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn domination_check() {
        let w = WStatistics { w: Vector::from_vec(vec![3.0, -4.0]), w_s: Vector::from_vec(vec![3.0, -1.0]) };
        assert!(m_ratio_dominated(&w));
        let bad = WStatistics { w: w.w_s.clone(), w_s: w.w.clone() };
        assert!(!m_ratio_dominated(&bad));
    }

    fn small_config() -> SimConfig {
        SimConfig {
            n: 60,
            p: 8,
            k: 4,
            amplitude: 2.0,
            d_kind: DKind::D2,
            nu_grid: [-1.0, 1.0, 1.0],
            lambda_grid: [0.0, -4.0, 0.05],
            replicates: 3,
            ..SimConfig::default()
        }
    }

    #[test]
    fn small_run_is_consistent() {
        let config = SimConfig { cv: true, folds: 3, baseline: true, ..small_config() };
        let summary = run_simulation(&config).unwrap();
        assert!(summary.failures.is_empty());
        assert_eq!(summary.per_nu.len(), 3);
        for rec in &summary.per_nu {
            assert_eq!(rec.runs, 3);
            assert!((0.0..=1.0).contains(&rec.mean_fdr));
            assert!((0.0..=1.0).contains(&rec.mean_power));
            assert!(rec.mean_cv_loss.is_some());
        }
        assert_eq!(summary.cv_selected.as_ref().unwrap().runs, 3);
        assert_eq!(summary.baseline.as_ref().unwrap().runs, 3);
        for r in &summary.records {
            if r.selected == 0 {
                assert_eq!(r.fdp, 0.0);
            }
            assert_ne!(r.m_ratio_dominated, Some(false));
        }
    }

    #[test]
    fn single_replicate_has_zero_sd() {
        let config = SimConfig { replicates: 1, ..small_config() };
        let summary = run_simulation(&config).unwrap();
        for rec in &summary.per_nu {
            assert_eq!(rec.sd_fdr, 0.0);
            assert_eq!(rec.sd_power, 0.0);
        }
    }

    #[test]
    fn infeasible_dimensions_are_rejected() {
        let config = SimConfig { n: 10, ..small_config() };
        assert!(matches!(run_simulation(&config), Err(SkfError::InfeasibleDimension(_))));
    }
}
