//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;

use common::{brute_force_threshold, ista_lasso, rng, split_kkt_residual, uniform_matrix, uniform_vector};
use skf_core::augment::{build_augmented, SplitKnockoffCopy, StructuralProblem};
use skf_core::experiments::{
    diagnostics, gen_dataset, make_d, run_simulation, run_split_pipeline, DKind, PipelineOptions,
    m_ratio_dominated, RunSummary, SignCheck, SimConfig,
};
use skf_core::filter::knockoff_threshold;
use skf_core::numerics::max_abs;
use skf_core::path::{
    make_lambda_grid, solve_split_lasso_path, stage1_statistics, stage2_statistics, StatMode,
};
use skf_core::{Matrix, Vector};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

const KINDS: [DKind; 3] = [DKind::D1, DKind::D2, DKind::D3];

fn random_problem(rng: &mut rand_chacha::ChaCha8Rng, n: usize, p: usize, d: Matrix) -> StructuralProblem {
    let x = uniform_matrix(n, p, rng);
    let y = uniform_vector(n, rng);
    StructuralProblem::new(x, y, d).unwrap()
}

fn copy_exactness() -> Outcome {
    let mut r = rng(101);
    let mut worst = 0.0_f64;
    for trial in 0..50 {
        let kind = KINDS[trial % 3];
        let nu = [0.1, 1.0, 10.0, 100.0][(trial / 3) % 4];
        let p = r.random_range(2..=12);
        let d = make_d(kind, p).unwrap();
        let m = d.nrows();
        let n = r.random_range(m + p..=80);
        let prob = random_problem(&mut r, n, p, d.clone());
        let aug = build_augmented(&prob, nu).unwrap();
        let copy = SplitKnockoffCopy::equicorrelated(&aug, 0.1).unwrap();

        // lifted design rebuilt from (X, D)
        let rn = (n as f64).sqrt();
        let rv = nu.sqrt();
        let mut a_beta = Matrix::zeros(n + m, p);
        a_beta.view_mut((0, 0), (n, p)).copy_from(&(prob.x() / rn));
        a_beta.view_mut((n, 0), (m, p)).copy_from(&(&d / rv));
        let mut a_gamma = Matrix::zeros(n + m, m);
        a_gamma.view_mut((n, 0), (m, m)).copy_from(&(-Matrix::identity(m, m) / rv));
        let a = &copy.a_gamma_tilde;
        let eye = Matrix::identity(m, m) / nu;
        let gram = max_abs(&(a.tr_mul(a) - &eye));
        let cross_gamma = max_abs(&(a_gamma.tr_mul(a) - (&eye - Matrix::from_diagonal(&copy.s))));
        let cross_beta = max_abs(&(a_beta.tr_mul(a) + d.transpose() / nu));
        worst = worst.max(gram).max(cross_gamma).max(cross_beta);
    }
    outcome(worst <= 1e-8, format!("worst identity residual {worst:.2e} over 50 problems"))
}

fn threshold_oracle() -> Outcome {
    let mut r = rng(202);
    let mut mismatches = 0;
    let mut checks = 0;
    for _ in 0..500 {
        let len = r.random_range(1..=12);
        // small integers force ties and zeros
        let w: Vec<f64> = (0..len).map(|_| r.random_range(-6..=6) as f64).collect();
        for q in [0.1, 0.2, 0.5] {
            for plus in [false, true] {
                checks += 1;
                let got = knockoff_threshold(&Vector::from_vec(w.clone()), q, plus).unwrap();
                if got != brute_force_threshold(&w, q, plus) {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches in {checks} comparisons"))
}

fn path_kkt() -> Outcome {
    let mut r = rng(303);
    let grid = make_lambda_grid(0.0, -6.0, 0.01).unwrap();
    let mut worst = 0.0_f64;
    for trial in 0..10 {
        let d = make_d(KINDS[trial % 2], 8).unwrap();
        let nu = [0.1, 1.0, 10.0][trial % 3];
        let prob = random_problem(&mut r, 40, 8, d);
        let path = solve_split_lasso_path(&prob, nu, &grid).unwrap();
        for (k, &lam) in grid.values.iter().enumerate() {
            let res = split_kkt_residual(
                prob.x(),
                prob.y(),
                prob.d(),
                nu,
                lam,
                &path.beta_path[k],
                &path.gamma_path[k],
            );
            worst = worst.max(res);
        }
    }
    outcome(worst <= 1e-7, format!("worst residual {worst:.2e} over 10 paths of 601 points"))
}

fn stage_closed_form() -> Outcome {
    let mut r = rng(404);
    let grid = make_lambda_grid(0.0, -3.0, 0.25).unwrap();
    let mut worst = 0.0_f64;
    for trial in 0..10 {
        let p = 6;
        let d = make_d(KINDS[trial % 3], p).unwrap();
        let m = d.nrows();
        let nu = [0.5, 2.0][trial % 2];
        let prob = random_problem(&mut r, 40, p, d);
        let path = solve_split_lasso_path(&prob, nu, &grid).unwrap();
        let aug = build_augmented(&prob, nu).unwrap();
        let copy = SplitKnockoffCopy::equicorrelated(&aug, 0.1).unwrap();
        let scaled_eye = Matrix::identity(m, m) / nu.sqrt();
        for (k, &lam) in grid.values.iter().enumerate() {
            let (z, r1) = stage1_statistics(&path, &prob, StatMode::Magnitude, Some(lam)).unwrap();
            let target = prob.d() * &path.beta_path[k] / nu.sqrt();
            let v1 = ista_lasso(&scaled_eye, &target, lam, 0.5, 1e-12);
            worst = worst.max((v1.map(f64::abs) - &z).amax());

            let (z2, _, _) =
                stage2_statistics(&path, &aug, &copy, &r1, StatMode::Magnitude, Some(lam)).unwrap();
            let resid = &aug.y_tilde - &aug.a_beta * &path.beta_path[k];
            let v2 = ista_lasso(&copy.a_gamma_tilde, &resid, lam, 0.5, 1e-12);
            worst = worst.max((v2.map(f64::abs) - z2).amax());
        }
    }
    outcome(worst <= 1e-6, format!("max deviation {worst:.2e} over 10 instances"))
}

struct BenchmarkRun {
    kind: DKind,
    summary: RunSummary,
}

fn benchmark_runs() -> Vec<BenchmarkRun> {
    KINDS
        .iter()
        .map(|&kind| {
            let config = SimConfig {
                d_kind: kind,
                nu_grid: [-1.0, 3.0, 0.4],
                cv: true,
                baseline: kind == DKind::D2,
                ..SimConfig::default()
            };
            BenchmarkRun { kind, summary: run_simulation(&config).unwrap() }
        })
        .collect()
}

fn benchmark_targets(runs: &[BenchmarkRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut split_d2_fdr = f64::NAN;
    for run in runs {
        let s = run.summary.cv_selected.as_ref().expect("cv summary");
        let (centre, sd, power_floor) = match run.kind {
            DKind::D1 => (0.0266, 0.0636, 0.98),
            DKind::D2 => (0.0401, 0.0788, 0.95),
            _ => (0.0248, 0.0326, 0.97),
        };
        let band = 3.0 * sd / 20f64.sqrt();
        let mut ok = (s.mean_fdr - centre).abs() <= band && s.mean_power >= power_floor;
        if run.kind == DKind::D1 {
            ok &= s.mean_fdr <= 0.20;
        }
        if run.kind == DKind::D2 {
            split_d2_fdr = s.mean_fdr;
        }
        pass &= ok;
        parts.push(format!(
            "{:?} fdr {:.4} ({:.4}) power {:.4} ({:.4})",
            run.kind, s.mean_fdr, s.sd_fdr, s.mean_power, s.sd_power
        ));
    }
    let d2 = runs.iter().find(|r| r.kind == DKind::D2).unwrap();
    let base = d2.summary.baseline.as_ref().expect("baseline summary");
    pass &= base.mean_power <= 0.8 && base.mean_fdr >= split_d2_fdr;
    parts.push(format!("knockoff D2 fdr {:.4} power {:.4}", base.mean_fdr, base.mean_power));
    outcome(pass, parts.join("; "))
}

fn fdr_trend(runs: &[BenchmarkRun]) -> Outcome {
    let d2 = &runs.iter().find(|r| r.kind == DKind::D2).unwrap().summary;
    let at = |nu: f64| d2.per_nu.iter().find(|r| (r.nu / nu - 1.0).abs() < 1e-9).unwrap().mean_fdr;
    let (small, large) = (at(0.1), at(1000.0));
    outcome(large <= small, format!("D2 mean FDR {small:.4} at nu = 0.1, {large:.4} at nu = 1000"))
}

fn incoherence() -> Outcome {
    let config = SimConfig { d_kind: DKind::D2, ..SimConfig::default() };
    let data = gen_dataset(&config, 0).unwrap();
    let nus: Vec<f64> = (0..=15).map(|k| 10f64.powf(-1.0 + 0.2 * k as f64)).collect();
    let norms: Vec<f64> = nus
        .iter()
        .map(|&nu| diagnostics(&data.x, &data.d, nu, &data.support, None).unwrap().incoherence_norm)
        .collect();
    let decreasing = norms.windows(2).all(|w| w[1] < w[0]);
    let top = diagnostics(&data.x, &data.d, 100.0, &data.support, None).unwrap();
    outcome(
        decreasing && top.lambda_min_h11 > 0.0,
        format!(
            "incoherence {:.4} at nu = 0.1 to {:.4} at nu = 100 over 16 points, lambda_min(H11) = {:.3e}",
            norms[0],
            norms[norms.len() - 1],
            top.lambda_min_h11
        ),
    )
}

struct SignRuns {
    agreement: f64,
    dominated: usize,
    total: usize,
}

fn sign_runs() -> SignRuns {
    let config = SimConfig { d_kind: DKind::D2, ..SimConfig::default() };
    let opts = PipelineOptions::default();
    let (mut sum, mut count, mut dominated) = (0.0, 0, 0);
    for rep in 0..20 {
        let data = gen_dataset(&config, rep).unwrap();
        let prob = data.problem().unwrap();
        let out = run_split_pipeline(&prob, 10.0, &opts, Some(&data.support)).unwrap();
        let check = SignCheck { eps: &data.eps, copy: &out.copy, w: &out.w.w, r: &out.stats.r };
        if let Some(a) = diagnostics(&data.x, &data.d, 10.0, &data.support, Some(check))
            .unwrap()
            .sign_lemma_agreement
        {
            sum += a;
            count += 1;
        }
        if m_ratio_dominated(&out.w) {
            dominated += 1;
        }
    }
    SignRuns { agreement: sum / count.max(1) as f64, dominated, total: 20 }
}

fn sign_agreement(s: &SignRuns) -> Outcome {
    outcome(
        s.agreement >= 0.95,
        format!("mean agreement {:.4} over 20 replicates at nu = 10", s.agreement),
    )
}

fn m_ratio(runs: &[BenchmarkRun], s: &SignRuns) -> Outcome {
    let mut total = s.total;
    let mut dominated = s.dominated;
    for run in runs {
        for rec in &run.summary.records {
            if let Some(flag) = rec.m_ratio_dominated {
                total += 1;
                dominated += usize::from(flag);
            }
        }
    }
    outcome(dominated == total, format!("{dominated} of {total} replicate statistics dominated"))
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("sim.toml");
    std::fs::write(
        &config,
        "n = 60\np = 8\nk = 3\nD_kind = \"D2\"\nreplicates = 4\nnu_grid = [-1.0, 2.0, 1.0]\n\
         lambda_grid = [0.0, -4.0, 0.02]\ncv = true\nbaseline = true\nseed = 7\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_skf"))
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(&out)
            .status()
            .unwrap();
        if !status.success() {
            return outcome(false, format!("skf simulate exited with {status}"));
        }
        outputs.push(csv_files(&out));
    }
    let same = !outputs[0].is_empty() && outputs[0] == outputs[1];
    outcome(same, format!("{} CSV files compared byte for byte", outputs[0].len()))
}

fn report(id: usize, name: &str, start: Instant, result: Outcome, failures: &mut usize) {
    let status = if result.pass { "PASS" } else { "FAIL" };
    if !result.pass {
        *failures += 1;
    }
    println!("{status} [{id}] {name}: {} ({:.1} s)", result.detail, start.elapsed().as_secs_f64());
}

fn main() {
    let mut failures = 0;
    let t = Instant::now();
    report(1, "knockoff copy exactness", t, copy_exactness(), &mut failures);
    let t = Instant::now();
    report(2, "threshold oracle", t, threshold_oracle(), &mut failures);
    let t = Instant::now();
    report(3, "path KKT certification", t, path_kkt(), &mut failures);
    let t = Instant::now();
    report(4, "stage closed-form equivalence", t, stage_closed_form(), &mut failures);

    let t = Instant::now();
    let runs = benchmark_runs();
    report(5, "benchmark FDR and power", t, benchmark_targets(&runs), &mut failures);
    let t = Instant::now();
    report(6, "FDR decreases with nu", t, fdr_trend(&runs), &mut failures);
    let t = Instant::now();
    report(7, "incoherence diagnostic", t, incoherence(), &mut failures);
    let t = Instant::now();
    let signs = sign_runs();
    report(8, "noise sign agreement", t, sign_agreement(&signs), &mut failures);
    let t = Instant::now();
    report(9, "M-ratio domination", t, m_ratio(&runs, &signs), &mut failures);
    let t = Instant::now();
    report(10, "simulate determinism", t, determinism(), &mut failures);

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
