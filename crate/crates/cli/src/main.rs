use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use skf_core::augment::{StructuralProblem, DEFAULT_ETA};
use skf_core::experiments::io::{
    read_indices_csv, read_matrix_csv, read_vector_csv, write_json, write_matrix_csv, SelectionRecord,
};
use skf_core::experiments::{
    cross_validate_lambda, cross_validate_nu, diagnostics, kfold_partition, log_grid, make_d,
    run_simulation, run_split_pipeline, write_outputs, CvRefit, DKind, PipelineOptions, SimConfig,
};
use skf_core::path::{make_lambda_grid, StatMode};
use skf_core::{Result, SkfError};

#[derive(Parser)]
#[command(name = "skf", version, about = "Split knockoffs for structural sparsity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a structural transform D as CSV.
    MakeD {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select the nonzero entries of D beta at a fixed nu.
    Select(SelectArgs),
    /// Choose nu by cross-validation.
    Cv(CvArgs),
    /// Run a Monte Carlo simulation from a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Path-consistency diagnostics at a fixed nu.
    Diag(DiagArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    D1,
    D2,
    D3,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Path,
    Magnitude,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefitArg {
    Validation,
    Training,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    d: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long, default_value_t = 0.2)]
    q: f64,
    /// Use the knockoff+ threshold.
    #[arg(long)]
    plus: bool,
    #[arg(long, value_enum, default_value = "path")]
    mode: ModeArg,
    /// log10 lambda grid as max:min:step.
    #[arg(long, default_value = "0:-6:0.01", allow_hyphen_values = true)]
    lambda_grid: String,
    /// Fixed lambda for magnitude statistics; cross-validated when absent.
    #[arg(long)]
    lambda_hat: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    eta: f64,
    /// Seed for fold assignment.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    nu: f64,
    #[command(flatten)]
    filter: FilterArgs,
    /// 1-based indices of the true support, to report FDR and power.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    /// log10 nu grid as min:max:step.
    #[arg(long, default_value = "-1:3:0.4", allow_hyphen_values = true)]
    nu_grid: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, value_enum, default_value = "training")]
    refit: RefitArg,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    d: PathBuf,
    #[arg(long)]
    nu: f64,
    /// 1-based support indices; without it the support is the split
    /// knockoff selection on --y.
    #[arg(long)]
    s1: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    q: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_triple(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(SkfError::InvalidArgument(format!("expected a:b:step, got '{text}'")));
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| SkfError::InvalidArgument(format!("'{part}' is not a number")))?;
    }
    Ok(out)
}

fn load_problem(data: &DataArgs) -> Result<StructuralProblem> {
    let x = read_matrix_csv(&data.x)?;
    let y = read_vector_csv(&data.y)?;
    let d = read_matrix_csv(&data.d)?;
    StructuralProblem::new(x, y, d)
}

fn pipeline_options(filter: &FilterArgs) -> Result<PipelineOptions> {
    let [top, bottom, step] = parse_triple(&filter.lambda_grid)?;
    let grid = make_lambda_grid(top, bottom, step)?;
    if let Some(lam) = filter.lambda_hat {
        if grid.position(lam).is_none() {
            return Err(SkfError::InvalidArgument(format!("lambda_hat = {lam} is not on the lambda grid")));
        }
    }
    Ok(PipelineOptions {
        q: filter.q,
        plus: filter.plus,
        eta: filter.eta,
        mode: match filter.mode {
            ModeArg::Path => StatMode::PathOrder,
            ModeArg::Magnitude => StatMode::Magnitude,
        },
        lambda_hat: filter.lambda_hat,
        grid,
        ..PipelineOptions::default()
    })
}

/// Fills in a cross-validated `lambda_hat` when magnitude mode lacks one.
fn resolve_lambda_hat(
    problem: &StructuralProblem,
    nu: f64,
    opts: &mut PipelineOptions,
    seed: u64,
) -> Result<()> {
    if opts.mode == StatMode::Magnitude && opts.lambda_hat.is_none() {
        let parts = kfold_partition(problem.n(), 5, seed, 0)?;
        let (lam, _) = cross_validate_lambda(problem, nu, &opts.grid, &parts, opts)?;
        info!("cross-validated lambda_hat = {lam:e}");
        opts.lambda_hat = Some(lam);
    }
    Ok(())
}

fn select(args: &SelectArgs) -> Result<()> {
    let problem = load_problem(&args.data)?;
    let mut opts = pipeline_options(&args.filter)?;
    resolve_lambda_hat(&problem, args.nu, &mut opts, args.filter.seed)?;
    let truth = match &args.truth {
        Some(path) => Some(read_indices_csv(path, problem.m())?),
        None => None,
    };
    let out = run_split_pipeline(&problem, args.nu, &opts, truth.as_deref())?;
    let record = SelectionRecord {
        nu: args.nu,
        q: opts.q,
        plus: opts.plus,
        threshold: out.threshold,
        selected: out.evaluation.selected.iter().map(|i| i + 1).collect(),
        w: out.w.w.iter().copied().collect(),
        z: out.stats.z.iter().copied().collect(),
        z_tilde: out.stats.z_tilde.iter().copied().collect(),
        fdr: out.evaluation.fdp,
        power: out.evaluation.power,
    };
    write_json(&args.out, &record)
}

fn cv(args: &CvArgs) -> Result<()> {
    let problem = load_problem(&args.data)?;
    let [start, end, step] = parse_triple(&args.nu_grid)?;
    let nus = log_grid(start, end, step)?;
    let opts = pipeline_options(&args.filter)?;
    if opts.mode == StatMode::Magnitude && opts.lambda_hat.is_none() {
        return Err(SkfError::InvalidArgument(
            "cross-validating nu in magnitude mode needs --lambda-hat".into(),
        ));
    }
    let parts = kfold_partition(problem.n(), args.folds, args.filter.seed, 0)?;
    let refit = match args.refit {
        RefitArg::Validation => CvRefit::Validation,
        RefitArg::Training => CvRefit::Training,
    };
    let result = cross_validate_nu(&problem, &nus, &parts, refit, &opts)?;
    write_json(&args.out, &result)
}

fn diag(args: &DiagArgs) -> Result<()> {
    let x = read_matrix_csv(&args.x)?;
    let d = read_matrix_csv(&args.d)?;
    let support = match (&args.s1, &args.y) {
        (Some(path), _) => read_indices_csv(path, d.nrows())?,
        (None, Some(y)) => {
            let problem = StructuralProblem::new(x.clone(), read_vector_csv(y)?, d.clone())?;
            let opts = PipelineOptions { q: args.q, ..PipelineOptions::default() };
            run_split_pipeline(&problem, args.nu, &opts, None)?.evaluation.selected
        }
        (None, None) => {
            return Err(SkfError::InvalidArgument("diag needs --s1 or --y".into()));
        }
    };
    let report = diagnostics(&x, &d, args.nu, &support, None)?;
    write_json(&args.out, &report)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeD { kind, p, out } => {
            let kind = match kind {
                KindArg::D1 => DKind::D1,
                KindArg::D2 => DKind::D2,
                KindArg::D3 => DKind::D3,
            };
            write_matrix_csv(&out, &make_d(kind, p)?)
        }
        Command::Select(args) => select(&args),
        Command::Cv(args) => cv(&args),
        Command::Simulate { config, out_dir } => {
            let config = SimConfig::from_path(&config)?;
            let summary = run_simulation(&config)?;
            write_outputs(&summary, &out_dir)
        }
        Command::Diag(args) => diag(&args),
    }
}

fn exit_code(err: &SkfError) -> u8 {
    match err {
        SkfError::InfeasibleDimension(_) => 3,
        SkfError::Convergence { .. } | SkfError::TooManyFailures { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
