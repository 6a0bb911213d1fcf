//! `lrgc` command line tool.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lrgc::data::ColumnKind;
use lrgc::em::{fit, EmConfig};
use lrgc::eval::{self, coverage_and_length, error_vs_reliability_curve, ExperimentConfig, Method, Metric};
use lrgc::inference::{impute, ImputeConfig, DEFAULT_ALPHA};
use lrgc::io::{self, Dataset, ModelFile, TruthFile};
use lrgc::synth::{simulate, DataKind, SynthSpec};
use lrgc::{Error, ErrorCategory, MarginalModel};

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(name = "lrgc", version, about = "Low-rank Gaussian copula imputation with uncertainty quantification")]
struct Cli {
    /// Worker threads; 0 lets the runtime decide
    #[arg(long, global = true, env = "LRGC_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its generating parameters
    Simulate(SimulateArgs),
    /// Fit marginals and the copula model to a CSV dataset
    Fit(FitArgs),
    /// Impute missing entries with a fitted model
    Impute(ImputeArgs),
    /// Score imputations against the complete data
    Evaluate(EvaluateArgs),
    /// Run replicated benchmark experiments on a synthetic protocol
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Named setting: lowrank-cont, highrank-cont, ordinal-high, ordinal-low,
    /// binary-high, binary-low
    #[arg(long)]
    protocol: Option<String>,
    /// Data kind: identity, cubic, ordinal or binary
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Fraction of entries to mask
    #[arg(long)]
    missing: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Column kind (continuous, ordinal or linear), either once or once per
    /// column separated by commas; inferred when absent
    #[arg(long)]
    types: Option<String>,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Output directory for X_hat.csv and uq.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Complete data CSV
    #[arg(long)]
    truth: PathBuf,
    /// Completed data CSV
    #[arg(long)]
    imputed: PathBuf,
    /// Uncertainty table written by `impute`
    #[arg(long)]
    uq: PathBuf,
    /// Comma-separated percentages of most reliable entries
    #[arg(long, value_delimiter = ',')]
    curve_grid: Option<Vec<f64>>,
    /// Output directory for report.csv and curve.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    protocol: String,
    #[arg(long, default_value = "lrgc")]
    method: String,
    /// Defaults to the generating rank of the protocol
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let mut spec = match &a.protocol {
        Some(name) => SynthSpec::protocol(name, a.seed)?,
        None => SynthSpec::protocol("lowrank-cont", a.seed)?,
    };
    if let Some(kind) = &a.kind {
        spec.kind = match kind.as_str() {
            "identity" => DataKind::ContinuousIdentity,
            "cubic" => DataKind::ContinuousCubic,
            "ordinal" => DataKind::Ordinal { levels: a.levels.unwrap_or(5) },
            "binary" => DataKind::Binary,
            other => return Err(usage(format!("unknown data kind '{other}'"))),
        };
    } else if let Some(levels) = a.levels {
        match spec.kind {
            DataKind::Ordinal { .. } => spec.kind = DataKind::Ordinal { levels },
            _ => return Err(usage("--levels needs ordinal data")),
        }
    }
    spec.n = a.n.unwrap_or(spec.n);
    spec.p = a.p.unwrap_or(spec.p);
    spec.k = a.rank.unwrap_or(spec.k);
    spec.sigma2 = a.sigma2.unwrap_or(spec.sigma2);
    spec.missing_ratio = a.missing.unwrap_or(spec.missing_ratio);
    spec.validate()?;

    let (data, observed) = simulate(&spec)?;
    fs::create_dir_all(&a.out)?;
    let names = io::default_names(spec.p);
    let mut w = create(&a.out.join("X_observed.csv"))?;
    io::write_observed(&mut w, &names, &observed)?;
    w.flush()?;
    let mut w = create(&a.out.join("X_complete.csv"))?;
    io::write_matrix(&mut w, &names, &data.complete)?;
    w.flush()?;
    TruthFile::from_synth(&spec, &data).save(a.out.join("truth.json"))?;
    println!(
        "wrote {}x{} dataset with {} missing entries to {}",
        spec.n,
        spec.p,
        observed.missing_entries().len(),
        a.out.display()
    );
    Ok(())
}

fn parse_types(types: &str, data: &Dataset) -> Result<ColumnKind> {
    let kinds = types.split(',').map(str::parse).collect::<Result<Vec<ColumnKind>>>()?;
    match kinds.as_slice() {
        [one] => Ok(*one),
        many if many.len() == data.names.len() => {
            if many.iter().all(|k| *k == many[0]) {
                Ok(many[0])
            } else {
                let listed: Vec<String> = many.iter().zip(&data.names).map(|(k, n)| format!("{n}={k}")).collect();
                Err(Error::MixedColumnKinds(listed.join(", ")))
            }
        }
        many => Err(usage(format!("--types lists {} kinds for {} columns", many.len(), data.names.len()))),
    }
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let data = Dataset::read_path(&a.data)?;
    data.check_columns()?;
    let declared = a.types.as_deref().map(|t| parse_types(t, &data)).transpose()?;
    let kind = io::resolve_kind(&data, declared)?;
    let cfg = EmConfig::new(a.rank).with_max_iter(a.max_iter).with_rel_tol(a.tol).with_seed(a.seed);
    cfg.validate(data.matrix.ncols())?;
    let marginals = MarginalModel::fit(&data.matrix, kind)?;
    let fitted = fit(&data.matrix, &marginals, &cfg)?;
    for rec in &fitted.diagnostics.iterations {
        println!("iter {:>3}  rel_change {:.6e}  sigma2 {:.6}", rec.iteration, rec.rel_change, rec.sigma2);
    }
    println!(
        "{} after {} iterations",
        if fitted.diagnostics.converged { "converged" } else { "stopped" },
        fitted.diagnostics.iterations.len()
    );
    ModelFile::from_fit(data.names.clone(), &marginals, &fitted, a.seed).save(&a.out)?;
    Ok(())
}

fn impute_cmd(a: ImputeArgs) -> Result<()> {
    let data = Dataset::read_path(&a.data)?;
    let model = ModelFile::load(&a.model)?;
    model.check_columns(&data.names)?;
    let params = model.params()?;
    let marginals = model.marginal_model()?;
    let cfg = ImputeConfig { alpha: a.alpha, ..ImputeConfig::default() };
    let result = impute(&data.matrix, &marginals, &params, None, &cfg)?;
    fs::create_dir_all(&a.out)?;
    let mut w = create(&a.out.join("X_hat.csv"))?;
    data.write_completed(&mut w, &result.completed)?;
    w.flush()?;
    let mut w = create(&a.out.join("uq.csv"))?;
    io::write_uq(&mut w, &result)?;
    w.flush()?;
    println!("imputed {} entries into {}", result.entries.len(), a.out.display());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let (truth_names, truth) = io::read_matrix(File::open(&a.truth)?)?;
    let (names, completed) = io::read_matrix(File::open(&a.imputed)?)?;
    if truth.shape() != completed.shape() {
        return Err(Error::DimensionMismatch(format!(
            "truth is {}x{}, imputed is {}x{}",
            truth.nrows(),
            truth.ncols(),
            completed.nrows(),
            completed.ncols()
        )));
    }
    if truth_names != names {
        return Err(Error::Schema("truth and imputed files have different column names".into()));
    }
    let result = io::read_uq(File::open(&a.uq)?, completed, DEFAULT_ALPHA)?;
    let metric = Metric::for_kind(result.kind);
    let positions = result.positions();
    let error = metric.eval(&truth, &result.completed, &positions)?;

    fs::create_dir_all(&a.out)?;
    let mut w = create(&a.out.join("report.csv"))?;
    writeln!(w, "metric,value")?;
    writeln!(w, "{},{}", metric.name(), io::format_f64(error))?;
    println!("{} {error:.4}", metric.name());
    if result.kind.has_interval() {
        let (coverage, length) = coverage_and_length(&result, &truth)?;
        writeln!(w, "coverage,{}", io::format_f64(coverage))?;
        writeln!(w, "length,{}", io::format_f64(length))?;
        println!("coverage {coverage:.4}  length {length:.4}");
    }
    w.flush()?;

    let grid = a.curve_grid.unwrap_or_else(eval::default_grid);
    let curve = error_vs_reliability_curve(&result, &truth, &grid, metric)?;
    let mut w = create(&a.out.join("curve.csv"))?;
    writeln!(w, "m,{}", metric.name())?;
    for (m, e) in curve {
        writeln!(w, "{},{}", io::format_f64(m), io::format_f64(e))?;
    }
    w.flush()?;
    Ok(())
}

fn experiment_cmd(a: ExperimentArgs) -> Result<()> {
    let method: Method = a.method.parse()?;
    SynthSpec::protocol(&a.protocol, a.seed)?;
    if a.reps < 2 {
        return Err(usage("--reps must be at least 2"));
    }
    let mut cfg = ExperimentConfig::new(&a.protocol, method, a.reps, a.seed);
    cfg.rank = a.rank;
    cfg.alpha = a.alpha;
    cfg.max_iter = a.max_iter;
    cfg.rel_tol = a.tol;

    let outcomes = eval::run_experiment(&cfg)?;
    fs::create_dir_all(&a.out)?;
    let errors = eval::error_report(&cfg, &outcomes)?;
    let mut w = create(&a.out.join("error.csv"))?;
    errors.write_csv(&mut w)?;
    w.flush()?;
    println!("{} {:.4} ({:.4})", errors.metric, errors.mean, errors.std_error);
    if outcomes.iter().all(|o| o.coverage.is_some()) {
        let (coverage, length) = eval::interval_reports(&cfg, &outcomes)?;
        for (report, file) in [(&coverage, "coverage.csv"), (&length, "length.csv")] {
            let mut w = create(&a.out.join(file))?;
            report.write_csv(&mut w)?;
            w.flush()?;
            println!("{} {:.4} ({:.4})", report.metric, report.mean, report.std_error);
        }
    }
    let curve = eval::curve_report(&cfg, &outcomes)?;
    let mut w = create(&a.out.join("curve.csv"))?;
    curve.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Usage => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Impute(a) => impute_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
