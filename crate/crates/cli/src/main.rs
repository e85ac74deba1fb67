use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mgsolve::autodiff::GradCheckOptions;
use mgsolve::bench::{bench_row, instance_spec, solve_with, BenchOptions, BenchResultRow, SolverKind};
use mgsolve::datasets::{self, DistributionSpec};
use mgsolve::iteration::{Outcome, DEFAULT_MAX_ITERS};
use mgsolve::learned::SolverWeights;
use mgsolve::training::{self, HistoryRow, TrainConfig};
use mgsolve::weights_io::{load_weights, save_weights};
use mgsolve::{GridTensor, Precision, Real};

const EXIT_CONFIG: u8 = 2;
const EXIT_TRAINING: u8 = 3;
const EXIT_DIVERGED: u8 = 4;
const EXIT_GRADCHECK: u8 = 5;

#[derive(Parser)]
#[command(
    name = "mgsolve",
    version,
    about = "Classical and learned multigrid solvers for convection-diffusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learned solver from a key = value config file.
    Train(TrainArgs),
    /// Solve one random instance with rhs = 1 and print the residual history as CSV.
    Solve(SolveArgs),
    /// Average iteration counts and timings over random instances.
    Bench(BenchArgs),
    /// Compare analytic weight gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write one random coefficient sample as a PGM image.
    GenCoef(GenCoefArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Config file; omitted keys take their defaults.
    config: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long, default_value = "weights.mgcn")]
    out: PathBuf,
    #[arg(long, default_value = "history.csv")]
    history: PathBuf,
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long, default_value_t = 1000.0)]
    re_limit: f64,
    /// white_noise, mldata[:L[:I]], images:DIR, or a mixture like 0.5*white_noise+0.5*mldata
    #[arg(long, default_value = "white_noise")]
    dist: String,
    /// Relative residual tolerance; defaults to 1e-8 for f64 and 1e-4 for f32.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value = "f64")]
    precision: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    grid: usize,
    #[arg(long, default_value = "learned")]
    solver: String,
    #[command(flatten)]
    problem: ProblemArgs,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "31,63,127")]
    grids: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "gmg,learned")]
    solvers: Vec<String>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 15)]
    size: usize,
    #[arg(long, default_value_t = 2)]
    level: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = GradCheckOptions::default().eps)]
    eps: f64,
    #[arg(long, hide = true)]
    corrupt_backward: bool,
}

#[derive(Args)]
struct GenCoefArgs {
    #[arg(long)]
    grid: usize,
    #[arg(long, default_value = "white_noise")]
    dist: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "coef.pgm")]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    fail(EXIT_CONFIG, e.to_string())
}

type CliResult = Result<(), Failure>;

/// `MGSOLVE_THREADS`: unset uses every core, 0 or 1 runs sequentially.
fn thread_budget() -> Result<usize, Failure> {
    match std::env::var("MGSOLVE_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| config_err(format!("MGSOLVE_THREADS must be a non-negative integer, got '{v}'"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn csv_writer(out: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>, Failure> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?),
        None => Box::new(io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn io_err(e: impl std::fmt::Display) -> Failure {
    fail(1, e.to_string())
}

fn train(args: TrainArgs) -> CliResult {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
            TrainConfig::from_config_text(&text).map_err(config_err)?
        }
        None if args.print_config => TrainConfig::default(),
        None => return Err(config_err("train needs a config file")),
    };
    if args.print_config {
        print!("{}", cfg.to_config_text());
        return Ok(());
    }
    cfg.threads = thread_budget()?;
    cfg.validate().map_err(config_err)?;
    let mut history = csv_writer(Some(&args.history))?;
    history.write_record(HistoryRow::CSV_HEADER).map_err(io_err)?;
    let on_epoch = |rows: &[HistoryRow]| {
        for r in rows {
            if let Err(e) = history.write_record(r.csv_record()) {
                log::warn!("history write failed: {e}");
            }
        }
        let _ = history.flush();
        if let Some(last) = rows.last() {
            eprintln!(
                "epoch {} size {} loss {:.4e} ({:.0}s)",
                last.epoch, last.size, last.loss, last.seconds
            );
        }
    };
    let saved = match cfg.precision {
        Precision::F64 => {
            let w = SolverWeights::<f64>::init(cfg.channels, cfg.seed).map_err(config_err)?;
            training::train_from(&cfg, w, on_epoch).map(|o| save_weights(&args.out, &o.weights))
        }
        Precision::F32 => {
            let w = SolverWeights::<f32>::init(cfg.channels, cfg.seed).map_err(config_err)?;
            training::train_from(&cfg, w, on_epoch).map(|o| save_weights(&args.out, &o.weights))
        }
    };
    match saved {
        Ok(Ok(())) => {
            eprintln!("wrote {} and {}", args.out.display(), args.history.display());
            Ok(())
        }
        Ok(Err(e)) => Err(io_err(e)),
        Err(e) => Err(fail(EXIT_TRAINING, format!("training failed: {e}"))),
    }
}

fn bench_options(p: &ProblemArgs, runs: usize) -> Result<BenchOptions, Failure> {
    let opts = BenchOptions {
        re_limit: p.re_limit,
        distribution: DistributionSpec::parse(&p.dist).map_err(config_err)?,
        precision: p.precision.parse().map_err(config_err)?,
        tol: p.tol,
        max_iters: p.max_iters,
        runs,
        seed: p.seed,
    };
    opts.stop().map_err(config_err)?;
    if opts.re_limit.is_nan() || opts.re_limit <= 1.0 {
        return Err(config_err(format!("re_limit must exceed 1, got {}", opts.re_limit)));
    }
    Ok(opts)
}

fn weights_for(kinds: &[SolverKind], path: Option<&Path>) -> Result<Option<SolverWeights<f64>>, Failure> {
    if !kinds.contains(&SolverKind::Learned) {
        return Ok(None);
    }
    let path = path.ok_or_else(|| config_err("the learned solver needs --weights"))?;
    load_weights(path).map(Some).map_err(config_err)
}

fn solve(args: SolveArgs) -> CliResult {
    let kind: SolverKind = args.solver.parse().map_err(config_err)?;
    let opts = bench_options(&args.problem, 1)?;
    let weights = weights_for(&[kind], args.weights.as_deref())?;
    let outcome = match opts.precision {
        Precision::F64 => solve_typed::<f64>(kind, &args, &opts, weights.as_ref()),
        Precision::F32 => solve_typed::<f32>(kind, &args, &opts, weights.map(|w| w.cast()).as_ref()),
    }?;
    if outcome == Outcome::Diverged {
        return Err(fail(EXIT_DIVERGED, "iteration diverged"));
    }
    Ok(())
}

fn solve_typed<T: Real>(
    kind: SolverKind,
    args: &SolveArgs,
    opts: &BenchOptions,
    weights: Option<&SolverWeights<T>>,
) -> Result<Outcome, Failure> {
    let spec = instance_spec::<T>(opts, args.grid, 0).map_err(config_err)?;
    let rhs = GridTensor::filled(1, args.grid, args.grid, T::one());
    let stop = opts.stop().map_err(config_err)?;
    let (_, report) = solve_with(kind, &spec, weights, &rhs, stop).map_err(config_err)?;
    let mut w = csv_writer(args.out.as_deref())?;
    w.write_record(["iteration", "relative_residual"]).map_err(io_err)?;
    for (k, r) in report.relative_residual_history.iter().enumerate() {
        w.write_record([k.to_string(), format!("{r:e}")]).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    eprintln!(
        "{kind} {}x{}: {} after {} iterations, relative residual {:e}",
        args.grid,
        args.grid,
        report.outcome,
        report.iterations,
        report.final_relative_residual()
    );
    Ok(report.outcome)
}

fn bench(args: BenchArgs) -> CliResult {
    let kinds = args
        .solvers
        .iter()
        .map(|s| s.parse::<SolverKind>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(config_err)?;
    let opts = bench_options(&args.problem, args.runs)?;
    if opts.runs == 0 {
        return Err(config_err("runs must be positive"));
    }
    let weights = weights_for(&kinds, args.weights.as_deref())?;
    let weights32 = weights.as_ref().map(|w| w.cast::<f32>());
    let mut out = csv_writer(args.out.as_deref())?;
    out.write_record(BenchResultRow::CSV_HEADER).map_err(io_err)?;
    for (g, &grid) in args.grids.iter().enumerate() {
        // every solver on one grid shares that grid's instances
        let grid_opts = BenchOptions {
            seed: opts.seed.wrapping_add(g as u64),
            ..opts.clone()
        };
        for &kind in &kinds {
            let row = match opts.precision {
                Precision::F64 => bench_row(kind, grid, weights.as_ref(), &grid_opts),
                Precision::F32 => bench_row(kind, grid, weights32.as_ref(), &grid_opts),
            };
            match row {
                Ok((row, _)) => {
                    out.write_record(row.csv_record()).map_err(io_err)?;
                    out.flush().map_err(io_err)?;
                }
                Err(e) => eprintln!("grid {grid} {kind}: {e}"),
            }
        }
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> CliResult {
    let opts = GradCheckOptions {
        eps: args.eps,
        corrupt_backward: args.corrupt_backward,
        ..Default::default()
    };
    let report =
        training::grad_check_solver(args.channels, args.size, args.level, args.seed, opts).map_err(config_err)?;
    println!("entries {}", report.entries);
    println!("max_relative_error {:e}", report.max_relative_error);
    println!("max_abs_error {:e}", report.max_abs_error);
    if let Some((name, k)) = &report.worst {
        println!("worst {name}[{k}]");
    }
    if report.passed {
        println!("PASS (tolerance {:e})", report.tolerance);
        Ok(())
    } else {
        println!("FAIL (tolerance {:e})", report.tolerance);
        Err(fail(EXIT_GRADCHECK, "gradient check failed"))
    }
}

fn gen_coef(args: GenCoefArgs) -> CliResult {
    let dist = DistributionSpec::parse(&args.dist).map_err(config_err)?;
    let field = datasets::sample_random_tensor(&dist, args.grid, args.seed).map_err(config_err)?;
    datasets::write_pgm(&args.out, &field).map_err(io_err)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Solve(a) => solve(a),
        Command::Bench(a) => bench(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::GenCoef(a) => gen_coef(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
