use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use fracpinn::optimize::{AdamConfig, Schedule};
use fracpinn::residual::{HistoryPolicy, LossConfig, Reduction, PROBLEM_TEMPLATE};
use fracpinn::run::{
    self, BenchConfig, ProblemSource, RunConfig, ValidateOptions, BENCH_RATIO_LIMIT,
};
use fracpinn::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

/// Fractional delay and differential-algebraic equations solved with
/// physics-informed polynomial networks.
///
/// Every option can also be set through an environment variable named
/// FRACPINN_<OPTION>, e.g. FRACPINN_SEED=7 or FRACPINN_ADAM_EPOCHS=500.
#[derive(Parser)]
#[command(name = "fracpinn", version)]
struct Cli {
    /// Caps the worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true, env = "FRACPINN_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a builtin example or a problem file and write reports.
    Solve(SolveArgs),
    /// Check every numerical kernel against its oracle.
    Validate {
        /// Add this amount to one operational-matrix weight first.
        #[arg(long, hide = true, env = "FRACPINN_PERTURB_WEIGHT")]
        perturb_weight: Option<f64>,
    },
    /// Per-epoch cost of fractional vs integer-order training.
    Bench(BenchArgs),
    /// Write a commented problem file to start from.
    Template {
        /// Destination; stdout when omitted.
        path: Option<PathBuf>,
    },
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["example", "problem"])))]
struct SolveArgs {
    /// Builtin example 1-8.
    #[arg(long, env = "FRACPINN_EXAMPLE")]
    example: Option<u32>,
    /// Problem definition file (see `fracpinn template`).
    #[arg(long, env = "FRACPINN_PROBLEM")]
    problem: Option<PathBuf>,
    /// Collocation nodes, endpoints included.
    #[arg(long, default_value_t = 101, env = "FRACPINN_N")]
    n: usize,
    /// Grade the grid towards the origin with this exponent.
    #[arg(long, env = "FRACPINN_GRADED")]
    graded: Option<f64>,
    /// Replace the derivative order of every differential state.
    #[arg(long, env = "FRACPINN_ALPHA")]
    alpha: Option<f64>,
    /// Weight of the residual term.
    #[arg(long, default_value_t = 10.0, env = "FRACPINN_LAMBDA")]
    lambda: f64,
    /// Residual reduction: mean-square or l2-norm.
    #[arg(long, default_value = "mean-square", value_parser = parse_reduction, env = "FRACPINN_REDUCTION")]
    reduction: Reduction,
    #[arg(long, default_value_t = 2000, env = "FRACPINN_ADAM_EPOCHS")]
    adam_epochs: usize,
    #[arg(long, default_value_t = 500, env = "FRACPINN_LBFGS_ITERS")]
    lbfgs_iters: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.01, env = "FRACPINN_LR")]
    lr: f64,
    #[arg(long, default_value_t = 10, env = "FRACPINN_MEMORY")]
    memory: usize,
    /// Seed for parameter initialization; drawn from the clock if omitted.
    #[arg(long, env = "FRACPINN_SEED")]
    seed: Option<u64>,
    /// Refuse to run without an explicit seed. Results do not depend on
    /// the thread count, so a seeded run is always reproducible.
    #[arg(long, env = "FRACPINN_DETERMINISTIC")]
    deterministic: bool,
    /// Delayed arguments before the domain: prefer, ignore or strict.
    #[arg(long, default_value = "prefer", value_parser = parse_history, env = "FRACPINN_HISTORY")]
    history: HistoryPolicy,
    /// Evaluation points for the error report.
    #[arg(long, default_value_t = 300, env = "FRACPINN_EVAL_POINTS")]
    eval_points: usize,
    #[arg(long, default_value = "fracpinn-out", env = "FRACPINN_OUT")]
    out: PathBuf,
    /// Print the loss every this many iterations (0 disables).
    #[arg(long, default_value_t = 100, env = "FRACPINN_PROGRESS")]
    progress: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 3, env = "FRACPINN_EXAMPLE")]
    example: u32,
    /// Order of the fractional variant.
    #[arg(long, default_value_t = 0.5, env = "FRACPINN_ALPHA")]
    alpha: f64,
    /// Node counts to time.
    #[arg(long, value_delimiter = ',', default_values_t = [51, 101, 201, 401])]
    n: Vec<usize>,
    #[arg(long, default_value_t = 1000, env = "FRACPINN_ADAM_EPOCHS")]
    epochs: usize,
    #[arg(long, default_value_t = 0, env = "FRACPINN_SEED")]
    seed: u64,
    #[arg(long, default_value = "fracpinn-bench", env = "FRACPINN_OUT")]
    out: PathBuf,
}

fn parse_reduction(s: &str) -> Result<Reduction, String> {
    match s {
        "mean-square" | "mean_square" => Ok(Reduction::MeanSquare),
        "l2-norm" | "l2_norm" => Ok(Reduction::L2Norm),
        _ => Err(format!(
            "unknown reduction `{s}` (expected mean-square or l2-norm)"
        )),
    }
}

fn parse_history(s: &str) -> Result<HistoryPolicy, String> {
    match s {
        "prefer" => Ok(HistoryPolicy::Prefer),
        "ignore" => Ok(HistoryPolicy::Ignore),
        "strict" => Ok(HistoryPolicy::Strict),
        _ => Err(format!(
            "unknown history policy `{s}` (expected prefer, ignore or strict)"
        )),
    }
}

impl SolveArgs {
    fn config(&self) -> RunConfig {
        let problem = match (&self.problem, self.example) {
            (Some(path), _) => ProblemSource::File(path.clone()),
            (None, id) => ProblemSource::Example(id.unwrap_or_default()),
        };
        RunConfig {
            problem,
            nodes: self.n,
            graded: self.graded,
            order: self.alpha,
            loss: LossConfig {
                lambda: self.lambda,
                reduction: self.reduction,
            },
            schedule: Schedule {
                adam_epochs: self.adam_epochs,
                lbfgs_iterations: self.lbfgs_iters,
                adam: AdamConfig {
                    learning_rate: self.lr,
                    ..Default::default()
                },
                memory: self.memory,
                ..Default::default()
            },
            seed: self.seed,
            deterministic: self.deterministic,
            eval_points: self.eval_points,
            history: self.history,
        }
    }
}

fn fail(code: u8, e: &dyn std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}

/// Bad input is a usage error; anything that went wrong while training is not.
fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::NonFiniteGradient { .. } | Error::NonFiniteLayer { .. } | Error::Optimization(_) => {
            EXIT_DIVERGENCE
        }
        _ => EXIT_USAGE,
    }
}

fn solve(args: &SolveArgs) -> ExitCode {
    let cfg = args.config();
    let every = args.progress;
    let result = run::solve_with(&cfg, |e| {
        if every > 0 && e.iteration % every == 0 {
            eprintln!(
                "{:>6} {:?} loss {:.6e} |g| {:.3e}",
                e.iteration, e.phase, e.loss, e.gradient_norm
            );
        }
    });
    let sol = match result {
        Ok(s) => s,
        Err(e) => {
            if let Error::Divergence {
                iteration,
                loss,
                limit,
            } = e
            {
                eprintln!(
                    "training diverged at iteration {iteration}: loss {loss:e} above {limit:e}"
                );
                eprintln!("try a smaller --lr, a different --seed, or more collocation nodes");
            }
            return fail(exit_for(&e), &e);
        }
    };
    if let Err(e) = sol.write(&args.out) {
        return fail(EXIT_USAGE, &e);
    }
    let r = &sol.report;
    println!(
        "{}: final loss {:.4e} after {} iterations ({:?})",
        r.problem,
        r.final_loss,
        r.trace.len(),
        r.stop
    );
    for s in &r.states {
        match &s.errors {
            Some(e) => println!(
                "  {}: MAE {:.3e}  L1 {:.3e}  L2 {:.3e}  Linf {:.3e}",
                s.name, e.mae, e.l1, e.l2, e.linf
            ),
            None => println!("  {}: no exact solution", s.name),
        }
    }
    println!("reports written to {}", args.out.display());
    ExitCode::SUCCESS
}

fn validate(perturb_weight: Option<f64>) -> ExitCode {
    let results = run::validate(ValidateOptions { perturb_weight });
    let mut ok = true;
    for s in &results {
        println!(
            "{:<4} {:<18} {}",
            if s.passed { "ok" } else { "FAIL" },
            s.name,
            s.detail
        );
        ok &= s.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VALIDATION)
    }
}

fn bench(args: &BenchArgs) -> ExitCode {
    let cfg = BenchConfig {
        example: args.example,
        fractional_order: args.alpha,
        nodes: args.n.clone(),
        epochs: args.epochs,
        seed: args.seed,
    };
    let rows = match run::bench(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(exit_for(&e), &e),
    };
    if let Err(e) = std::fs::create_dir_all(&args.out)
        .map_err(Error::from)
        .and_then(|_| run::write_bench_csv(&rows, &args.out.join("bench.csv")))
    {
        return fail(EXIT_USAGE, &e);
    }
    println!(
        "{:>6} {:>12} {:>14} {:>14} {:>7}",
        "n", "assembly s", "integer s/ep", "fraction s/ep", "ratio"
    );
    for r in &rows {
        println!(
            "{:>6} {:>12.3e} {:>14.3e} {:>14.3e} {:>7.3}",
            r.nodes,
            r.assembly_seconds,
            r.integer_epoch_seconds,
            r.fractional_epoch_seconds,
            r.ratio
        );
    }
    println!(
        "ratio limit {BENCH_RATIO_LIMIT}; table written to {}",
        args.out.join("bench.csv").display()
    );
    ExitCode::SUCCESS
}

fn template(path: Option<&PathBuf>) -> ExitCode {
    match path {
        Some(p) => match std::fs::write(p, PROBLEM_TEMPLATE) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(EXIT_USAGE, &e),
        },
        None => {
            print!("{PROBLEM_TEMPLATE}");
            ExitCode::SUCCESS
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            return fail(EXIT_USAGE, &e);
        }
    }
    match &cli.command {
        Command::Solve(args) => solve(args),
        Command::Validate { perturb_weight } => validate(*perturb_weight),
        Command::Bench(args) => bench(args),
        Command::Template { path } => template(path.as_ref()),
    }
}
