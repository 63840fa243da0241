use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use randpd::data::{gen_lad, gen_svm, write_instance, write_libsvm, LadParams, SvmParams};
use randpd::error::Error;
use randpd::harness::{solve, Auto, ProblemConfig, RunConfig};
use randpd::metrics::{fit_rate, median_curve, read_csv, Method, TraceRecord};
use randpd::schedule::{
    auto_rho0, check_conditions, tau0_for, ConditionContext, Family, Schedule, ScheduleKind,
};

/// Randomized primal-dual solvers and benchmark harness.
#[derive(Parser)]
#[command(name = "randpd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a solver over one or more seeds and write trace CSVs.
    Solve(SolveArgs),
    /// Verify a parameter schedule against its step-size conditions.
    CheckSchedule(CheckArgs),
    /// Fit the log-log slope of a trace column.
    Rate(RateArgs),
    /// Generate a synthetic instance.
    GenData(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemKind {
    Svm,
    Lad,
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long, value_enum)]
    problem: Option<ProblemKind>,
    /// LIBSVM file (svm) or instance file (lad).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generator shape `ROWSxCOLS`.
    #[arg(long, value_parser = parse_shape)]
    gen: Option<(usize, usize)>,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    /// Regularization weight; lad defaults to 1/rows, svm to 1e-4.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Adds (mu/2)||.||^2 to every g block.
    #[arg(long)]
    g_quadratic: Option<f64>,
}

impl ProblemArgs {
    fn config(&self) -> anyhow::Result<ProblemConfig> {
        let Some(kind) = self.problem else {
            bail!("--problem is required (svm or lad)");
        };
        if self.data.is_none() && self.gen.is_none() {
            bail!("--data or --gen is required for --problem");
        }
        if self.data.is_some() && self.gen.is_some() {
            bail!("--data and --gen are mutually exclusive");
        }
        Ok(match kind {
            ProblemKind::Svm => ProblemConfig::Svm {
                path: self.data.clone(),
                gen: self.gen,
                lambda: self.lambda.unwrap_or(1e-4),
                data_seed: self.data_seed,
            },
            ProblemKind::Lad => ProblemConfig::Lad {
                path: self.data.clone(),
                gen: self.gen,
                density: self.density,
                lambda: self.lambda,
                data_seed: self.data_seed,
            },
        })
    }
}

fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got `{s}`"))?;
    let r = r.trim().parse().map_err(|_| format!("bad row count in `{s}`"))?;
    let c = c.trim().parse().map_err(|_| format!("bad column count in `{s}`"))?;
    Ok((r, c))
}

#[derive(Args)]
struct SolveArgs {
    /// JSON config; replaces every other flag.
    #[arg(long, conflicts_with_all = ["problem", "method"])]
    config: Option<PathBuf>,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    schedule: Option<ScheduleKind>,
    #[arg(long, default_value = "auto")]
    c: Auto,
    #[arg(long, default_value = "auto")]
    rho0: Auto,
    /// Baseline primal step.
    #[arg(long, default_value = "auto")]
    tau: Auto,
    /// Baseline dual step.
    #[arg(long, default_value = "auto")]
    sigma: Auto,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    /// Primal blocks.
    #[arg(long, default_value_t = 32)]
    blocks: usize,
    /// Dual blocks; defaults to --blocks.
    #[arg(long)]
    dual_blocks: Option<usize>,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    /// Solver seed; repeat or separate with commas for several.
    #[arg(long = "seed", value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    cadence: usize,
    #[arg(long)]
    include_initial: bool,
    /// Record wall time (breaks byte-identical reruns).
    #[arg(long)]
    timing: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl SolveArgs {
    fn config(&self) -> anyhow::Result<RunConfig> {
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("--config {}", path.display()))?;
            return Ok(RunConfig::from_json(&text)?);
        }
        let Some(method) = self.method else {
            bail!("--method is required (frpd, srpd, pdhg or spdhg)");
        };
        Ok(RunConfig {
            problem: self.problem.config()?,
            method,
            schedule: self.schedule,
            c: self.c,
            rho0: self.rho0,
            tau: self.tau,
            sigma: self.sigma,
            theta: self.theta,
            blocks: self.blocks,
            dual_blocks: self.dual_blocks,
            g_quadratic: self.problem.g_quadratic,
            epochs: self.epochs,
            seeds: self.seeds.clone(),
            cadence: self.cadence,
            include_initial: self.include_initial,
            timing: self.timing,
            output: self.out.clone(),
        })
    }
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    schedule: ScheduleKind,
    #[arg(long, default_value = "auto")]
    c: Auto,
    #[arg(long, default_value = "auto")]
    rho0: Auto,
    #[arg(long, default_value_t = 10_000)]
    horizon: usize,
    /// Take the constants from a problem instead of the flags below.
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = 32)]
    blocks: usize,
    #[arg(long)]
    dual_blocks: Option<usize>,
    /// Uniform dual blocks for explicit constants.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Uniform primal blocks for explicit constants.
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    lbar: f64,
    #[arg(long, default_value_t = 0.0)]
    lh: f64,
    #[arg(long, default_value_t = 0.0)]
    mu_f: f64,
    #[arg(long, default_value_t = 0.0)]
    mu_g: f64,
}

#[derive(Args)]
struct RateArgs {
    /// Trace CSVs; several files are combined by per-checkpoint median.
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    /// gap, primal, dual, feas, feas2 (squared feasibility) or dual_violation.
    #[arg(long, default_value = "gap")]
    column: String,
    /// Fraction of the log k range to fit.
    #[arg(long, default_value_t = 0.5)]
    tail: f64,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: ProblemKind,
    /// `ROWSxCOLS` (samples x features for svm).
    #[arg(long, value_parser = parse_shape)]
    shape: (usize, usize),
    /// Nonzero fraction of K (lad only).
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn column(name: &str) -> anyhow::Result<fn(&TraceRecord) -> Option<f64>> {
    Ok(match name {
        "gap" => |r| r.gap,
        "primal" => |r| Some(r.primal),
        "dual" => |r| r.dual,
        "feas" => |r| r.feas,
        "feas2" => |r| r.feas.map(|v| v * v),
        "dual_violation" => |r| Some(r.dual_violation),
        other => bail!("--column: unknown column `{other}`"),
    })
}

fn cmd_solve(args: &SolveArgs) -> anyhow::Result<ExitCode> {
    let cfg = args.config()?;
    let report = solve(&cfg)?;
    for s in &report.seeds {
        println!(
            "seed {:>4}  final F {:.6e}  gap {}  slope {}",
            s.seed,
            s.final_primal,
            s.final_gap.map_or("-".into(), |g| format!("{g:.3e}")),
            s.gap_slope.map_or("-".into(), |g| format!("{g:.3}")),
        );
    }
    if let Some(g) = report.median_gap {
        println!("median final gap {g:.3e}");
    }
    println!("wrote {} traces and {}", report.files.len(), report.summary_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: &CheckArgs) -> anyhow::Result<ExitCode> {
    let family = args.schedule.family();
    let ctx = if args.problem.problem.is_some() {
        let cfg = RunConfig {
            problem: args.problem.config()?,
            method: match family {
                Family::Frpd => Method::Frpd,
                Family::Srpd => Method::Srpd,
            },
            schedule: Some(args.schedule),
            c: args.c,
            rho0: args.rho0,
            tau: Auto::Auto,
            sigma: Auto::Auto,
            theta: 1.0,
            blocks: args.blocks,
            dual_blocks: args.dual_blocks,
            g_quadratic: args.problem.g_quadratic,
            epochs: 1,
            seeds: vec![0],
            cadence: 1,
            include_initial: false,
            timing: false,
            output: PathBuf::new(),
        };
        ConditionContext::from_spec(&cfg.build_problem()?, family)?
    } else {
        ConditionContext::uniform(family, args.m, args.n, args.lbar, args.lh, args.mu_f, args.mu_g)
    };
    let consts = ctx.constants();
    let tau0 = tau0_for(args.schedule, &consts);
    let c = args.c.resolve(|| args.schedule.auto_c(tau0));
    let rho0 = args.rho0.resolve(|| auto_rho0(args.schedule, &consts));
    let schedule = Schedule::new(args.schedule, Some(c), rho0, &consts)?;
    let report = check_conditions(&schedule, &ctx, args.horizon);
    println!(
        "{} tau0={tau0} c={c} rho0={rho0} horizon={}",
        args.schedule, args.horizon
    );
    for (i, s) in report.min_slack.iter().enumerate() {
        println!("  condition {}: min slack {s:.3e}", i + 1);
    }
    match report.first_violation {
        None => {
            println!("PASS");
            Ok(ExitCode::SUCCESS)
        }
        Some(v) => {
            println!(
                "FAIL: condition {} (block {:?}) at k={}: lhs {:.6e} < rhs {:.6e}; {} violations",
                v.condition.id, v.condition.block, v.k, v.condition.lhs, v.condition.rhs, report.violations
            );
            Ok(ExitCode::from(1))
        }
    }
}

fn cmd_rate(args: &RateArgs) -> anyhow::Result<ExitCode> {
    let col = column(&args.column)?;
    let mut traces = Vec::with_capacity(args.csv.len());
    for path in &args.csv {
        let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        traces.push(read_csv(BufReader::new(file))?);
    }
    let points: Vec<(f64, f64)> = median_curve(&traces, col).into_iter().filter(|(k, _)| *k > 0.0).collect();
    let fit = fit_rate(&points, args.tail)?;
    println!(
        "{}: slope {:.4} over k in [{}, {}] ({} points, intercept {:.4}, residual {:.3e})",
        args.column, fit.slope, fit.k_start, fit.k_end, fit.points, fit.intercept, fit.residual
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(args: &GenArgs) -> anyhow::Result<ExitCode> {
    let (rows, cols) = args.shape;
    let mut w = BufWriter::new(fs::File::create(&args.out).with_context(|| format!("--out {}", args.out.display()))?);
    match args.kind {
        ProblemKind::Lad => write_instance(&gen_lad(&LadParams::new(rows, cols, args.density, args.seed))?, &mut w)?,
        ProblemKind::Svm => write_libsvm(&gen_svm(&SvmParams::new(rows, cols, args.seed))?, &mut w)?,
    }
    w.flush()?;
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::CheckSchedule(a) => cmd_check(a),
        Command::Rate(a) => cmd_rate(a),
        Command::GenData(a) => cmd_gen(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // solver aborts get their own code
            match e.downcast_ref::<Error>() {
                Some(Error::Abort { .. }) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
