//! Experiment configuration, multi-seed execution and trace files.
//!
//! A [`RunConfig`] names a problem recipe, a solver with its parameters, and
//! a list of solver seeds. [`solve`] writes one trace CSV per seed and a
//! `summary.csv` with the final gap and fitted gap slope of every seed plus
//! their median.

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{pdhg_run, spdhg_run, PdhgConfig};
use crate::data::{gen_lad, gen_svm, parse_libsvm, read_instance, LadParams, SvmParams};
use crate::error::{Error, Result};
use crate::metrics::{fit_rate, median, write_csv, Method, RunOptions, RunOutput, TraceRecord};
use crate::problem::{build_lad, build_svm, ProblemSpec};
use crate::prox::ProxFn;
use crate::schedule::{auto_rho0, tau0_for, Family, Schedule, ScheduleKind};
use crate::{frpd, srpd};

/// Environment variable capping the worker threads used across seeds.
pub const THREADS_ENV: &str = "RANDPD_THREADS";

/// Tail fraction of the `log k` range used for summary slopes.
pub const SUMMARY_TAIL: f64 = 0.5;

/// A scalar that may be left to the library.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Auto {
    #[default]
    Auto,
    Value(f64),
}

impl Auto {
    pub fn resolve(self, auto: impl FnOnce() -> f64) -> f64 {
        match self {
            Auto::Auto => auto(),
            Auto::Value(v) => v,
        }
    }
}

impl FromStr for Auto {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Auto::Auto);
        }
        s.parse()
            .map(Auto::Value)
            .map_err(|_| Error::Config(format!("expected `auto` or a number, got `{s}`")))
    }
}

impl fmt::Display for Auto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Auto::Auto => f.write_str("auto"),
            Auto::Value(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for Auto {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Auto::Auto => s.serialize_str("auto"),
            Auto::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Auto {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Auto::Value(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Where the problem data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemConfig {
    /// Soft-margin SVM from a LIBSVM file or the synthetic generator.
    Svm {
        #[serde(default)]
        path: Option<PathBuf>,
        /// `(samples, features)` for the generator.
        #[serde(default)]
        gen: Option<(usize, usize)>,
        lambda: f64,
        #[serde(default)]
        data_seed: u64,
    },
    /// LAD from an instance file or the synthetic generator.
    Lad {
        #[serde(default)]
        path: Option<PathBuf>,
        /// `(rows, cols)` for the generator.
        #[serde(default)]
        gen: Option<(usize, usize)>,
        #[serde(default = "default_density")]
        density: f64,
        /// Defaults to `1 / rows`.
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        data_seed: u64,
    },
}

fn default_density() -> f64 {
    0.1
}

fn default_cadence() -> usize {
    1
}

fn default_theta() -> f64 {
    1.0
}

/// One experiment: a problem, a solver and the seeds to run it with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub method: Method,
    /// Required for frpd and srpd, ignored by the baselines.
    #[serde(default)]
    pub schedule: Option<ScheduleKind>,
    #[serde(default)]
    pub c: Auto,
    #[serde(default)]
    pub rho0: Auto,
    /// Baseline primal step; `auto` picks the method default.
    #[serde(default)]
    pub tau: Auto,
    /// Baseline dual step; `auto` picks the method default.
    #[serde(default)]
    pub sigma: Auto,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Primal blocks `n`.
    pub blocks: usize,
    /// Dual blocks `m`; defaults to `blocks`.
    #[serde(default)]
    pub dual_blocks: Option<usize>,
    /// Adds `(mu/2) ||.||^2` to every `g_i`.
    #[serde(default)]
    pub g_quadratic: Option<f64>,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    /// Also record the starting point.
    #[serde(default)]
    pub include_initial: bool,
    /// Fill `time_ms`; traces are then no longer reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
    /// Output directory.
    pub output: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("RunConfig serializes")
    }

    /// Field-level checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required".into());
        }
        if self.epochs == 0 {
            return bad("epochs", "must be >= 1".into());
        }
        if self.cadence == 0 {
            return bad("cadence", "must be >= 1".into());
        }
        if self.blocks == 0 || self.dual_blocks == Some(0) {
            return bad("blocks", "must be >= 1".into());
        }
        match (self.method, self.schedule) {
            (Method::Frpd | Method::Srpd, None) => {
                return bad("schedule", format!("required for {}", self.method));
            }
            (Method::Frpd, Some(s)) if s.family() != Family::Frpd => {
                return bad("schedule", format!("{s} is not a frpd schedule (use s1, s2, s6 or s7)"));
            }
            (Method::Srpd, Some(s)) if s.family() != Family::Srpd => {
                return bad("schedule", format!("{s} is not a srpd schedule (use s3, s4 or s5)"));
            }
            _ => {}
        }
        match &self.problem {
            ProblemConfig::Svm { path, gen, lambda, .. } => {
                if path.is_some() == gen.is_some() {
                    return bad("problem", "svm needs exactly one of --data and --gen".into());
                }
                if !(*lambda > 0.0) {
                    return bad("lambda", format!("must be > 0, got {lambda}"));
                }
            }
            ProblemConfig::Lad { path, gen, lambda, .. } => {
                if path.is_some() == gen.is_some() {
                    return bad("problem", "lad needs exactly one of --data and --gen".into());
                }
                if let Some(l) = lambda {
                    if !(*l > 0.0) {
                        return bad("lambda", format!("must be > 0, got {l}"));
                    }
                }
            }
        }
        if let Some(mu) = self.g_quadratic {
            if !(mu > 0.0) {
                return bad("g_quadratic", format!("must be > 0, got {mu}"));
            }
        }
        Ok(())
    }

    /// Loads or generates the data and assembles the block problem.
    pub fn build_problem(&self) -> Result<ProblemSpec> {
        let n = self.blocks;
        let m = self.dual_blocks.unwrap_or(n);
        let mut spec = match &self.problem {
            ProblemConfig::Svm {
                path,
                gen,
                lambda,
                data_seed,
            } => {
                let data = match (path, gen) {
                    (Some(p), _) => parse_libsvm(BufReader::new(open(p)?), None)?,
                    (None, Some((samples, features))) => gen_svm(&SvmParams::new(*samples, *features, *data_seed))?,
                    (None, None) => return Err(Error::Config("problem: no data source".into())),
                };
                build_svm(&data, *lambda, n, m)?
            }
            ProblemConfig::Lad {
                path,
                gen,
                density,
                lambda,
                data_seed,
            } => {
                let inst = match (path, gen) {
                    (Some(p), _) => read_instance(BufReader::new(open(p)?))?,
                    (None, Some((rows, cols))) => gen_lad(&LadParams::new(*rows, *cols, *density, *data_seed))?,
                    (None, None) => return Err(Error::Config("problem: no data source".into())),
                };
                let lambda = lambda.unwrap_or(1.0 / inst.k.rows() as f64);
                build_lad(inst.k, &inst.b, lambda, n, m)?
            }
        };
        if let Some(mu) = self.g_quadratic {
            spec.g_blocks = spec
                .g_blocks
                .into_iter()
                .map(|g| ProxFn::WithQuadratic { base: Box::new(g), mu })
                .collect();
        }
        Ok(spec)
    }

    fn options(&self, seed: u64) -> RunOptions {
        let mut opts = RunOptions::new(self.epochs, seed);
        opts.cadence = self.cadence;
        opts.include_initial = self.include_initial;
        opts.timing = self.timing;
        opts
    }

    /// The solver as it will run on `spec`, with every `auto` resolved.
    pub fn resolve(&self, spec: &ProblemSpec) -> Result<Solver> {
        match self.method {
            Method::Frpd | Method::Srpd => {
                let kind = self.schedule.ok_or_else(|| Error::Config("schedule: required".into()))?;
                let consts = spec.constants()?;
                let tau0 = tau0_for(kind, &consts);
                let c = self.c.resolve(|| kind.auto_c(tau0));
                let rho0 = self.rho0.resolve(|| auto_rho0(kind, &consts));
                Ok(Solver::Primal(Schedule::new(kind, Some(c), rho0, &consts)?))
            }
            Method::Pdhg | Method::Spdhg => {
                let default = if self.method == Method::Pdhg {
                    PdhgConfig::pdhg_default(spec)?
                } else {
                    PdhgConfig::spdhg_default(spec)?
                };
                Ok(Solver::Baseline(PdhgConfig {
                    tau: self.tau.resolve(|| default.tau),
                    sigma: self.sigma.resolve(|| default.sigma),
                    theta: self.theta,
                }))
            }
        }
    }

    /// Trace file name for one seed.
    pub fn trace_name(&self, seed: u64) -> String {
        match self.schedule.filter(|_| matches!(self.method, Method::Frpd | Method::Srpd)) {
            Some(s) => format!("{}_{}_seed{seed}.csv", self.method, s),
            None => format!("{}_seed{seed}.csv", self.method),
        }
    }
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::Config(format!("data: cannot open {}: {e}", path.display())))
}

/// A fully resolved solver.
#[derive(Debug, Clone)]
pub enum Solver {
    Primal(Schedule),
    Baseline(PdhgConfig),
}

/// Runs one seed of `method` from the origin.
pub fn run_seed(spec: &ProblemSpec, method: Method, solver: &Solver, opts: &RunOptions) -> Result<RunOutput> {
    let x0 = vec![0.0; spec.k.cols()];
    let y0 = vec![0.0; spec.k.rows()];
    match (method, solver) {
        (Method::Frpd, Solver::Primal(s)) => frpd::run(spec, s, &x0, &y0, opts),
        (Method::Srpd, Solver::Primal(s)) => srpd::run(spec, s, &x0, &y0, opts),
        (Method::Pdhg, Solver::Baseline(c)) => pdhg_run(spec, c, &x0, &y0, opts),
        (Method::Spdhg, Solver::Baseline(c)) => spdhg_run(spec, c, &x0, &y0, opts),
        _ => Err(Error::Config(format!("method {method} does not match the resolved solver"))),
    }
}

/// Runs every seed, in parallel when allowed, returning traces in seed order.
pub fn run_all(cfg: &RunConfig, spec: &ProblemSpec, solver: &Solver) -> Result<Vec<RunOutput>> {
    let job = |&seed: &u64| run_seed(spec, cfg.method, solver, &cfg.options(seed));
    match thread_limit()? {
        Some(1) => cfg.seeds.iter().map(job).collect(),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("{THREADS_ENV}: {e}")))?
            .install(|| cfg.seeds.par_iter().map(job).collect()),
        None => cfg.seeds.par_iter().map(job).collect(),
    }
}

fn thread_limit() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t >= 1 => Ok(Some(t)),
            _ => Err(Error::Config(format!("{THREADS_ENV}: expected a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

/// Per-seed outcome written to `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_primal: f64,
    pub final_gap: Option<f64>,
    /// Slope of `log gap` against `log k` over the last half of the range.
    pub gap_slope: Option<f64>,
}

impl SeedSummary {
    pub fn from_trace(seed: u64, trace: &[TraceRecord]) -> Self {
        let last = trace.last();
        let points: Vec<(f64, f64)> = trace
            .iter()
            .filter(|r| r.k > 0)
            .filter_map(|r| r.gap.filter(|g| *g > 0.0).map(|g| (r.k as f64, g)))
            .collect();
        SeedSummary {
            seed,
            final_primal: last.map_or(f64::NAN, |r| r.primal),
            final_gap: last.and_then(|r| r.gap),
            gap_slope: (points.len() == trace.iter().filter(|r| r.k > 0).count())
                .then(|| fit_rate(&points, SUMMARY_TAIL).ok().map(|f| f.slope))
                .flatten(),
        }
    }
}

/// Result of [`solve`].
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub files: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub seeds: Vec<SeedSummary>,
    pub median_gap: Option<f64>,
}

pub const SUMMARY_HEADER: &str = "method,schedule,seed,final_primal,final_gap,gap_slope";

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Validates, runs every seed and writes the trace files and summary.
pub fn solve(cfg: &RunConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let spec = cfg.build_problem()?;
    let solver = cfg.resolve(&spec)?;
    let outputs = run_all(cfg, &spec, &solver)?;
    fs::create_dir_all(&cfg.output)?;

    let mut files = Vec::with_capacity(outputs.len());
    let mut seeds = Vec::with_capacity(outputs.len());
    for (seed, out) in cfg.seeds.iter().zip(&outputs) {
        let path = cfg.output.join(cfg.trace_name(*seed));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        write_csv(&out.trace, &mut w)?;
        w.flush()?;
        files.push(path);
        seeds.push(SeedSummary::from_trace(*seed, &out.trace));
    }

    let gaps: Option<Vec<f64>> = seeds.iter().map(|s| s.final_gap).collect();
    let median_gap = gaps.map(|g| median(&g));
    let slopes: Option<Vec<f64>> = seeds.iter().map(|s| s.gap_slope).collect();
    let primals: Vec<f64> = seeds.iter().map(|s| s.final_primal).collect();

    let schedule = cfg
        .schedule
        .filter(|_| matches!(cfg.method, Method::Frpd | Method::Srpd))
        .map(|s| s.to_string())
        .unwrap_or_default();
    let summary_path = cfg.output.join("summary.csv");
    let mut w = BufWriter::new(fs::File::create(&summary_path)?);
    writeln!(w, "{SUMMARY_HEADER}")?;
    for s in &seeds {
        writeln!(
            w,
            "{},{schedule},{},{:?},{},{}",
            cfg.method,
            s.seed,
            s.final_primal,
            cell(s.final_gap),
            cell(s.gap_slope)
        )?;
    }
    writeln!(
        w,
        "{},{schedule},median,{:?},{},{}",
        cfg.method,
        median(&primals),
        cell(median_gap),
        cell(slopes.map(|s| median(&s)))
    )?;
    w.flush()?;
    Ok(SolveReport {
        files,
        summary_path,
        seeds,
        median_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::read_csv;

    fn lad_config(dir: &Path) -> RunConfig {
        RunConfig {
            problem: ProblemConfig::Lad {
                path: None,
                gen: Some((40, 16)),
                density: 0.5,
                lambda: None,
                data_seed: 3,
            },
            method: Method::Srpd,
            schedule: Some(ScheduleKind::S3),
            c: Auto::Auto,
            rho0: Auto::Auto,
            tau: Auto::Auto,
            sigma: Auto::Auto,
            theta: 1.0,
            blocks: 4,
            dual_blocks: None,
            g_quadratic: None,
            epochs: 12,
            seeds: vec![0, 1, 2],
            cadence: 1,
            include_initial: false,
            timing: false,
            output: dir.to_path_buf(),
        }
    }

    #[test]
    fn auto_parses_and_resolves() {
        assert_eq!("auto".parse::<Auto>().unwrap(), Auto::Auto);
        assert_eq!("0.5".parse::<Auto>().unwrap(), Auto::Value(0.5));
        assert!("fast".parse::<Auto>().is_err());
        assert_eq!(Auto::Auto.resolve(|| 3.0), 3.0);
        assert_eq!(Auto::Value(2.0).resolve(|| 3.0), 2.0);
    }

    #[test]
    fn json_round_trip() {
        let cfg = lad_config(Path::new("out"));
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let text = r#"{"problem": {"kind": "svm", "gen": [20, 5], "lambda": 0.01},
            "method": "frpd", "schedule": "s1", "rho0": 0.2, "blocks": 2,
            "epochs": 3, "seeds": [7], "output": "o"}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.rho0, Auto::Value(0.2));
        assert_eq!(cfg.c, Auto::Auto);
        assert_eq!(cfg.cadence, 1);
    }

    #[test]
    fn validation_names_fields() {
        let dir = Path::new("unused");
        let mut cfg = lad_config(dir);
        cfg.seeds.clear();
        assert!(cfg.validate().unwrap_err().to_string().contains("seeds"));
        let mut cfg = lad_config(dir);
        cfg.schedule = Some(ScheduleKind::S1);
        assert!(cfg.validate().unwrap_err().to_string().contains("schedule"));
        let mut cfg = lad_config(dir);
        cfg.method = Method::Frpd;
        cfg.schedule = Some(ScheduleKind::S4);
        assert!(cfg.validate().unwrap_err().to_string().contains("schedule"));
        let mut cfg = lad_config(dir);
        cfg.problem = ProblemConfig::Svm {
            path: None,
            gen: None,
            lambda: 1.0,
            data_seed: 0,
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("problem"));
    }

    #[test]
    fn missing_data_file_is_reported() {
        let mut cfg = lad_config(Path::new("unused"));
        cfg.problem = ProblemConfig::Lad {
            path: Some(PathBuf::from("/nonexistent/instance.txt")),
            gen: None,
            density: 0.1,
            lambda: None,
            data_seed: 0,
        };
        let err = cfg.build_problem().unwrap_err().to_string();
        assert!(err.contains("data"), "{err}");
    }

    #[test]
    fn auto_c_matches_the_schedule_rule() {
        let cfg = lad_config(Path::new("unused"));
        let spec = cfg.build_problem().unwrap();
        let Solver::Primal(s) = cfg.resolve(&spec).unwrap() else {
            panic!("expected a schedule")
        };
        // tau0 = 1/4 for four uniform primal blocks
        assert_eq!(s.tau0, 0.25);
        assert_eq!(s.c, 4.0);
    }

    #[test]
    fn solve_writes_parseable_traces_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = lad_config(dir.path());
        let report = solve(&cfg).unwrap();
        assert_eq!(report.files.len(), 3);
        for (seed, path) in cfg.seeds.iter().zip(&report.files) {
            let trace = read_csv(BufReader::new(fs::File::open(path).unwrap())).unwrap();
            assert_eq!(trace.len(), cfg.epochs);
            assert!(trace.iter().all(|r| r.seed == *seed && r.method == Method::Srpd));
        }
        let summary = fs::read_to_string(&report.summary_path).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], SUMMARY_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("srpd,s3,median,"));
    }

    #[test]
    fn parallel_and_sequential_runs_agree() {
        let cfg = lad_config(Path::new("unused"));
        let spec = cfg.build_problem().unwrap();
        let solver = cfg.resolve(&spec).unwrap();
        let parallel = run_all(&cfg, &spec, &solver).unwrap();
        for (seed, out) in cfg.seeds.iter().zip(&parallel) {
            let alone = run_seed(&spec, cfg.method, &solver, &cfg.options(*seed)).unwrap();
            assert_eq!(alone.trace, out.trace);
        }
    }
}
