//! `batchmeans`: calibration, inference and experiments for batch-means
//! confidence regions around averaged SGD.

mod config_file;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use batchmeans::batching::{make_plan, Allocation, BatchAccumulator};
use batchmeans::calibration::{LimitDrawSpec, QuantileCache, ScalingQuantile, CACHE_ENV_VAR};
use batchmeans::experiments::{
    run_coverage, run_det_study, run_volume_study, write_coverage_csv, write_det_csv,
    write_volume_csv, CoverageConfig, CoverageCsvCell, DetStudyConfig, Method, VolumeStudyConfig,
};
use batchmeans::inference::{build_region, marginal_intervals, MarginalIntervals, RegionDocument};
use batchmeans::models::{ingest_csv, ModelKind};
use batchmeans::rng::derive_stream;
use batchmeans::sgd::{run_sgd, GradientOracle, SgdRunConfig, StepSchedule};
use batchmeans::{Error, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

const DEFAULT_R: f64 = 2.0 / 3.0;

#[derive(Parser, Debug)]
#[command(
    name = "batchmeans",
    version,
    about = "Batch-means confidence regions for averaged SGD"
)]
struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// TOML file whose keys mirror long flag names; explicit flags take precedence. [default: none]
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Quantile cache file. [default: none, results kept in memory]
    #[arg(long, global = true, env = CACHE_ENV_VAR, value_name = "FILE")]
    cache: Option<PathBuf>,

    /// Ignore any cache file and recompute every quantile. [default: off]
    #[arg(long, global = true, default_value_t = false)]
    no_cache: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the scaling quantile for one (d, m, allocation, delta).
    Calibrate(CalibrateArgs),
    /// Build a confidence region or intervals from a data file.
    Infer(InferArgs),
    /// Reproduce coverage, volume and determinant studies.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Run several methods on one coverage configuration.
    Compare(CompareArgs),
}

#[derive(Subcommand, Debug)]
enum Experiment {
    /// Coverage of one method over independent replications.
    Coverage(CoverageArgs),
    /// Expected volume factor across batch counts.
    Volume(VolumeArgs),
    /// Determinants of T times the batch-means covariance.
    Detcov(DetArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum AllocKind {
    Es,
    Ibs,
    Dbs,
    Custom,
}

#[derive(Args, Debug, Clone)]
struct AllocArgs {
    /// Batch allocation.
    #[arg(long, value_enum, default_value_t = AllocKind::Ibs)]
    alloc: AllocKind,

    /// Step exponent; also sets the ibs/dbs batch growth.
    #[arg(long, default_value_t = DEFAULT_R)]
    r: f64,

    /// Batch weights for --alloc custom, normalized internally. [default: none]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    weights: Option<Vec<f64>>,
}

impl AllocArgs {
    fn allocation(&self) -> CliResult<Allocation> {
        match (self.alloc, &self.weights) {
            (AllocKind::Custom, Some(w)) => Ok(Allocation::custom(w.clone())?),
            (AllocKind::Custom, None) => {
                Err(CliError::Usage("--alloc custom requires --weights".into()))
            }
            (_, Some(_)) => Err(CliError::Usage(
                "--weights is only valid with --alloc custom".into(),
            )),
            (AllocKind::Es, None) => Ok(Allocation::Es),
            (AllocKind::Ibs, None) => Ok(Allocation::ibs(self.r)?),
            (AllocKind::Dbs, None) => Ok(Allocation::dbs(self.r)?),
        }
    }
}

#[derive(Args, Debug, Clone)]
struct ScheduleArgs {
    /// Step scale a in a * t^(-r).
    #[arg(long, default_value_t = 0.5)]
    a: f64,

    /// Iterations run and discarded before the first batch.
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Dimension.
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Number of batches.
    #[arg(long, default_value_t = 30)]
    m: usize,
    #[command(flatten)]
    alloc: AllocArgs,
    /// Miscoverage level.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Monte Carlo draws.
    #[arg(long, default_value_t = 1_000_000)]
    reps: usize,
    /// Base seed of the simulation.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// JSON output file. [default: none]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Joint,
    Marginal,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// CSV with header a_1,...,a_d,b; one row per SGD step.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Loss the rows are fed to.
    #[arg(long, default_value = "linear")]
    model: ModelKind,
    /// Number of batches.
    #[arg(long, default_value_t = 30)]
    m: usize,
    #[command(flatten)]
    alloc: AllocArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Averaged iterations. [default: all rows after burn-in]
    #[arg(long = "T", alias = "t")]
    t: Option<usize>,
    /// Miscoverage level.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Joint region or per-coordinate intervals.
    #[arg(long, value_enum, default_value_t = Mode::Joint)]
    mode: Mode,
    /// Monte Carlo draws for the scaling quantile.
    #[arg(long, default_value_t = 1_000_000)]
    reps: usize,
    /// Base seed of the quantile simulation.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// JSON output file. [default: standard output]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct CellArgs {
    /// Synthetic data model.
    #[arg(long, default_value = "linear")]
    model: ModelKind,
    /// Dimension.
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Averaged iterations per replication.
    #[arg(long = "T", alias = "t", default_value_t = 100_000)]
    t: usize,
    /// Number of batches (or sections); BMI methods use ceil(T^(1/4)).
    #[arg(long, default_value_t = 30)]
    m: usize,
    #[command(flatten)]
    alloc: AllocArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Miscoverage level.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Independent replications.
    #[arg(long, default_value_t = 300)]
    reps: usize,
    /// Base seed; replication i uses stream i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo draws for the scaling quantile.
    #[arg(long, default_value_t = 200_000)]
    cal_reps: usize,
    /// Base seed of the quantile simulation.
    #[arg(long, default_value_t = 42)]
    cal_seed: u64,
    /// CSV output file. [default: standard output]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

impl CellArgs {
    fn config(&self, method: Method) -> CliResult<CoverageConfig> {
        Ok(CoverageConfig {
            schedule: StepSchedule::new(self.schedule.a, self.alloc.r)?,
            burn_in: self.schedule.burn_in,
            m: self.m,
            allocation: self.alloc.allocation()?,
            delta: self.delta,
            replications: self.reps,
            base_seed: self.seed,
            calibration_reps: self.cal_reps,
            calibration_seed: self.cal_seed,
            ..CoverageConfig::new(self.model, self.d, self.t, method)
        })
    }
}

#[derive(Args, Debug)]
struct CoverageArgs {
    #[command(flatten)]
    cell: CellArgs,
    /// Inference method.
    #[arg(long, default_value = "bm-joint")]
    method: Method,
    /// JSON file with the full report and per-replication log. [default: none]
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    cell: CellArgs,
    /// Methods to run.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "bm-joint,bm-marginal,sectioning,sectioning-marginal,bmi-marginal,bmi-joint"
    )]
    methods: Vec<Method>,
}

#[derive(Args, Debug)]
struct VolumeArgs {
    /// Dimension.
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Batch counts to compare.
    #[arg(long, value_delimiter = ',', default_value = "10,20,40,100")]
    m_list: Vec<usize>,
    #[command(flatten)]
    alloc: AllocArgs,
    /// Miscoverage level.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Monte Carlo draws per batch count.
    #[arg(long, default_value_t = 200_000)]
    reps: usize,
    /// Base seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// CSV output file. [default: standard output]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetArgs {
    /// Synthetic data model.
    #[arg(long, default_value = "logistic")]
    model: ModelKind,
    /// Dimension.
    #[arg(long, default_value_t = 20)]
    d: usize,
    /// Number of batches; may be at most d.
    #[arg(long, default_value_t = 18)]
    m: usize,
    /// Averaged iterations per replication.
    #[arg(long = "T", alias = "t", default_value_t = 100_000)]
    t: usize,
    #[command(flatten)]
    alloc: AllocArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Independent replications.
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Base seed; replication i uses stream i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reported fraction of determinants below this value.
    #[arg(long, default_value_t = 1e-6)]
    threshold: f64,
    /// CSV output file. [default: standard output]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// A usage problem found after parsing (exit 2) or a library error (exit 1).
#[derive(Debug)]
enum CliError {
    Usage(String),
    Domain(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Domain(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Domain(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let mut args: Vec<OsString> = std::env::args_os().collect();
    if let Some(path) = config_file::config_path(&args) {
        match config_file::merge(args, Path::new(&path)) {
            Ok(merged) => args = merged,
            Err(msg) => Cli::command().error(ErrorKind::Io, msg).exit(),
        }
    }
    let matches = Cli::command().get_matches_from(args);
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let cache_from_flag =
        matches.value_source("cache") == Some(clap::parser::ValueSource::CommandLine);
    if cli.no_cache && cache_from_flag {
        Cli::command()
            .error(
                ErrorKind::ArgumentConflict,
                "--no-cache cannot be used with --cache",
            )
            .exit();
    }
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: Io: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => Cli::command()
            .error(ErrorKind::ArgumentConflict, msg)
            .exit(),
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let mut cache = open_cache(cli)?;
    match &cli.command {
        Command::Calibrate(a) => calibrate(a, &mut cache)?,
        Command::Infer(a) => infer(a, &mut cache)?,
        Command::Experiment(Experiment::Coverage(a)) => coverage(a, &mut cache)?,
        Command::Experiment(Experiment::Volume(a)) => volume(a, &mut cache)?,
        Command::Experiment(Experiment::Detcov(a)) => detcov(a)?,
        Command::Compare(a) => compare(a, &mut cache)?,
    }
    if cache.path().is_some() {
        cache.save()?;
    }
    Ok(())
}

fn open_cache(cli: &Cli) -> Result<QuantileCache> {
    match (&cli.cache, cli.no_cache) {
        (Some(path), false) => QuantileCache::open(path),
        _ => Ok(QuantileCache::in_memory()),
    }
}

fn quantile(
    cache: &mut QuantileCache,
    spec: &LimitDrawSpec,
    delta: f64,
    reps: usize,
    seed: u64,
) -> Result<ScalingQuantile> {
    if spec.heavy_tailed() {
        eprintln!(
            "warning: m - d = {} is small; the scaling quantile is heavy-tailed and its estimate noisy",
            spec.batch_count() - spec.dim()
        );
    }
    let (q, hit) = cache.get_or_estimate(spec, delta, reps, seed)?;
    if hit {
        eprintln!("using cached quantile for {}", q.key.describe_shape());
    }
    Ok(q)
}

/// Writes to the file, or to standard output when no path is given.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    with_output(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })
}

#[derive(Serialize)]
struct CalibrateConfig {
    d: usize,
    m: usize,
    allocation: Allocation,
    delta: f64,
    reps: usize,
    seed: u64,
}

#[derive(Serialize)]
struct CalibrateOutput<'a> {
    config: CalibrateConfig,
    quantile: &'a ScalingQuantile,
}

fn calibrate(args: &CalibrateArgs, cache: &mut QuantileCache) -> CliResult<()> {
    let allocation = args.alloc.allocation()?;
    let spec = LimitDrawSpec::from_allocation(args.d, args.m, &allocation)?;
    let q = quantile(cache, &spec, args.delta, args.reps, args.seed)?;
    println!(
        "alpha_hat = {:.6}  95% CI [{:.6}, {:.6}]  ({})",
        q.alpha_hat,
        q.ci_low,
        q.ci_high,
        q.key.describe_shape()
    );
    if let Some(path) = &args.out {
        let config = CalibrateConfig {
            d: args.d,
            m: args.m,
            allocation,
            delta: args.delta,
            reps: args.reps,
            seed: args.seed,
        };
        write_json(
            Some(path),
            &CalibrateOutput {
                config,
                quantile: &q,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct InferConfig {
    data: PathBuf,
    model: ModelKind,
    d: usize,
    t: usize,
    m: usize,
    allocation: Allocation,
    a: f64,
    r: f64,
    burn_in: usize,
    x0: Vec<f64>,
    delta: f64,
    mode: Mode,
    reps: usize,
    seed: u64,
}

#[derive(Serialize)]
#[serde(untagged)]
enum InferResult {
    Joint(RegionDocument),
    Marginal(MarginalIntervals),
}

#[derive(Serialize)]
struct InferOutput<'a> {
    config: InferConfig,
    quantile: &'a ScalingQuantile,
    result: InferResult,
}

fn infer(args: &InferArgs, cache: &mut QuantileCache) -> CliResult<()> {
    let allocation = args.alloc.allocation()?;
    let schedule = StepSchedule::new(args.schedule.a, args.alloc.r)?;
    let mut oracle = ingest_csv(&args.data, args.model)?;
    let d = oracle.dim();
    let rows = oracle.rows().len();
    let burn_in = args.schedule.burn_in;
    let t = args.t.unwrap_or(rows.saturating_sub(burn_in));
    if args.mode == Mode::Joint && args.m <= d {
        return Err(Error::BatchCountTooSmall { m: args.m, d }.into());
    }
    let plan = make_plan(t, args.m, &allocation)?;
    let spec = match args.mode {
        Mode::Joint => LimitDrawSpec::from_allocation(d, args.m, &allocation)?,
        Mode::Marginal => LimitDrawSpec::from_allocation(1, args.m, &allocation)?,
    };
    let q = quantile(cache, &spec, args.delta, args.reps, args.seed)?;

    let run = SgdRunConfig::new(d, t)
        .with_schedule(schedule)
        .with_burn_in(burn_in);
    let mut acc = BatchAccumulator::new(plan, d)?;
    run_sgd(
        &mut oracle,
        &run,
        &mut derive_stream(args.seed, 0),
        &mut acc,
    )?;
    let summary = acc.finalize()?;
    let result = match args.mode {
        Mode::Joint => InferResult::Joint(build_region(&summary, &q)?.to_document()),
        Mode::Marginal => InferResult::Marginal(marginal_intervals(&summary, &q)?),
    };
    let config = InferConfig {
        data: args.data.clone(),
        model: args.model,
        d,
        t,
        m: args.m,
        allocation,
        a: schedule.scale(),
        r: schedule.exponent(),
        burn_in,
        x0: run.x0.clone(),
        delta: args.delta,
        mode: args.mode,
        reps: args.reps,
        seed: args.seed,
    };
    Ok(write_json(
        args.out.as_deref(),
        &InferOutput {
            config,
            quantile: &q,
            result,
        },
    )?)
}

fn coverage(args: &CoverageArgs, cache: &mut QuantileCache) -> CliResult<()> {
    let config = args.cell.config(args.method)?;
    config.validate()?;
    let start = Instant::now();
    let report = run_coverage(&config, cache)?;
    let wall = start.elapsed().as_secs_f64();
    eprintln!("{}", report.summary_line());
    let cell = CoverageCsvCell {
        config: &config,
        report: Some(&report),
        error: None,
        wall_time_s: wall,
    };
    with_output(args.cell.out.as_deref(), |w| write_coverage_csv(w, &[cell]))?;
    if let Some(path) = &args.report {
        write_json(Some(path), &report)?;
    }
    Ok(())
}

fn compare(args: &CompareArgs, cache: &mut QuantileCache) -> CliResult<()> {
    let configs = args
        .methods
        .iter()
        .map(|&m| args.cell.config(m))
        .collect::<CliResult<Vec<_>>>()?;
    let mut results = Vec::with_capacity(configs.len());
    for config in &configs {
        let start = Instant::now();
        let outcome = run_coverage(config, cache);
        let wall = start.elapsed().as_secs_f64();
        match &outcome {
            Ok(r) => eprintln!("{}", r.summary_line()),
            Err(e) => eprintln!("{}: failed: {e}", config.method),
        }
        results.push((outcome.map_err(|e| e.to_string()), wall));
    }
    let cells: Vec<CoverageCsvCell<'_>> = configs
        .iter()
        .zip(&results)
        .map(|(config, (outcome, wall))| CoverageCsvCell {
            config,
            report: outcome.as_ref().ok(),
            error: outcome.as_ref().err().map(String::as_str),
            wall_time_s: *wall,
        })
        .collect();
    Ok(with_output(args.cell.out.as_deref(), |w| {
        write_coverage_csv(w, &cells)
    })?)
}

fn volume(args: &VolumeArgs, cache: &mut QuantileCache) -> CliResult<()> {
    let config = VolumeStudyConfig {
        d: args.d,
        m_list: args.m_list.clone(),
        allocation: args.alloc.allocation()?,
        delta: args.delta,
        reps: args.reps,
        base_seed: args.seed,
    };
    let study = run_volume_study(&config, cache)?;
    for row in &study.rows {
        eprintln!(
            "d={} m={}: v = {:.6} +/- {:.6}",
            row.d, row.m, row.v, row.std_error
        );
    }
    Ok(with_output(args.out.as_deref(), |w| {
        write_volume_csv(w, &study)
    })?)
}

fn detcov(args: &DetArgs) -> CliResult<()> {
    let config = DetStudyConfig {
        allocation: args.alloc.allocation()?,
        schedule: StepSchedule::new(args.schedule.a, args.alloc.r)?,
        burn_in: args.schedule.burn_in,
        replications: args.reps,
        base_seed: args.seed,
        ..DetStudyConfig::new(args.model, args.d, args.m, args.t)
    };
    let study = run_det_study(&config)?;
    eprintln!(
        "fraction of determinants below {:e}: {:.4}",
        args.threshold,
        study.fraction_below(args.threshold)
    );
    Ok(with_output(args.out.as_deref(), |w| {
        write_det_csv(w, &study)
    })?)
}
