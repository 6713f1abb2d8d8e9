//! Replicated studies: coverage, volume factor, determinant degeneracy and
//! method comparison.
//!
//! Replication `i` of a study with base seed `s` reads `derive_stream(s, i)`
//! and nothing else, so reports do not depend on scheduling or thread count.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{bmi_infer, bmi_plan, sectioning_infer};
use crate::batching::{f_scaling, make_plan, sample_cov, Allocation, BatchAccumulator};
use crate::calibration::{LimitDrawSpec, QuantileCache, ScalingQuantile};
use crate::error::{Error, Result};
use crate::inference::{build_region, expected_volume_factor, marginal_intervals};
use crate::linalg::det_sqrt;
use crate::models::{linspace_params, ModelKind};
use crate::rng::{derive_stream, mix64};
use crate::sgd::{run_sgd, SgdRunConfig, StepSchedule};

/// Two-sided 95% normal quantile used for binomial half-widths.
const Z_975: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Joint region from one path.
    BmJoint,
    /// Per-coordinate intervals from one path.
    BmMarginal,
    /// Joint region from independent sections.
    Sectioning,
    /// Per-coordinate intervals from independent sections.
    SectioningMarginal,
    BmiMarginal,
    /// BMI intervals with a Bonferroni correction.
    BmiJoint,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::BmJoint,
        Method::BmMarginal,
        Method::Sectioning,
        Method::SectioningMarginal,
        Method::BmiMarginal,
        Method::BmiJoint,
    ];

    pub fn is_joint(self) -> bool {
        matches!(
            self,
            Method::BmJoint | Method::Sectioning | Method::BmiJoint
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::BmJoint => "bm_joint",
            Method::BmMarginal => "bm_marginal",
            Method::Sectioning => "sectioning",
            Method::SectioningMarginal => "sectioning_marginal",
            Method::BmiMarginal => "bmi_marginal",
            Method::BmiJoint => "bmi_joint",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_").to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// One coverage cell. The true parameter is `linspace_params(d)` and every
/// run starts from the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub model: ModelKind,
    pub d: usize,
    /// Iterations after burn-in (total budget for sectioning).
    pub t: usize,
    pub schedule: StepSchedule,
    pub burn_in: usize,
    pub method: Method,
    /// Batch count for BM, section count for sectioning, unused by BMI.
    pub m: usize,
    /// Batch allocation for BM methods.
    pub allocation: Allocation,
    pub delta: f64,
    pub replications: usize,
    pub base_seed: u64,
    pub calibration_reps: usize,
    pub calibration_seed: u64,
}

impl CoverageConfig {
    pub fn new(model: ModelKind, d: usize, t: usize, method: Method) -> Self {
        let schedule = StepSchedule::default();
        Self {
            model,
            d,
            t,
            schedule,
            burn_in: 0,
            method,
            m: 30,
            allocation: Allocation::Ibs {
                r: schedule.exponent(),
            },
            delta: 0.05,
            replications: 300,
            base_seed: 0,
            calibration_reps: 200_000,
            calibration_seed: 42,
        }
    }

    /// Batch (or section) count actually used.
    pub fn effective_m(&self) -> usize {
        match self.method {
            Method::BmiJoint | Method::BmiMarginal => crate::baselines::bmi_batch_count(self.t),
            _ => self.m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::InvalidDimension(self.d));
        }
        if self.replications < 1 {
            return Err(Error::InvalidParameter(
                "replications must be at least 1".into(),
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta = {} must lie in (0, 1)",
                self.delta
            )));
        }
        self.allocation.validate()?;
        let m = self.effective_m();
        match self.method {
            Method::BmJoint | Method::Sectioning | Method::SectioningMarginal if m <= self.d => {
                Err(Error::BatchCountTooSmall { m, d: self.d })
            }
            Method::BmMarginal if m < 2 => Err(Error::InvalidBatchCount(m)),
            Method::BmJoint | Method::BmMarginal if self.t < m => {
                Err(Error::BatchTooSmall { t: self.t, m })
            }
            Method::Sectioning | Method::SectioningMarginal if self.t / m < 1 => {
                Err(Error::BatchTooSmall { t: self.t, m })
            }
            Method::BmiJoint | Method::BmiMarginal if self.t < 16 => Err(Error::InvalidParameter(
                format!("BMI needs T >= 16, got {}", self.t),
            )),
            _ => Ok(()),
        }
    }

    fn run_config(&self, iterations: usize) -> SgdRunConfig {
        SgdRunConfig::new(self.d, iterations)
            .with_schedule(self.schedule)
            .with_burn_in(self.burn_in)
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: u64,
    /// `(base_seed, stream_index)` of the replication's stream.
    pub stream: (u64, u64),
    /// Shape matrix was singular; excluded from coverage.
    pub degenerate: bool,
    /// 1 or 0 for joint methods, fraction of covered coordinates otherwise.
    pub coverage: f64,
    /// Γ at the true parameter, for region-based methods.
    pub statistic: Option<f64>,
    /// Interval widths, for interval-based methods.
    pub widths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub config: CoverageConfig,
    pub effective_m: usize,
    /// Calibrated α, when the method uses one.
    pub alpha: Option<ScalingQuantile>,
    /// Sum of per-replication coverage (a count for joint methods).
    pub hits: f64,
    /// Non-degenerate replications.
    pub effective_replications: usize,
    pub degenerate: usize,
    pub coverage: f64,
    pub half_width: f64,
    pub records: Vec<ReplicationRecord>,
}

impl CoverageReport {
    /// One-line human summary.
    pub fn summary_line(&self) -> String {
        let c = &self.config;
        format!(
            "{} d={} T={} {} m={} {}: {:.3} ± {:.3} (degenerate {}/{})",
            c.model,
            c.d,
            c.t,
            c.method,
            self.effective_m,
            c.allocation.descriptor(),
            self.coverage,
            self.half_width,
            self.degenerate,
            c.replications
        )
    }
}

/// `1.96 √(p(1-p)/n)`.
pub fn binomial_half_width(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    Z_975 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Runs `config.replications` independent replications and aggregates coverage.
///
/// α is taken from `cache` or simulated once. Replications whose shape
/// matrix is singular are counted apart; more than 1% of them aborts.
pub fn run_coverage(config: &CoverageConfig, cache: &mut QuantileCache) -> Result<CoverageReport> {
    config.validate()?;
    let m = config.effective_m();
    let alpha = match config.method {
        Method::BmJoint | Method::BmMarginal => {
            let d_cal = if config.method == Method::BmJoint {
                config.d
            } else {
                1
            };
            let spec = LimitDrawSpec::from_allocation(d_cal, m, &config.allocation)?;
            let (q, _) = cache.get_or_estimate(
                &spec,
                config.delta,
                config.calibration_reps,
                config.calibration_seed,
            )?;
            Some(q)
        }
        _ => None,
    };
    let x_star = linspace_params(config.d)?;

    let outcomes: Vec<Result<ReplicationRecord>> = (0..config.replications as u64)
        .into_par_iter()
        .map(|i| replicate(config, alpha.as_ref(), &x_star, i))
        .collect();
    let records = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let degenerate = records.iter().filter(|r| r.degenerate).count();
    if degenerate * 100 > config.replications {
        return Err(Error::TooManyDegenerate {
            degenerate,
            replications: config.replications,
        });
    }
    let effective = config.replications - degenerate;
    let hits: f64 = records
        .iter()
        .filter(|r| !r.degenerate)
        .map(|r| r.coverage)
        .sum();
    let coverage = if effective > 0 {
        hits / effective as f64
    } else {
        0.0
    };
    Ok(CoverageReport {
        config: config.clone(),
        effective_m: m,
        alpha,
        hits,
        effective_replications: effective,
        degenerate,
        coverage,
        half_width: binomial_half_width(coverage, effective),
        records,
    })
}

fn replicate(
    config: &CoverageConfig,
    alpha: Option<&ScalingQuantile>,
    x_star: &[f64],
    index: u64,
) -> Result<ReplicationRecord> {
    let mut stream = derive_stream(config.base_seed, index);
    let mut record = ReplicationRecord {
        index,
        stream: stream.lineage(),
        degenerate: false,
        coverage: 0.0,
        statistic: None,
        widths: Vec::new(),
    };
    let d = config.d;
    match config.method {
        Method::Sectioning | Method::SectioningMarginal => {
            let template = config.run_config(1);
            let res = sectioning_infer(
                |_| config.model.oracle(x_star.to_vec()),
                config.m,
                config.t,
                &template,
                config.delta,
                &stream,
            );
            match res {
                Err(Error::DegenerateCovariance) => record.degenerate = true,
                Err(e) => return Err(e),
                Ok(r) if config.method == Method::Sectioning => {
                    let q = r.region.distance(x_star)?;
                    record.statistic = Some(q * f_scaling(config.m, d));
                    record.coverage = f64::from(u8::from(q <= r.region.scale()));
                }
                Ok(r) => {
                    record.coverage = r.intervals.coverage_fraction(x_star);
                    record.widths = r.intervals.widths();
                }
            }
            return Ok(record);
        }
        _ => {}
    }

    let plan = match config.method {
        Method::BmiJoint | Method::BmiMarginal => bmi_plan(config.t, config.schedule.exponent())?,
        _ => make_plan(config.t, config.m, &config.allocation)?,
    };
    let mut oracle = config.model.oracle(x_star.to_vec());
    let mut acc = BatchAccumulator::new(plan, d)?;
    run_sgd(
        &mut oracle,
        &config.run_config(config.t),
        &mut stream,
        &mut acc,
    )?;
    let summary = acc.finalize()?;

    match config.method {
        Method::BmJoint => {
            let q = alpha.expect("BM joint is calibrated");
            match build_region(&summary, q) {
                Err(Error::DegenerateCovariance) => record.degenerate = true,
                Err(e) => return Err(e),
                Ok(region) => {
                    let dist = region.distance(x_star)?;
                    record.statistic = Some(dist * f_scaling(config.m, d));
                    record.coverage = f64::from(u8::from(dist <= region.scale()));
                }
            }
        }
        Method::BmMarginal => {
            let iv = marginal_intervals(&summary, alpha.expect("BM marginal is calibrated"))?;
            record.coverage = iv.coverage_fraction(x_star);
            record.widths = iv.widths();
        }
        Method::BmiMarginal | Method::BmiJoint => {
            let r = bmi_infer(&summary, config.delta)?;
            if config.method == Method::BmiJoint {
                record.coverage = f64::from(u8::from(r.covers_jointly(x_star)));
                record.widths = r.joint.widths();
            } else {
                record.coverage = r.marginal.coverage_fraction(x_star);
                record.widths = r.marginal.widths();
            }
        }
        Method::Sectioning | Method::SectioningMarginal => unreachable!(),
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeStudyConfig {
    pub d: usize,
    pub m_list: Vec<usize>,
    pub allocation: Allocation,
    pub delta: f64,
    /// Draws used for α and, separately, for the determinant average.
    pub reps: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub d: usize,
    pub m: usize,
    pub allocation: String,
    pub alpha: f64,
    pub alpha_ci: (f64, f64),
    pub v: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeStudy {
    pub config: VolumeStudyConfig,
    pub rows: Vec<VolumeRow>,
}

/// `v_d(m, w)` for each `m` in the list.
pub fn run_volume_study(
    config: &VolumeStudyConfig,
    cache: &mut QuantileCache,
) -> Result<VolumeStudy> {
    if config.m_list.is_empty() {
        return Err(Error::InvalidParameter("m_list is empty".into()));
    }
    let det_seed = mix64(config.base_seed ^ 0x766f_6c75_6d65);
    let mut rows = Vec::with_capacity(config.m_list.len());
    for &m in &config.m_list {
        let spec = LimitDrawSpec::from_allocation(config.d, m, &config.allocation)?;
        let (alpha, _) =
            cache.get_or_estimate(&spec, config.delta, config.reps, config.base_seed)?;
        let est = expected_volume_factor(&spec, &alpha, config.reps, det_seed)?;
        rows.push(VolumeRow {
            d: config.d,
            m,
            allocation: spec.allocation().to_string(),
            alpha: alpha.alpha_hat,
            alpha_ci: (alpha.ci_low, alpha.ci_high),
            v: est.value,
            std_error: est.std_error,
        });
    }
    Ok(VolumeStudy {
        config: config.clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetStudyConfig {
    pub model: ModelKind,
    pub d: usize,
    /// May be at most `d`; the study then shows the rank deficiency.
    pub m: usize,
    pub t: usize,
    pub allocation: Allocation,
    pub schedule: StepSchedule,
    pub burn_in: usize,
    pub replications: usize,
    pub base_seed: u64,
}

impl DetStudyConfig {
    pub fn new(model: ModelKind, d: usize, m: usize, t: usize) -> Self {
        let schedule = StepSchedule::default();
        Self {
            model,
            d,
            m,
            t,
            allocation: Allocation::Ibs {
                r: schedule.exponent(),
            },
            schedule,
            burn_in: 0,
            replications: 200,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetStudy {
    pub config: DetStudyConfig,
    /// `det(T · S_m(T))` per replication; 0 when the matrix is singular.
    pub values: Vec<f64>,
}

impl DetStudy {
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        let n = self.values.iter().filter(|v| **v < threshold).count();
        n as f64 / self.values.len() as f64
    }
}

/// Determinants of `T · S_m(T)` over independent replications.
pub fn run_det_study(config: &DetStudyConfig) -> Result<DetStudy> {
    if config.replications < 1 {
        return Err(Error::InvalidParameter(
            "replications must be at least 1".into(),
        ));
    }
    let x_star = linspace_params(config.d)?;
    let plan = make_plan(config.t, config.m, &config.allocation)?;
    let run = SgdRunConfig::new(config.d, config.t)
        .with_schedule(config.schedule)
        .with_burn_in(config.burn_in);
    let values: Vec<Result<f64>> = (0..config.replications as u64)
        .into_par_iter()
        .map(|i| {
            let mut stream = derive_stream(config.base_seed, i);
            let mut oracle = config.model.oracle(x_star.clone());
            let mut acc = BatchAccumulator::new(plan.clone(), config.d)?;
            run_sgd(&mut oracle, &run, &mut stream, &mut acc)?;
            let s = sample_cov(&acc.finalize()?).scaled(config.t as f64);
            Ok(det_sqrt(&s).powi(2))
        })
        .collect();
    Ok(DetStudy {
        config: config.clone(),
        values: values.into_iter().collect::<Result<_>>()?,
    })
}

/// One comparison cell; failed cells keep the error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub method: Method,
    pub report: Option<CoverageReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model: ModelKind,
    pub d: usize,
    pub t: usize,
    pub cells: Vec<ComparisonCell>,
}

/// Runs each method on `base` with the same budget, model and seeds.
pub fn run_comparison(
    base: &CoverageConfig,
    methods: &[Method],
    cache: &mut QuantileCache,
) -> ComparisonReport {
    let cells = methods
        .iter()
        .map(|&method| {
            let config = CoverageConfig {
                method,
                ..base.clone()
            };
            match run_coverage(&config, cache) {
                Ok(report) => ComparisonCell {
                    method,
                    report: Some(report),
                    error: None,
                },
                Err(e) => ComparisonCell {
                    method,
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    ComparisonReport {
        model: base.model,
        d: base.d,
        t: base.t,
        cells,
    }
}

#[derive(Debug, Serialize)]
struct CoverageCsvRow<'a> {
    model: ModelKind,
    d: usize,
    t: usize,
    a: f64,
    r: f64,
    burn_in: usize,
    method: Method,
    m: usize,
    allocation: String,
    delta: f64,
    replications: usize,
    base_seed: u64,
    calibration_reps: usize,
    calibration_seed: u64,
    alpha: Option<f64>,
    coverage: Option<f64>,
    half_width: Option<f64>,
    hits: Option<f64>,
    effective_replications: Option<usize>,
    degenerate_count: Option<usize>,
    wall_time_s: f64,
    error: &'a str,
}

/// A coverage cell for CSV output: the report or the error, plus timing.
pub struct CoverageCsvCell<'a> {
    pub config: &'a CoverageConfig,
    pub report: Option<&'a CoverageReport>,
    pub error: Option<&'a str>,
    pub wall_time_s: f64,
}

/// One CSV row per cell.
pub fn write_coverage_csv<W: Write>(out: W, cells: &[CoverageCsvCell<'_>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for cell in cells {
        let c = cell.config;
        let r = cell.report;
        w.serialize(CoverageCsvRow {
            model: c.model,
            d: c.d,
            t: c.t,
            a: c.schedule.scale(),
            r: c.schedule.exponent(),
            burn_in: c.burn_in,
            method: c.method,
            m: c.effective_m(),
            allocation: c.allocation.descriptor(),
            delta: c.delta,
            replications: c.replications,
            base_seed: c.base_seed,
            calibration_reps: c.calibration_reps,
            calibration_seed: c.calibration_seed,
            alpha: r.and_then(|r| r.alpha.as_ref()).map(|q| q.alpha_hat),
            coverage: r.map(|r| r.coverage),
            half_width: r.map(|r| r.half_width),
            hits: r.map(|r| r.hits),
            effective_replications: r.map(|r| r.effective_replications),
            degenerate_count: r.map(|r| r.degenerate),
            wall_time_s: cell.wall_time_s,
            error: cell.error.unwrap_or(""),
        })
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_volume_csv<W: Write>(out: W, study: &VolumeStudy) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "d",
        "m",
        "allocation",
        "delta",
        "reps",
        "base_seed",
        "alpha",
        "alpha_ci_low",
        "alpha_ci_high",
        "v",
        "std_error",
    ])
    .map_err(csv_error)?;
    for row in &study.rows {
        w.write_record([
            row.d.to_string(),
            row.m.to_string(),
            row.allocation.clone(),
            study.config.delta.to_string(),
            study.config.reps.to_string(),
            study.config.base_seed.to_string(),
            row.alpha.to_string(),
            row.alpha_ci.0.to_string(),
            row.alpha_ci.1.to_string(),
            row.v.to_string(),
            row.std_error.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Histogram-ready CSV: one determinant per row with the study settings.
pub fn write_det_csv<W: Write>(out: W, study: &DetStudy) -> Result<()> {
    let c = &study.config;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model",
        "d",
        "m",
        "t",
        "allocation",
        "a",
        "r",
        "burn_in",
        "base_seed",
        "replication",
        "det",
    ])
    .map_err(csv_error)?;
    for (i, v) in study.values.iter().enumerate() {
        w.write_record([
            c.model.to_string(),
            c.d.to_string(),
            c.m.to_string(),
            c.t.to_string(),
            c.allocation.descriptor(),
            c.schedule.scale().to_string(),
            c.schedule.exponent().to_string(),
            c.burn_in.to_string(),
            c.base_seed.to_string(),
            i.to_string(),
            v.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(format!("writing CSV: {e}"))
}
