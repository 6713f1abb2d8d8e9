//! Comparison methods: sectioning and BMI-style batch means.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batching::{make_plan, Allocation, BatchMeansSummary, BatchPlan};
use crate::calibration::{f_quantile, normal_quantile};
use crate::error::{Error, Result};
use crate::inference::{
    intervals_from_parts, region_from_parts, ConfidenceRegion, MarginalIntervals,
};
use crate::rng::RandomStream;
use crate::sgd::{run_sgd, GradientOracle, MeanObserver, SgdRunConfig};

/// Section count used when none is given.
pub const DEFAULT_SECTIONS: usize = 30;

#[derive(Debug, Clone)]
pub struct SectioningResult {
    /// Section means as batch means over an even plan of `m · section_length`.
    pub summary: BatchMeansSummary,
    pub section_length: usize,
    pub region: ConfidenceRegion,
    pub intervals: MarginalIntervals,
    /// `F(d, m-d)` quantile at `1-δ`.
    pub alpha_joint: f64,
    /// `F(1, m-1)` quantile at `1-δ`.
    pub alpha_marginal: f64,
}

/// Averages `m` independent runs of length `⌊total_t / m⌋`.
///
/// Section `i` builds its oracle with `factory(i)` and draws from
/// `stream.substream(i)`. `template` supplies the schedule, burn-in and
/// start point; its iteration count is ignored.
pub fn sectioning_infer<O, F>(
    factory: F,
    m: usize,
    total_t: usize,
    template: &SgdRunConfig,
    delta: f64,
    stream: &RandomStream,
) -> Result<SectioningResult>
where
    O: GradientOracle,
    F: Fn(usize) -> O + Sync,
{
    let d = template.x0.len();
    if m < 2 {
        return Err(Error::InvalidBatchCount(m));
    }
    if m <= d {
        return Err(Error::BatchCountTooSmall { m, d });
    }
    check_delta(delta)?;
    let length = total_t / m;
    if length < 1 {
        return Err(Error::BatchTooSmall { t: total_t, m });
    }
    let mut config = template.clone();
    config.iterations = length;

    let means: Result<Vec<Vec<f64>>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut oracle = factory(i);
            let mut s = stream.substream(i as u64);
            let mut obs = MeanObserver::new(d);
            run_sgd(&mut oracle, &config, &mut s, &mut obs)?;
            Ok(obs.mean())
        })
        .collect();
    let means = means?;
    let plan = make_plan(m * length, m, &Allocation::Es)?;
    let pooled = (0..d)
        .map(|k| means.iter().map(|v| v[k]).sum::<f64>() / m as f64)
        .collect();
    let summary = BatchMeansSummary::from_parts(plan, means, pooled)?;
    sectioning_from_summary(summary, delta)
}

/// Sectioning inference on already computed section means.
pub fn sectioning_from_summary(summary: BatchMeansSummary, delta: f64) -> Result<SectioningResult> {
    check_delta(delta)?;
    let (d, m) = (summary.dim(), summary.batch_count());
    if m <= d {
        return Err(Error::BatchCountTooSmall { m, d });
    }
    let alpha_joint = f_quantile(d, m - d, 1.0 - delta)?;
    let alpha_marginal = f_quantile(1, m - 1, 1.0 - delta)?;
    let region = region_from_parts(&summary, alpha_joint, delta)?;
    let intervals = intervals_from_parts(&summary, alpha_marginal, delta);
    let section_length = summary.plan().total() / m;
    Ok(SectioningResult {
        summary,
        section_length,
        region,
        intervals,
        alpha_joint,
        alpha_marginal,
    })
}

/// `⌈T^{1/4}⌉`, computed exactly.
pub fn bmi_batch_count(t: usize) -> usize {
    let mut k = (t as f64).powf(0.25).floor() as usize;
    while k.saturating_pow(4) >= t && k > 0 {
        k -= 1;
    }
    while k.saturating_pow(4) < t {
        k += 1;
    }
    k
}

/// IBS plan with `⌈T^{1/4}⌉` batches.
pub fn bmi_plan(t: usize, r: f64) -> Result<BatchPlan> {
    if t < 16 {
        return Err(Error::InvalidParameter(format!(
            "BMI needs T >= 16, got {t}"
        )));
    }
    make_plan(t, bmi_batch_count(t), &Allocation::ibs(r)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmiResult {
    pub m_n: usize,
    /// Level δ per coordinate.
    pub marginal: MarginalIntervals,
    /// Level δ/d per coordinate (Bonferroni).
    pub joint: MarginalIntervals,
}

impl BmiResult {
    /// True when every coordinate of `x` lies in its Bonferroni interval.
    pub fn covers_jointly(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(k, v)| self.joint.covers(k, *v))
    }
}

/// Intervals `X̄(k) ± z σ(k) / √m_n` on a summary built from [`bmi_plan`].
pub fn bmi_infer(summary: &BatchMeansSummary, delta: f64) -> Result<BmiResult> {
    check_delta(delta)?;
    let t = summary.plan().total();
    let m_n = summary.batch_count();
    if m_n != bmi_batch_count(t) {
        return Err(Error::InvalidParameter(format!(
            "BMI summary has {m_n} batches, expected ceil(T^(1/4)) = {}",
            bmi_batch_count(t)
        )));
    }
    let d = summary.dim();
    let z = normal_quantile(1.0 - delta / 2.0)?;
    let zb = normal_quantile(1.0 - delta / (2.0 * d as f64))?;
    Ok(BmiResult {
        m_n,
        marginal: intervals_from_parts(summary, z * z, delta),
        joint: intervals_from_parts(summary, zb * zb, delta),
    })
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "delta = {delta} must lie in (0, 1)"
        )))
    }
}
