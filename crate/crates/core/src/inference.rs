//! Joint confidence regions and marginal intervals from batch means.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::batching::{coordinate_sigmas, f_scaling, sample_cov, BatchMeansSummary};
use crate::calibration::{simulate_det_sqrt_sample, LimitDrawSpec, ScalingQuantile};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, det_sqrt, quad_form_with, CholFactor, SymMatrix};

/// Ellipsoid `{x : (c - x)ᵀ S⁻¹ (c - x) ≤ scale}` (closed).
#[derive(Debug, Clone)]
pub struct ConfidenceRegion {
    center: Vec<f64>,
    shape: SymMatrix,
    factor: CholFactor,
    scale: f64,
    alpha: f64,
    m: usize,
    t: usize,
    delta: f64,
    allocation: String,
}

impl ConfidenceRegion {
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn shape(&self) -> &SymMatrix {
        &self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn batch_count(&self) -> usize {
        self.m
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Quadratic form `(c - x)ᵀ S⁻¹ (c - x)`.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let diff: Vec<f64> = self.center.iter().zip(x).map(|(c, v)| c - v).collect();
        Ok(quad_form_with(&self.factor, &diff))
    }

    pub fn to_document(&self) -> RegionDocument {
        RegionDocument {
            kind: "joint".to_string(),
            center: self.center.clone(),
            shape: self.shape.to_rows(),
            scale: self.scale,
            alpha: self.alpha,
            volume: region_volume(self),
            m: self.m,
            t: self.t,
            delta: self.delta,
            allocation: self.allocation.clone(),
        }
    }
}

/// Serializable form of a [`ConfidenceRegion`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDocument {
    pub kind: String,
    pub center: Vec<f64>,
    pub shape: Vec<Vec<f64>>,
    pub scale: f64,
    pub alpha: f64,
    pub volume: f64,
    pub m: usize,
    pub t: usize,
    pub delta: f64,
    pub allocation: String,
}

/// Joint 100(1-δ)% region from a batch-means summary.
pub fn build_region(
    summary: &BatchMeansSummary,
    alpha: &ScalingQuantile,
) -> Result<ConfidenceRegion> {
    let d = summary.dim();
    let m = summary.batch_count();
    if m <= d {
        return Err(Error::BatchCountTooSmall { m, d });
    }
    alpha.check_shape(d, m, summary.plan().allocation())?;
    region_from_parts(summary, alpha.alpha_hat, alpha.delta())
}

/// Region for an externally supplied scaling value (no key check).
pub(crate) fn region_from_parts(
    summary: &BatchMeansSummary,
    alpha: f64,
    delta: f64,
) -> Result<ConfidenceRegion> {
    let d = summary.dim();
    let m = summary.batch_count();
    if m <= d {
        return Err(Error::BatchCountTooSmall { m, d });
    }
    let shape = sample_cov(summary);
    let factor = cholesky(&shape).map_err(|_| Error::DegenerateCovariance)?;
    Ok(ConfidenceRegion {
        center: summary.mean().to_vec(),
        shape,
        factor,
        scale: alpha / f_scaling(m, d),
        alpha,
        m,
        t: summary.plan().total(),
        delta,
        allocation: summary.plan().allocation().descriptor(),
    })
}

pub fn contains(region: &ConfidenceRegion, x: &[f64]) -> Result<bool> {
    Ok(region.distance(x)? <= region.scale)
}

/// Volume of the unit ball in R^d, `π^{d/2} / Γ(d/2 + 1)`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    std::f64::consts::PI.powf(h) / gamma(h + 1.0)
}

/// Ellipsoid volume `scale^{d/2} det(S)^{1/2} q_d`.
pub fn region_volume(region: &ConfidenceRegion) -> f64 {
    let d = region.dim();
    region.scale.powf(d as f64 / 2.0) * det_sqrt(&region.shape) * unit_ball_volume(d)
}

/// Per-coordinate intervals `X̄(k) ± sqrt(α/m) σ(k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalIntervals {
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub sigma: Vec<f64>,
    pub alpha_1d: f64,
    pub m: usize,
    pub delta: f64,
}

impl MarginalIntervals {
    pub fn covers(&self, k: usize, x: f64) -> bool {
        self.lower[k] <= x && x <= self.upper[k]
    }

    /// Fraction of coordinates of `x` inside their interval.
    pub fn coverage_fraction(&self, x: &[f64]) -> f64 {
        let hit = x
            .iter()
            .enumerate()
            .filter(|(k, v)| self.covers(*k, **v))
            .count();
        hit as f64 / x.len() as f64
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .collect()
    }
}

/// Marginal intervals with one d = 1 scaling parameter shared by every coordinate.
pub fn marginal_intervals(
    summary: &BatchMeansSummary,
    alpha_1d: &ScalingQuantile,
) -> Result<MarginalIntervals> {
    alpha_1d.check_shape(1, summary.batch_count(), summary.plan().allocation())?;
    Ok(intervals_from_parts(
        summary,
        alpha_1d.alpha_hat,
        alpha_1d.delta(),
    ))
}

pub(crate) fn intervals_from_parts(
    summary: &BatchMeansSummary,
    alpha_1d: f64,
    delta: f64,
) -> MarginalIntervals {
    let m = summary.batch_count();
    let sigma = coordinate_sigmas(summary);
    let k = (alpha_1d / m as f64).sqrt();
    let center = summary.mean().to_vec();
    let lower = center.iter().zip(&sigma).map(|(c, s)| c - k * s).collect();
    let upper = center.iter().zip(&sigma).map(|(c, s)| c + k * s).collect();
    MarginalIntervals {
        center,
        lower,
        upper,
        sigma,
        alpha_1d,
        m,
        delta,
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Limiting volume factor
/// `v_d(m, w) = (d(m-1)/(m(m-d)))^{d/2} E[det(g_m(B, w))^{1/2}] α^{d/2}`.
///
/// The expectation is estimated from `reps` skeleton draws. The standard
/// error adds the determinant-average error and the error of α, the latter
/// read off the quantile's 95% interval and propagated through `α^{d/2}`.
pub fn expected_volume_factor(
    spec: &LimitDrawSpec,
    alpha: &ScalingQuantile,
    reps: usize,
    base_seed: u64,
) -> Result<Estimate> {
    let (d, m) = (spec.dim(), spec.batch_count());
    if alpha.key.d != d || alpha.key.m != m || alpha.key.allocation != spec.allocation() {
        return Err(Error::KeyMismatch {
            calibrated: alpha.key.describe_shape(),
            required: format!("d={d}, m={m}, allocation={}", spec.allocation()),
        });
    }
    if reps < 2 {
        return Err(Error::InvalidParameter("need at least 2 draws".into()));
    }
    let dets = simulate_det_sqrt_sample(spec, reps, base_seed);
    let n = dets.len() as f64;
    let mean = dets.iter().sum::<f64>() / n;
    let var = dets.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half_d = d as f64 / 2.0;
    let factor = (alpha.alpha_hat / f_scaling(m, d)).powf(half_d);
    let value = factor * mean;
    let rel_det = (var / n).sqrt() / mean;
    let alpha_se = (alpha.ci_high - alpha.ci_low) / (2.0 * 1.959_963_984_540_054);
    let rel_alpha = half_d * alpha_se / alpha.alpha_hat;
    Ok(Estimate {
        value,
        std_error: value * rel_det.hypot(rel_alpha),
    })
}
