//! Monte Carlo calibration of the scaling parameter α_m(δ, w).
//!
//! The limit of the batch-means statistic is
//! `m(m-d)/(d(m-1)) · Zᵀ g_m(B, w)^{-1} Z` with `Z ~ N(0, I_d)` independent of
//! the Brownian motion `B`. `g_m` only looks at `B` on the grid
//! `c_0 = 0 < c_1 < … < c_m = 1`, so each draw needs the m Gaussian increments
//! `D_i ~ N(0, w_i I_d)` and nothing else: there is no path discretization.
//!
//! Draws are grouped in fixed-size chunks, each chunk reading its own derived
//! stream, so the sample (and the quantile) does not depend on how many
//! threads run the chunks.

mod cache;
mod fdist;

pub use cache::{QuantileCache, CACHE_ENV_VAR};
pub use fdist::{f_cdf, f_quantile, normal_quantile};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batching::{f_scaling, Allocation};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, quad_form_with, SymMatrix};
use crate::rng::{derive_stream, RandomStream};

/// Draws per derived stream in [`estimate_alpha`].
pub const CHUNK_SIZE: usize = 4096;

/// Smallest replication count accepted by [`estimate_alpha`].
pub const MIN_REPS: usize = 10_000;

/// Two-sided 95% standard normal quantile used for the order-statistic CI.
const Z_975: f64 = 1.959_963_984_540_054;

/// Parameters of the limiting distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitDrawSpec {
    d: usize,
    m: usize,
    weights: Vec<f64>,
    allocation: String,
}

impl LimitDrawSpec {
    /// Spec for an explicit weight vector; keyed as a custom allocation.
    pub fn new(d: usize, m: usize, weights: Vec<f64>) -> Result<Self> {
        let allocation = Allocation::custom(weights.clone())?.descriptor();
        Self::build(d, m, weights, allocation)
    }

    /// Spec for the nominal weights of an allocation scheme.
    pub fn from_allocation(d: usize, m: usize, allocation: &Allocation) -> Result<Self> {
        let weights = allocation.nominal_weights(m)?;
        Self::build(d, m, weights, allocation.descriptor())
    }

    fn build(d: usize, m: usize, weights: Vec<f64>, allocation: String) -> Result<Self> {
        if d < 1 {
            return Err(Error::InvalidDimension(d));
        }
        if m <= d {
            return Err(Error::BatchCountTooSmall { m, d });
        }
        if weights.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidAllocation(
                "weights must be strictly positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidAllocation(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            d,
            m,
            weights,
            allocation,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn batch_count(&self) -> usize {
        self.m
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn allocation(&self) -> &str {
        &self.allocation
    }

    /// Few spare degrees of freedom make the limiting law heavy-tailed and
    /// the quantile estimate slow to settle.
    pub fn heavy_tailed(&self) -> bool {
        self.m - self.d < 5
    }
}

/// Identifies a calibrated quantile. Two quantiles with equal keys were
/// produced by the same simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileKey {
    pub d: usize,
    pub m: usize,
    pub allocation: String,
    pub delta: f64,
    pub reps: usize,
    pub base_seed: u64,
}

impl QuantileKey {
    pub fn describe_shape(&self) -> String {
        format!("d={}, m={}, allocation={}", self.d, self.m, self.allocation)
    }
}

/// Estimated `(1-δ)`-quantile with a distribution-free 95% CI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingQuantile {
    pub alpha_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub key: QuantileKey,
}

impl ScalingQuantile {
    /// Verifies the quantile was calibrated for this `(d, m, allocation)`.
    pub fn check_shape(&self, d: usize, m: usize, allocation: &Allocation) -> Result<()> {
        let required = format!("d={d}, m={m}, allocation={}", allocation.descriptor());
        if self.key.describe_shape() != required {
            return Err(Error::KeyMismatch {
                calibrated: self.key.describe_shape(),
                required,
            });
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.key.delta
    }
}

/// `g_m` on a Brownian skeleton:
/// `(m-1)^{-1} Σ (D_i/w_i - B(1))(D_i/w_i - B(1))ᵀ` with `B(1) = Σ D_i`.
pub fn g_of_skeleton(increments: &[Vec<f64>], weights: &[f64]) -> Result<SymMatrix> {
    let m = increments.len();
    if weights.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: weights.len(),
        });
    }
    if m < 2 {
        return Err(Error::InvalidBatchCount(m));
    }
    let d = increments[0].len();
    if d == 0 {
        return Err(Error::InvalidDimension(0));
    }
    if let Some(bad) = increments.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let flat: Vec<f64> = increments.iter().flatten().copied().collect();
    let mut scratch = vec![0.0; 2 * d];
    let mut g = SymMatrix::zeros(d)?;
    accumulate_g(&flat, weights, d, &mut scratch, &mut g);
    Ok(g)
}

/// Core of [`g_of_skeleton`] over a flat `m × d` increment buffer.
fn accumulate_g(flat: &[f64], weights: &[f64], d: usize, scratch: &mut [f64], g: &mut SymMatrix) {
    let m = weights.len();
    let (b1, dev) = scratch.split_at_mut(d);
    b1.fill(0.0);
    for inc in flat.chunks_exact(d) {
        for (b, x) in b1.iter_mut().zip(inc) {
            *b += x;
        }
    }
    g.scale(0.0);
    for (inc, w) in flat.chunks_exact(d).zip(weights) {
        for ((o, x), b) in dev.iter_mut().zip(inc).zip(b1.iter()) {
            *o = x / w - b;
        }
        g.add_outer(dev, 1.0);
    }
    g.scale(1.0 / (m - 1) as f64);
}

/// Reusable buffers for repeated limit draws.
struct LimitSampler<'a> {
    spec: &'a LimitDrawSpec,
    sqrt_w: Vec<f64>,
    increments: Vec<f64>,
    z: Vec<f64>,
    scratch: Vec<f64>,
    g: SymMatrix,
    scaling: f64,
}

impl<'a> LimitSampler<'a> {
    fn new(spec: &'a LimitDrawSpec) -> Self {
        Self {
            spec,
            sqrt_w: spec.weights.iter().map(|w| w.sqrt()).collect(),
            increments: vec![0.0; spec.m * spec.d],
            z: vec![0.0; spec.d],
            scratch: vec![0.0; 2 * spec.d],
            g: SymMatrix::zeros(spec.d).expect("spec dimension is positive"),
            scaling: f_scaling(spec.m, spec.d),
        }
    }

    fn skeleton(&mut self, stream: &mut RandomStream) {
        let d = self.spec.d;
        for (inc, sw) in self.increments.chunks_exact_mut(d).zip(&self.sqrt_w) {
            for x in inc {
                *x = sw * stream.std_normal();
            }
        }
        accumulate_g(
            &self.increments,
            &self.spec.weights,
            d,
            &mut self.scratch,
            &mut self.g,
        );
    }

    fn draw(&mut self, stream: &mut RandomStream) -> Result<f64> {
        for _attempt in 0..2 {
            self.skeleton(stream);
            stream.fill_std_normal(&mut self.z);
            if let Ok(factor) = cholesky(&self.g) {
                return Ok(self.scaling * quad_form_with(&factor, &self.z));
            }
        }
        Err(Error::DegenerateDraw)
    }

    fn det_sqrt_draw(&mut self, stream: &mut RandomStream) -> f64 {
        self.skeleton(stream);
        crate::linalg::det_sqrt(&self.g)
    }
}

/// One draw of `m(m-d)/(d(m-1)) Zᵀ g_m(B, w)^{-1} Z`.
///
/// Increments are drawn first (batch by batch), then Z. A singular shape
/// matrix is resampled once before giving up.
pub fn simulate_limit_draw(spec: &LimitDrawSpec, stream: &mut RandomStream) -> Result<f64> {
    LimitSampler::new(spec).draw(stream)
}

/// `reps` draws of the limiting statistic from chunked streams of `base_seed`.
pub fn simulate_limit_sample(
    spec: &LimitDrawSpec,
    reps: usize,
    base_seed: u64,
) -> Result<Vec<f64>> {
    let chunks = reps.div_ceil(CHUNK_SIZE);
    let parts: Result<Vec<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = CHUNK_SIZE.min(reps - c * CHUNK_SIZE);
            let mut stream = derive_stream(base_seed, c as u64);
            let mut sampler = LimitSampler::new(spec);
            (0..n).map(|_| sampler.draw(&mut stream)).collect()
        })
        .collect();
    Ok(parts?.concat())
}

/// `reps` draws of `det(g_m(B, w))^{1/2}`, chunked like [`simulate_limit_sample`].
pub fn simulate_det_sqrt_sample(spec: &LimitDrawSpec, reps: usize, base_seed: u64) -> Vec<f64> {
    let chunks = reps.div_ceil(CHUNK_SIZE);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let n = CHUNK_SIZE.min(reps - c * CHUNK_SIZE);
            let mut stream = derive_stream(base_seed, c as u64);
            let mut sampler = LimitSampler::new(spec);
            (0..n)
                .map(move |_| sampler.det_sqrt_draw(&mut stream))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Empirical quantile of a sample together with its 95% binomial
/// order-statistic confidence interval: `(estimate, low, high)`.
///
/// The estimate is the order statistic `⌈p n⌉`; the interval endpoints are
/// the order statistics `⌊np ∓ z√(np(1-p))⌋`/`⌈…⌉` clamped to `1..=n`.
pub fn order_statistic_quantile(sample: &mut [f64], p: f64) -> (f64, f64, f64) {
    let n = sample.len();
    assert!(n > 0, "empty sample");
    sample.sort_unstable_by(f64::total_cmp);
    let nf = n as f64;
    let center = nf * p;
    let k = ((center - 1e-9).ceil() as usize).clamp(1, n);
    let half = Z_975 * (center * (1.0 - p)).sqrt();
    let lo = ((center - half).floor() as usize).clamp(1, n);
    let hi = ((center + half).ceil() as usize).clamp(1, n);
    (sample[k - 1], sample[lo - 1], sample[hi - 1])
}

/// Estimates α_m(δ, w) as the empirical (1-δ)-quantile of `reps` draws.
pub fn estimate_alpha(
    spec: &LimitDrawSpec,
    delta: f64,
    reps: usize,
    base_seed: u64,
) -> Result<ScalingQuantile> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta = {delta} must lie in (0, 1)"
        )));
    }
    if reps < MIN_REPS {
        return Err(Error::InvalidParameter(format!(
            "calibration needs at least {MIN_REPS} replications, got {reps}"
        )));
    }
    let mut sample = simulate_limit_sample(spec, reps, base_seed)?;
    let (alpha_hat, ci_low, ci_high) = order_statistic_quantile(&mut sample, 1.0 - delta);
    Ok(ScalingQuantile {
        alpha_hat,
        ci_low,
        ci_high,
        key: QuantileKey {
            d: spec.d,
            m: spec.m,
            allocation: spec.allocation.clone(),
            delta,
            reps,
            base_seed,
        },
    })
}
