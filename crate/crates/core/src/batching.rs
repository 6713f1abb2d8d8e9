//! Batch plans, streaming batch means, and the batch-means statistic.
//!
//! A plan partitions iterations `1..=T` into `m` contiguous batches with
//! integer boundaries `0 = τ_0 < τ_1 < … < τ_m = T`. Boundaries are obtained by
//! rounding `T·c_i` (cumulative weights) to the nearest integer and then
//! repairing collisions, which keeps the partition exact where per-batch
//! ceilings would overshoot T.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, quad_form_with, SymMatrix};
use crate::sgd::PathObserver;

/// How the T iterates are split across batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Allocation {
    /// Increasing batch sizes, `τ_i = (i/m)^{1/(1-r)} T`.
    Ibs { r: f64 },
    /// Even split.
    Es,
    /// IBS batch sizes in reverse order.
    Dbs { r: f64 },
    /// User weights, normalized to sum to one.
    Custom { weights: Vec<f64> },
}

impl Allocation {
    /// IBS keyed to a step exponent. Exponents in `[1/2, 1)` are accepted:
    /// the allocation formula is well defined at the closed end even though
    /// step schedules are not.
    pub fn ibs(r: f64) -> Result<Self> {
        check_exponent(r)?;
        Ok(Allocation::Ibs { r })
    }

    pub fn dbs(r: f64) -> Result<Self> {
        check_exponent(r)?;
        Ok(Allocation::Dbs { r })
    }

    pub fn custom(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidAllocation(
                "custom weights must be finite and strictly positive".into(),
            ));
        }
        Ok(Allocation::Custom { weights })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Allocation::Ibs { r } | Allocation::Dbs { r } => check_exponent(*r),
            Allocation::Es => Ok(()),
            Allocation::Custom { weights } => Allocation::custom(weights.clone()).map(|_| ()),
        }
    }

    /// Limiting weights `w_1..w_m` (sum one) used for calibration.
    pub fn nominal_weights(&self, m: usize) -> Result<Vec<f64>> {
        if m < 2 {
            return Err(Error::InvalidBatchCount(m));
        }
        self.validate()?;
        let w = match self {
            Allocation::Es => vec![1.0 / m as f64; m],
            Allocation::Ibs { r } => ibs_weights(m, *r),
            Allocation::Dbs { r } => {
                let mut w = ibs_weights(m, *r);
                w.reverse();
                w
            }
            Allocation::Custom { weights } => {
                if weights.len() != m {
                    return Err(Error::InvalidAllocation(format!(
                        "{} custom weights given for m = {m} batches",
                        weights.len()
                    )));
                }
                let total: f64 = weights.iter().sum();
                weights.iter().map(|w| w / total).collect()
            }
        };
        Ok(w)
    }

    /// Stable text key, used to match calibrated quantiles with plans.
    pub fn descriptor(&self) -> String {
        match self {
            Allocation::Es => "es".to_string(),
            Allocation::Ibs { r } => format!("ibs(r={r})"),
            Allocation::Dbs { r } => format!("dbs(r={r})"),
            Allocation::Custom { weights } => {
                let total: f64 = weights.iter().sum();
                let mut h: u64 = 0xcbf2_9ce4_8422_2325;
                for w in weights {
                    for b in (w / total).to_bits().to_le_bytes() {
                        h ^= u64::from(b);
                        h = h.wrapping_mul(0x0100_0000_01b3);
                    }
                }
                format!("custom(m={},hash={h:016x})", weights.len())
            }
        }
    }
}

fn check_exponent(r: f64) -> Result<()> {
    if !(0.5..1.0).contains(&r) {
        return Err(Error::InvalidAllocation(format!(
            "allocation exponent r = {r} must lie in [1/2, 1)"
        )));
    }
    Ok(())
}

fn ibs_cumulative(i: usize, m: usize, r: f64) -> f64 {
    (i as f64 / m as f64).powf(1.0 / (1.0 - r))
}

fn ibs_weights(m: usize, r: f64) -> Vec<f64> {
    (1..=m)
        .map(|i| ibs_cumulative(i, m, r) - ibs_cumulative(i - 1, m, r))
        .collect()
}

/// Integer batch boundaries for a run of length T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    t: usize,
    boundaries: Vec<usize>,
    allocation: Allocation,
}

impl BatchPlan {
    pub fn total(&self) -> usize {
        self.t
    }

    pub fn batch_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn allocation(&self) -> &Allocation {
        &self.allocation
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Realized weights `b_i / T`.
    pub fn weights(&self) -> Vec<f64> {
        let t = self.t as f64;
        self.sizes().into_iter().map(|b| b as f64 / t).collect()
    }

    /// Realized cumulative weights `τ_i / T`; the last entry is exactly 1.
    pub fn cumulative(&self) -> Vec<f64> {
        let t = self.t as f64;
        self.boundaries.iter().map(|&b| b as f64 / t).collect()
    }
}

/// Builds the batch boundaries for `t` iterations split into `m` batches.
pub fn make_plan(t: usize, m: usize, allocation: &Allocation) -> Result<BatchPlan> {
    if m < 2 {
        return Err(Error::InvalidBatchCount(m));
    }
    allocation.validate()?;
    if t < m {
        return Err(Error::BatchTooSmall { t, m });
    }
    let boundaries = match allocation {
        Allocation::Es => (0..=m).map(|i| (2 * i * t + m) / (2 * m)).collect(),
        Allocation::Ibs { r } => {
            let raw: Vec<usize> = (0..=m)
                .map(|i| (ibs_cumulative(i, m, *r) * t as f64).round() as usize)
                .collect();
            repair(raw, t)
        }
        Allocation::Dbs { r } => {
            let ibs = make_plan(t, m, &Allocation::Ibs { r: *r })?;
            let mut sizes = ibs.sizes();
            sizes.reverse();
            let mut b = Vec::with_capacity(m + 1);
            b.push(0);
            for s in sizes {
                b.push(b.last().unwrap() + s);
            }
            b
        }
        Allocation::Custom { .. } => {
            let w = allocation.nominal_weights(m)?;
            let mut raw = Vec::with_capacity(m + 1);
            raw.push(0);
            let mut c = 0.0;
            for wi in &w {
                c += wi;
                raw.push((c * t as f64).round() as usize);
            }
            repair(raw, t)
        }
    };
    let plan = BatchPlan {
        t,
        boundaries,
        allocation: allocation.clone(),
    };
    debug_assert!(plan.sizes().iter().all(|&s| s >= 1));
    debug_assert_eq!(*plan.boundaries.last().unwrap(), t);
    Ok(plan)
}

/// Pins the endpoints and enforces strict monotonicity: collisions are shifted
/// forward, then anything pushed against `T` is pulled back.
fn repair(mut b: Vec<usize>, t: usize) -> Vec<usize> {
    let m = b.len() - 1;
    b[0] = 0;
    b[m] = t;
    for i in 1..m {
        b[i] = b[i].max(b[i - 1] + 1);
    }
    for i in (1..m).rev() {
        b[i] = b[i].min(b[i + 1] - 1);
    }
    b
}

/// Batch means of one sample path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMeansSummary {
    plan: BatchPlan,
    xi: Vec<Vec<f64>>,
    xbar: Vec<f64>,
}

impl BatchMeansSummary {
    /// Assembles a summary from precomputed means (e.g. independent sections).
    pub fn from_parts(plan: BatchPlan, xi: Vec<Vec<f64>>, xbar: Vec<f64>) -> Result<Self> {
        if xi.len() != plan.batch_count() {
            return Err(Error::DimensionMismatch {
                expected: plan.batch_count(),
                got: xi.len(),
            });
        }
        let d = xbar.len();
        if d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if let Some(bad) = xi.iter().find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Ok(Self { plan, xi, xbar })
    }

    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }

    pub fn batch_means(&self) -> &[Vec<f64>] {
        &self.xi
    }

    pub fn mean(&self) -> &[f64] {
        &self.xbar
    }

    pub fn dim(&self) -> usize {
        self.xbar.len()
    }

    pub fn batch_count(&self) -> usize {
        self.plan.batch_count()
    }
}

/// Streaming batch-means accumulator; holds O(m·d) state.
#[derive(Debug, Clone)]
pub struct BatchAccumulator {
    plan: BatchPlan,
    d: usize,
    sums: Vec<Vec<f64>>,
    total: Vec<f64>,
    fed: usize,
    batch: usize,
}

impl BatchAccumulator {
    pub fn new(plan: BatchPlan, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let m = plan.batch_count();
        Ok(Self {
            plan,
            d,
            sums: vec![vec![0.0; d]; m],
            total: vec![0.0; d],
            fed: 0,
            batch: 0,
        })
    }

    pub fn fed(&self) -> usize {
        self.fed
    }

    pub fn feed(&mut self, x: &[f64]) -> Result<()> {
        if self.fed == self.plan.t {
            return Err(Error::FeedCountMismatch {
                expected: self.plan.t,
                got: self.fed + 1,
            });
        }
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        self.fed += 1;
        while self.fed > self.plan.boundaries[self.batch + 1] {
            self.batch += 1;
        }
        for ((s, tot), v) in self.sums[self.batch].iter_mut().zip(&mut self.total).zip(x) {
            *s += v;
            *tot += v;
        }
        Ok(())
    }

    pub fn finalize(self) -> Result<BatchMeansSummary> {
        if self.fed != self.plan.t {
            return Err(Error::FeedCountMismatch {
                expected: self.plan.t,
                got: self.fed,
            });
        }
        let sizes = self.plan.sizes();
        let xi = self
            .sums
            .into_iter()
            .zip(&sizes)
            .map(|(s, &b)| s.into_iter().map(|v| v / b as f64).collect())
            .collect();
        let t = self.plan.t as f64;
        let xbar = self.total.into_iter().map(|v| v / t).collect();
        Ok(BatchMeansSummary {
            plan: self.plan,
            xi,
            xbar,
        })
    }
}

impl PathObserver for BatchAccumulator {
    fn observe(&mut self, x: &[f64]) -> Result<()> {
        self.feed(x)
    }
}

/// `S_m(T) = (m-1)^{-1} Σ (Ξ_i - X̄)(Ξ_i - X̄)ᵀ`.
pub fn sample_cov(summary: &BatchMeansSummary) -> SymMatrix {
    let d = summary.dim();
    let m = summary.batch_count();
    let mut s = SymMatrix::zeros(d).expect("summary dimension is positive");
    let mut dev = vec![0.0; d];
    for xi in &summary.xi {
        for ((o, a), b) in dev.iter_mut().zip(xi).zip(&summary.xbar) {
            *o = a - b;
        }
        s.add_outer(&dev, 1.0);
    }
    s.scale(1.0 / (m - 1) as f64);
    s
}

/// Per-coordinate batch-means standard deviations, `sqrt(diag S_m(T))`.
pub fn coordinate_sigmas(summary: &BatchMeansSummary) -> Vec<f64> {
    let m = summary.batch_count();
    (0..summary.dim())
        .map(|k| {
            let ss: f64 = summary
                .xi
                .iter()
                .map(|xi| (xi[k] - summary.xbar[k]).powi(2))
                .sum();
            (ss / (m - 1) as f64).sqrt()
        })
        .collect()
}

/// `m(m-d) / (d(m-1))`, the F-type normalization of the quadratic form.
pub fn f_scaling(m: usize, d: usize) -> f64 {
    let (m, d) = (m as f64, d as f64);
    m * (m - d) / (d * (m - 1.0))
}

/// `Γ_T = m(m-d)/(d(m-1)) · (X̄_T - x)ᵀ S_m(T)^{-1} (X̄_T - x)`.
pub fn gamma_statistic(summary: &BatchMeansSummary, x_ref: &[f64]) -> Result<f64> {
    let d = summary.dim();
    let m = summary.batch_count();
    if m <= d {
        return Err(Error::BatchCountTooSmall { m, d });
    }
    if x_ref.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x_ref.len(),
        });
    }
    let factor = cholesky(&sample_cov(summary)).map_err(|_| Error::DegenerateCovariance)?;
    let diff: Vec<f64> = summary.xbar.iter().zip(x_ref).map(|(a, b)| a - b).collect();
    Ok(f_scaling(m, d) * quad_form_with(&factor, &diff))
}
