//! Averaged stochastic gradient descent driver.
//!
//! The recursion is `X_t = X_{t-1} - γ_t G(X_{t-1}, ζ_t)` with
//! `γ_t = a t^{-r}`. Iterates are handed to a [`PathObserver`] one at a time
//! so a run of length T needs O(d) memory plus whatever the observer keeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Polynomially decaying step sizes `a t^{-r}` with `a > 0`, `1/2 < r < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    a: f64,
    r: f64,
}

impl StepSchedule {
    pub const DEFAULT_SCALE: f64 = 0.5;
    pub const DEFAULT_EXPONENT: f64 = 2.0 / 3.0;

    pub fn new(a: f64, r: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidSchedule(format!(
                "step scale a = {a} must be positive"
            )));
        }
        if !(r > 0.5 && r < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "step exponent r = {r} must lie strictly between 1/2 and 1"
            )));
        }
        Ok(Self { a, r })
    }

    pub fn scale(&self) -> f64 {
        self.a
    }

    pub fn exponent(&self) -> f64 {
        self.r
    }

    /// `γ_t` for a 1-based global iteration index.
    #[inline]
    pub fn step_size(&self, t: usize) -> f64 {
        debug_assert!(t >= 1);
        self.a * (t as f64).powf(-self.r)
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            a: Self::DEFAULT_SCALE,
            r: Self::DEFAULT_EXPONENT,
        }
    }
}

/// Source of stochastic gradients `G(x, ζ)`.
///
/// Implementations are expected (not checked) to be conditionally unbiased
/// for `∇H(x)`. All randomness must come from the supplied stream so runs are
/// reproducible from the stream lineage.
pub trait GradientOracle {
    fn dim(&self) -> usize;

    /// Writes `G(x, ζ_t)` into `out` (length `dim`).
    fn gradient(&mut self, x: &[f64], stream: &mut RandomStream, out: &mut [f64]) -> Result<()>;
}

impl<O: GradientOracle + ?Sized> GradientOracle for Box<O> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn gradient(&mut self, x: &[f64], stream: &mut RandomStream, out: &mut [f64]) -> Result<()> {
        (**self).gradient(x, stream, out)
    }
}

/// Consumer of the post-burn-in iterates, in order.
pub trait PathObserver {
    fn observe(&mut self, x: &[f64]) -> Result<()>;
}

/// Keeps every iterate. Only for tests and small runs.
#[derive(Debug, Default, Clone)]
pub struct PathRecorder {
    pub path: Vec<Vec<f64>>,
}

impl PathObserver for PathRecorder {
    fn observe(&mut self, x: &[f64]) -> Result<()> {
        self.path.push(x.to_vec());
        Ok(())
    }
}

/// Discards iterates.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullObserver;

impl PathObserver for NullObserver {
    fn observe(&mut self, _x: &[f64]) -> Result<()> {
        Ok(())
    }
}

/// Running mean of the observed iterates.
#[derive(Debug, Clone)]
pub struct MeanObserver {
    sum: Vec<f64>,
    count: usize,
}

impl MeanObserver {
    pub fn new(d: usize) -> Self {
        Self {
            sum: vec![0.0; d],
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sum.iter().map(|s| s / n).collect()
    }
}

impl PathObserver for MeanObserver {
    fn observe(&mut self, x: &[f64]) -> Result<()> {
        for (s, v) in self.sum.iter_mut().zip(x) {
            *s += v;
        }
        self.count += 1;
        Ok(())
    }
}

impl<A: PathObserver, B: PathObserver> PathObserver for (A, B) {
    fn observe(&mut self, x: &[f64]) -> Result<()> {
        self.0.observe(x)?;
        self.1.observe(x)
    }
}

impl<P: PathObserver + ?Sized> PathObserver for &mut P {
    fn observe(&mut self, x: &[f64]) -> Result<()> {
        (**self).observe(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdRunConfig {
    /// Number of iterates delivered to the observer.
    pub iterations: usize,
    /// Iterations run first and discarded. They still advance the step index.
    pub burn_in: usize,
    pub x0: Vec<f64>,
    pub schedule: StepSchedule,
}

impl SgdRunConfig {
    /// Zero start, no burn-in, default schedule.
    pub fn new(d: usize, iterations: usize) -> Self {
        Self {
            iterations,
            burn_in: 0,
            x0: vec![0.0; d],
            schedule: StepSchedule::default(),
        }
    }

    pub fn with_schedule(mut self, schedule: StepSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = x0;
        self
    }

    pub fn total_steps(&self) -> usize {
        self.burn_in + self.iterations
    }
}

/// Runs `burn_in + iterations` SGD steps and returns the final iterate.
pub fn run_sgd<O, P>(
    oracle: &mut O,
    config: &SgdRunConfig,
    stream: &mut RandomStream,
    observer: &mut P,
) -> Result<Vec<f64>>
where
    O: GradientOracle + ?Sized,
    P: PathObserver + ?Sized,
{
    if config.iterations < 1 {
        return Err(Error::InvalidParameter(
            "iteration count T must be at least 1".into(),
        ));
    }
    let d = oracle.dim();
    if config.x0.len() != d {
        return Err(Error::OracleDimensionMismatch {
            oracle: d,
            x0: config.x0.len(),
        });
    }
    let mut x = config.x0.clone();
    let mut grad = vec![0.0; d];
    for t in 1..=config.total_steps() {
        oracle.gradient(&x, stream, &mut grad)?;
        let gamma = config.schedule.step_size(t);
        let mut finite = true;
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi -= gamma * gi;
            finite &= xi.is_finite();
        }
        if !finite {
            return Err(Error::NonFiniteIterate { t });
        }
        if t > config.burn_in {
            observer.observe(&x)?;
        }
    }
    Ok(x)
}
