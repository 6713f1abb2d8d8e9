//! Batch-means confidence regions for averaged stochastic gradient descent.
//!
//! A single SGD path of length T is split into m batches. The spread of the
//! batch means cancels the unknown asymptotic covariance, and the resulting
//! pivotal statistic is calibrated by simulating its limiting law.
//!
//! ```no_run
//! use batchmeans::{
//!     batching::{make_plan, Allocation, BatchAccumulator},
//!     calibration::{estimate_alpha, LimitDrawSpec},
//!     inference::{build_region, contains},
//!     models::{linear_oracle, linspace_params},
//!     rng::derive_stream,
//!     sgd::{run_sgd, SgdRunConfig},
//! };
//!
//! let x_star = linspace_params(2)?;
//! let alloc = Allocation::ibs(2.0 / 3.0)?;
//! let plan = make_plan(100_000, 30, &alloc)?;
//! let mut acc = BatchAccumulator::new(plan, 2)?;
//! let mut oracle = linear_oracle(x_star.clone());
//! run_sgd(&mut oracle, &SgdRunConfig::new(2, 100_000), &mut derive_stream(1, 0), &mut acc)?;
//! let summary = acc.finalize()?;
//!
//! let spec = LimitDrawSpec::from_allocation(2, 30, &alloc)?;
//! let alpha = estimate_alpha(&spec, 0.05, 100_000, 42)?;
//! let region = build_region(&summary, &alpha)?;
//! println!("covers x*: {}", contains(&region, &x_star)?);
//! # Ok::<(), batchmeans::Error>(())
//! ```

pub mod baselines;
pub mod batching;
pub mod calibration;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod sgd;

pub use error::{Error, Result};
