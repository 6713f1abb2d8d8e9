//! Persistent store of calibrated quantiles.
//!
//! The file is a JSON document with one record per [`QuantileKey`]. Writes go
//! to a sibling temporary file that is then renamed over the target, so a
//! crash never leaves a half-written cache behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{estimate_alpha, LimitDrawSpec, QuantileKey, ScalingQuantile};
use crate::error::{Error, Result};

/// Environment variable that overrides the cache location in the CLI.
pub const CACHE_ENV_VAR: &str = "BATCHMEANS_CACHE";

const FORMAT_TAG: &str = "batchmeans-quantile-cache";

#[derive(Debug, Serialize, Deserialize)]
struct CacheFile {
    format: String,
    version: u32,
    records: Vec<ScalingQuantile>,
}

#[derive(Debug, Clone, Default)]
pub struct QuantileCache {
    path: Option<PathBuf>,
    records: Vec<ScalingQuantile>,
}

impl QuantileCache {
    /// Cache that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a cache file; a missing file yields an empty cache bound to `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let records = if path.exists() {
            let text = fs::read_to_string(&path)?;
            let file: CacheFile = serde_json::from_str(&text).map_err(|e| {
                Error::ParseError(format!("quantile cache {}: {e}", path.display()))
            })?;
            if file.format != FORMAT_TAG {
                return Err(Error::ParseError(format!(
                    "{} is not a quantile cache (format tag {:?})",
                    path.display(),
                    file.format
                )));
            }
            file.records
        } else {
            Vec::new()
        };
        Ok(Self {
            path: Some(path),
            records,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn records(&self) -> &[ScalingQuantile] {
        &self.records
    }

    pub fn get(&self, key: &QuantileKey) -> Option<&ScalingQuantile> {
        self.records.iter().find(|r| &r.key == key)
    }

    /// Inserts or replaces the record with the same key.
    pub fn insert(&mut self, q: ScalingQuantile) {
        match self.records.iter_mut().find(|r| r.key == q.key) {
            Some(slot) => *slot = q,
            None => self.records.push(q),
        }
    }

    /// Returns the cached quantile or simulates and stores it.
    /// The boolean is true on a cache hit.
    pub fn get_or_estimate(
        &mut self,
        spec: &LimitDrawSpec,
        delta: f64,
        reps: usize,
        base_seed: u64,
    ) -> Result<(ScalingQuantile, bool)> {
        let key = QuantileKey {
            d: spec.dim(),
            m: spec.batch_count(),
            allocation: spec.allocation().to_string(),
            delta,
            reps,
            base_seed,
        };
        if let Some(hit) = self.get(&key) {
            return Ok((hit.clone(), true));
        }
        let q = estimate_alpha(spec, delta, reps, base_seed)?;
        self.insert(q.clone());
        Ok((q, false))
    }

    /// Writes the cache atomically. In-memory caches are a no-op.
    pub fn save(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut records = self.records.clone();
        records.sort_by(|a, b| {
            (
                a.key.d,
                a.key.m,
                &a.key.allocation,
                a.key.reps,
                a.key.base_seed,
            )
                .cmp(&(
                    b.key.d,
                    b.key.m,
                    &b.key.allocation,
                    b.key.reps,
                    b.key.base_seed,
                ))
                .then(a.key.delta.total_cmp(&b.key.delta))
        });
        let file = CacheFile {
            format: FORMAT_TAG.to_string(),
            version: 1,
            records,
        };
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::Io(format!("serializing quantile cache: {e}")))?;
        let mut tmp = path.clone().into_os_string();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        fs::write(&tmp, text + "\n")?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}
