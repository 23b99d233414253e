//! Time savers: target sampling, plateau-based early stopping and the two
//! caches that let later trials reuse work from earlier ones.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// `ceil(fraction * n)` distinct row indices in ascending order; the whole
/// range when `fraction` is 1.
pub fn sample_targets(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("sampling fraction {fraction} not in (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok((0..n).collect());
    }
    let m = sample_size(n, fraction);
    let mut rng = rng_for(seed, &[0x5a3e]);
    let mut idx = sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn sample_size(n: usize, fraction: f64) -> usize {
    // The epsilon absorbs products like 0.1 * 30 = 3.0000000000000004.
    (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopSettings {
    pub relative_threshold: f64,
    pub patience: usize,
    pub min_samples: usize,
}

impl StopSettings {
    pub const METRIC: Self = Self {
        relative_threshold: 0.005,
        patience: 10,
        min_samples: 20,
    };
    pub const HPO: Self = Self {
        relative_threshold: 0.001,
        patience: 8,
        min_samples: 5,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.relative_threshold > 0.0) || self.patience == 0 {
            return Err(Error::InvalidArgument(format!(
                "stop controller needs threshold > 0 and patience >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Fires once the monitored value has changed by less than the relative
/// threshold for `patience` consecutive observations past `min_samples`.
#[derive(Debug, Clone)]
pub struct StopController {
    settings: StopSettings,
    seen: usize,
    previous: Option<f64>,
    streak: usize,
}

impl StopController {
    pub fn new(settings: StopSettings) -> Result<Self> {
        settings.validate()?;
        Ok(Self {
            settings,
            seen: 0,
            previous: None,
            streak: 0,
        })
    }

    pub fn observe(&mut self, value: f64) -> Decision {
        self.seen += 1;
        if let Some(prev) = self.previous {
            let change = (value - prev).abs() / prev.abs().max(1e-12);
            if self.seen > self.settings.min_samples && change < self.settings.relative_threshold {
                self.streak += 1;
            } else {
                self.streak = 0;
            }
        }
        self.previous = Some(value);
        if self.streak >= self.settings.patience {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }

    pub fn observations(&self) -> usize {
        self.seen
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    pub stored: usize,
}

#[derive(Debug, Default)]
struct Counters {
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl Counters {
    fn record<T>(&self, found: Option<T>) -> Option<T> {
        let c = if found.is_some() { &self.hits } else { &self.misses };
        c.fetch_add(1, Ordering::Relaxed);
        found
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub point: Vec<f64>,
    pub ratio: f64,
}

/// Best robustness probe per (solution, target), shared across trials.
#[derive(Debug, Default)]
pub struct RobustnessMaximaCache {
    entries: Mutex<HashMap<(String, usize), Maximum>>,
    counters: Counters,
}

impl RobustnessMaximaCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, solution: &str, target: usize) -> Option<Maximum> {
        let found = self.entries.lock().unwrap().get(&(solution.to_string(), target)).cloned();
        self.counters.record(found)
    }

    /// Keeps whichever of the stored and offered entries has the larger ratio.
    pub fn put_if_better(&self, solution: &str, target: usize, candidate: Maximum) {
        let mut map = self.entries.lock().unwrap();
        let slot = map.entry((solution.to_string(), target));
        use std::collections::hash_map::Entry;
        match slot {
            Entry::Occupied(mut e) => {
                if candidate.ratio > e.get().ratio {
                    e.insert(candidate);
                }
            }
            Entry::Vacant(e) => {
                e.insert(candidate);
            }
        }
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.counters.hits.load(Ordering::Relaxed),
            misses: self.counters.misses.load(Ordering::Relaxed),
            stored: self.entries.lock().unwrap().len(),
        }
    }
}

/// Perturbations `I` and model values `f(x - I)` for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    /// Row-major, one perturbation of length d per row.
    pub offsets: Vec<f64>,
    pub values: Vec<f64>,
}

/// Write-once store keyed by (target, seed).
#[derive(Debug, Default)]
pub struct InfidelityPerturbationCache {
    entries: Mutex<HashMap<(usize, u64), Arc<PerturbationSet>>>,
    counters: Counters,
}

impl InfidelityPerturbationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, target: usize, seed: u64) -> Option<Arc<PerturbationSet>> {
        let found = self.entries.lock().unwrap().get(&(target, seed)).cloned();
        self.counters.record(found)
    }

    pub fn put_if_absent(&self, target: usize, seed: u64, set: Arc<PerturbationSet>) {
        self.entries.lock().unwrap().entry((target, seed)).or_insert(set);
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.counters.hits.load(Ordering::Relaxed),
            misses: self.counters.misses.load(Ordering::Relaxed),
            stored: self.entries.lock().unwrap().len(),
        }
    }
}
