//! Memoizing cache for coalition value functions.
//!
//! Every evaluation of a knowledge coalition is potentially a full training
//! run, so values are computed once and reused. Lookups are concurrent;
//! insertion is serialized. Two workers may race to compute the same
//! coalition; the value function is deterministic so whichever result lands
//! first is kept.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::shapley::ValueFunction;
use crate::{Coalition, Error, Result};

const CACHE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Default)]
pub struct EvaluationCache {
    entries: RwLock<HashMap<Coalition, f64>>,
    hits: AtomicU64,
    misses: AtomicU64,
    path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: usize,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    schema_version: u32,
    entries: Vec<CacheFileEntry>,
}

#[derive(Serialize, Deserialize)]
struct CacheFileEntry {
    n_players: usize,
    members: Vec<usize>,
    value: f64,
}

impl EvaluationCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// A cache backed by `path`. Existing entries are loaded; [`save`](Self::save)
    /// writes the current contents back.
    pub fn persistent(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            let file: CacheFile = serde_json::from_slice(&fs::read(&path)?)?;
            if file.schema_version != CACHE_SCHEMA_VERSION {
                return Err(Error::Config(format!(
                    "cache schema version {} is not supported",
                    file.schema_version
                )));
            }
            for e in file.entries {
                let c = Coalition::from_members(e.members, e.n_players)?;
                entries.insert(c, e.value);
            }
        }
        Ok(Self {
            entries: RwLock::new(entries),
            path: Some(path),
            ..Self::default()
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, coalition: &Coalition) -> Option<f64> {
        self.entries.read().unwrap().get(coalition).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            entries: self.len(),
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Stores `value` unless the coalition is already present, and returns
    /// the stored value.
    fn insert(&self, coalition: Coalition, value: f64) -> f64 {
        *self
            .entries
            .write()
            .unwrap()
            .entry(coalition)
            .or_insert(value)
    }

    /// Returns the cached value or computes, stores and returns it. Failed
    /// evaluations are not stored.
    pub fn evaluate<V>(&self, vf: &V, coalition: Coalition) -> Result<f64>
    where
        V: ValueFunction + ?Sized,
    {
        if let Some(v) = self.get(&coalition) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let value = vf.evaluate(coalition)?;
        Ok(self.insert(coalition, value))
    }

    /// Batch form of [`evaluate`](Self::evaluate): all uncached, distinct
    /// coalitions are handed to the value function in one call.
    pub fn evaluate_many<V>(&self, vf: &V, coalitions: &[Coalition]) -> Result<Vec<f64>>
    where
        V: ValueFunction + ?Sized,
    {
        let mut pending = Vec::new();
        {
            let entries = self.entries.read().unwrap();
            let mut seen = HashSet::new();
            for c in coalitions {
                if entries.contains_key(c) {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                } else if seen.insert(*c) {
                    self.misses.fetch_add(1, Ordering::Relaxed);
                    pending.push(*c);
                } else {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        if !pending.is_empty() {
            let values = vf.evaluate_many(&pending)?;
            let mut entries = self.entries.write().unwrap();
            for (c, v) in pending.into_iter().zip(values) {
                entries.entry(c).or_insert(v);
            }
        }
        let entries = self.entries.read().unwrap();
        Ok(coalitions.iter().map(|c| entries[c]).collect())
    }

    /// Entries sorted by player count, then canonical encoding.
    pub fn snapshot(&self) -> Vec<(Coalition, f64)> {
        let mut out: Vec<_> = self
            .entries
            .read()
            .unwrap()
            .iter()
            .map(|(c, v)| (*c, *v))
            .collect();
        out.sort_by_key(|(c, _)| (c.n_players(), c.mask()));
        out
    }

    pub fn save(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Err(Error::Config("cache has no persistence path".into()));
        };
        let file = CacheFile {
            schema_version: CACHE_SCHEMA_VERSION,
            entries: self
                .snapshot()
                .into_iter()
                .map(|(c, value)| CacheFileEntry {
                    n_players: c.n_players(),
                    members: c.member_indices(),
                    value,
                })
                .collect(),
        };
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&file)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }
}

/// A value function routed through an [`EvaluationCache`].
pub struct Cached<'a, V: ?Sized> {
    pub vf: &'a V,
    pub cache: &'a EvaluationCache,
}

impl<'a, V: ValueFunction + ?Sized> Cached<'a, V> {
    pub fn new(vf: &'a V, cache: &'a EvaluationCache) -> Self {
        Self { vf, cache }
    }
}

impl<V: ValueFunction + ?Sized> ValueFunction for Cached<'_, V> {
    fn evaluate(&self, coalition: Coalition) -> Result<f64> {
        self.cache.evaluate(self.vf, coalition)
    }

    fn evaluate_many(&self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        self.cache.evaluate_many(self.vf, coalitions)
    }
}
