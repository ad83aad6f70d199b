//! Per-run memoization of scoring calls.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

pub type CacheKey = [u8; 32];

/// SHA-256 over the backend id and the request fields, each length-prefixed
/// so that ("ab","c") and ("a","bc") differ.
pub fn cache_key(backend_id: &str, payload: &[&str]) -> CacheKey {
    let mut h = Sha256::new();
    for part in std::iter::once(backend_id).chain(payload.iter().copied()) {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.finalize().into()
}

pub struct ScoreCache<V> {
    map: Mutex<HashMap<CacheKey, V>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<V: Clone> Default for ScoreCache<V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<V: Clone> ScoreCache<V> {
    pub fn new() -> Self {
        Self { map: Mutex::new(HashMap::new()), hits: AtomicU64::new(0), misses: AtomicU64::new(0) }
    }

    /// The lock is not held while `compute` runs, so two workers may compute
    /// the same key concurrently; the first insert wins.
    pub fn get_or_try_insert<E>(
        &self,
        backend_id: &str,
        payload: &[&str],
        compute: impl FnOnce() -> Result<V, E>,
    ) -> Result<V, E> {
        let key = cache_key(backend_id, payload);
        if let Some(v) = self.map.lock().expect("cache poisoned").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let value = compute()?;
        let mut map = self.map.lock().expect("cache poisoned");
        Ok(map.entry(key).or_insert(value).clone())
    }

    pub fn stats(&self) -> (u64, u64) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
