use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::Result;
use crate::inference::factor::Factor;
use crate::inference::triangulate::Skeleton;

/// Collect-phase messages and junction-tree skeletons keyed by class
/// fingerprints. Entries are immutable once published and may be shared
/// by any number of hypertrees.
#[derive(Debug, Default)]
pub struct ClassCache {
    messages: Mutex<HashMap<String, Arc<Factor>>>,
    skeletons: Mutex<HashMap<String, Arc<Skeleton>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ClassCache {
    pub fn new() -> Arc<Self> {
        Arc::new(ClassCache::default())
    }

    /// A cached message with its scope given as canonical positions.
    pub fn get(&self, key: &str) -> Option<Factor> {
        let hit = self.messages.lock().unwrap().get(key).cloned();
        match &hit {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        hit.map(|f| (*f).clone())
    }

    pub fn put(&self, key: String, f: Factor) {
        self.messages.lock().unwrap().insert(key, Arc::new(f));
    }

    pub fn skeleton(&self, key: &str, build: impl FnOnce() -> Result<Skeleton>) -> Result<Arc<Skeleton>> {
        if let Some(s) = self.skeletons.lock().unwrap().get(key) {
            return Ok(s.clone());
        }
        let s = Arc::new(build()?);
        self.skeletons.lock().unwrap().insert(key.to_string(), s.clone());
        Ok(s)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.messages.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
