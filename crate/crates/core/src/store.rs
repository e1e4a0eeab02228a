//! Signature-keyed object store with reference counting and byte accounting.
//!
//! Each object is stored with the number of reads the plan will make of it.
//! The object is freed when the last read is released, so `live_bytes` is
//! exactly the working set of a running stage and `peak_bytes` its high-water
//! mark. Objects live in memory only.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::workflow::Signature;

pub type Payload = Arc<[u8]>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("object {0} stored twice")]
    Duplicate(Signature),
    #[error("object {0} is not in the store")]
    Missing(Signature),
    #[error("object {0} read more often than its consumer count")]
    OverConsumed(Signature),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StoreStats {
    pub live_bytes: u64,
    pub peak_bytes: u64,
    pub put_count: usize,
    pub get_count: usize,
    pub released_count: usize,
}

struct Entry {
    payload: Payload,
    remaining: usize,
}

const SHARDS: usize = 16;

pub struct DataStore {
    shards: Vec<Mutex<HashMap<Signature, Entry>>>,
    live: AtomicU64,
    peak: AtomicU64,
    puts: AtomicUsize,
    gets: AtomicUsize,
    released: AtomicUsize,
}

impl Default for DataStore {
    fn default() -> Self {
        DataStore::new()
    }
}

impl DataStore {
    pub fn new() -> Self {
        DataStore {
            shards: (0..SHARDS).map(|_| Mutex::new(HashMap::new())).collect(),
            live: AtomicU64::new(0),
            peak: AtomicU64::new(0),
            puts: AtomicUsize::new(0),
            gets: AtomicUsize::new(0),
            released: AtomicUsize::new(0),
        }
    }

    fn shard(&self, key: &Signature) -> &Mutex<HashMap<Signature, Entry>> {
        &self.shards[(key.0 % SHARDS as u128) as usize]
    }

    /// Stores `payload` under `key` for `consumers` future reads. An object
    /// with zero consumers stays until [`DataStore::sweep`].
    pub fn put(
        &self,
        key: Signature,
        payload: Payload,
        consumers: usize,
    ) -> Result<(), StoreError> {
        let size = payload.len() as u64;
        {
            let mut shard = self.shard(&key).lock().unwrap();
            if shard.contains_key(&key) {
                return Err(StoreError::Duplicate(key));
            }
            shard.insert(
                key,
                Entry {
                    payload,
                    remaining: consumers,
                },
            );
            let now = self.live.fetch_add(size, Ordering::SeqCst) + size;
            self.peak.fetch_max(now, Ordering::SeqCst);
        }
        self.puts.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Reads an object without consuming one of its reads.
    pub fn get(&self, key: &Signature) -> Result<Payload, StoreError> {
        let shard = self.shard(key).lock().unwrap();
        let entry = shard.get(key).ok_or(StoreError::Missing(*key))?;
        if entry.remaining == 0 {
            return Err(StoreError::OverConsumed(*key));
        }
        Ok(entry.payload.clone())
    }

    /// Consumes one read; frees the object when none remain.
    pub fn release(&self, key: &Signature) -> Result<(), StoreError> {
        let mut shard = self.shard(key).lock().unwrap();
        let entry = shard.get_mut(key).ok_or(StoreError::Missing(*key))?;
        if entry.remaining == 0 {
            return Err(StoreError::OverConsumed(*key));
        }
        entry.remaining -= 1;
        self.gets.fetch_add(1, Ordering::Relaxed);
        if entry.remaining == 0 {
            let size = entry.payload.len() as u64;
            shard.remove(key);
            self.live.fetch_sub(size, Ordering::SeqCst);
            self.released.fetch_add(1, Ordering::Relaxed);
        }
        Ok(())
    }

    pub fn get_and_release(&self, key: &Signature) -> Result<Payload, StoreError> {
        let payload = self.get(key)?;
        self.release(key)?;
        Ok(payload)
    }

    /// Frees every object whose consumer count is zero; returns how many.
    pub fn sweep(&self) -> usize {
        let mut freed = 0;
        for shard in &self.shards {
            let mut shard = shard.lock().unwrap();
            shard.retain(|_, e| {
                if e.remaining == 0 {
                    self.live
                        .fetch_sub(e.payload.len() as u64, Ordering::SeqCst);
                    freed += 1;
                    false
                } else {
                    true
                }
            });
        }
        self.released.fetch_add(freed, Ordering::Relaxed);
        freed
    }

    /// Drops the given keys regardless of pending reads (used when a stage aborts).
    pub fn purge<'a>(&self, keys: impl IntoIterator<Item = &'a Signature>) {
        for key in keys {
            let mut shard = self.shard(key).lock().unwrap();
            if let Some(e) = shard.remove(key) {
                self.live
                    .fetch_sub(e.payload.len() as u64, Ordering::SeqCst);
                self.released.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    pub fn contains(&self, key: &Signature) -> bool {
        self.shard(key).lock().unwrap().contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.shards.iter().map(|s| s.lock().unwrap().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn live_bytes(&self) -> u64 {
        self.live.load(Ordering::SeqCst)
    }

    pub fn peak_bytes(&self) -> u64 {
        self.peak.load(Ordering::SeqCst)
    }

    /// Restarts peak tracking from the current live level.
    pub fn reset_peak(&self) {
        self.peak.store(self.live_bytes(), Ordering::SeqCst);
    }

    pub fn stats(&self) -> StoreStats {
        StoreStats {
            live_bytes: self.live_bytes(),
            peak_bytes: self.peak_bytes(),
            put_count: self.puts.load(Ordering::Relaxed),
            get_count: self.gets.load(Ordering::Relaxed),
            released_count: self.released.load(Ordering::Relaxed),
        }
    }
}
