use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::encoding::fnv1a64;
use crate::sessions::{Event, EventType};

pub const DEFAULT_TTL_SECONDS: i64 = 3 * 24 * 3600;
pub const DEFAULT_MAX_EVENTS_PER_USER: usize = 200;
const SHARDS: usize = 16;

/// Millisecond wall clock, injectable for tests.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> i64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0)
    }
}

#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start_ms: i64) -> Self {
        ManualClock(AtomicI64::new(start_ms))
    }

    pub fn set(&self, ms: i64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance_ms(&self, ms: i64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn advance_secs(&self, s: i64) {
        self.advance_ms(s * 1000);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for std::sync::Arc<C> {
    fn now_ms(&self) -> i64 {
        (**self).now_ms()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreConfig {
    pub ttl_seconds: i64,
    pub max_events_per_user: usize,
    /// Types kept by the store; empty keeps everything.
    pub allowed_types: Vec<EventType>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            ttl_seconds: DEFAULT_TTL_SECONDS,
            max_events_per_user: DEFAULT_MAX_EVENTS_PER_USER,
            allowed_types: Vec::new(),
        }
    }
}

impl StoreConfig {
    pub fn allows(&self, t: EventType) -> bool {
        t != EventType::Blank && (self.allowed_types.is_empty() || self.allowed_types.contains(&t))
    }
}

#[derive(Debug, Clone)]
struct Entry {
    inserted_ms: i64,
    event: Event,
}

/// Per-user bounded buffers ordered by event timestamp. Entries expire
/// `ttl_seconds` after insertion; when a buffer is full the entry with the
/// earliest timestamp is evicted.
pub struct EventStore<C: Clock = SystemClock> {
    config: StoreConfig,
    clock: C,
    shards: Vec<Mutex<HashMap<String, VecDeque<Entry>>>>,
}

impl<C: Clock> std::fmt::Debug for EventStore<C> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventStore").field("config", &self.config).finish_non_exhaustive()
    }
}

/// Outcome of a single append.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Appended {
    Stored,
    /// Type outside `allowed_types`.
    Skipped,
}

impl EventStore<SystemClock> {
    pub fn new(config: StoreConfig) -> Self {
        Self::with_clock(config, SystemClock)
    }
}

impl<C: Clock> EventStore<C> {
    pub fn with_clock(config: StoreConfig, clock: C) -> Self {
        EventStore {
            config,
            clock,
            shards: (0..SHARDS).map(|_| Mutex::new(HashMap::new())).collect(),
        }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn clock(&self) -> &C {
        &self.clock
    }

    fn shard(&self, id: &str) -> &Mutex<HashMap<String, VecDeque<Entry>>> {
        &self.shards[(fnv1a64(id.as_bytes()) % SHARDS as u64) as usize]
    }

    fn expired(&self, now: i64, e: &Entry) -> bool {
        now - e.inserted_ms > self.config.ttl_seconds * 1000
    }

    pub fn append(&self, event: Event) -> Appended {
        if !self.config.allows(event.event_type) {
            return Appended::Skipped;
        }
        let now = self.clock.now_ms();
        let mut shard = self.shard(&event.anonymous_id).lock().unwrap_or_else(|p| p.into_inner());
        let buf = shard.entry(event.anonymous_id.clone()).or_default();
        buf.retain(|e| !self.expired(now, e));
        let at = buf.partition_point(|e| e.event.timestamp <= event.timestamp);
        buf.insert(
            at,
            Entry {
                inserted_ms: now,
                event,
            },
        );
        while buf.len() > self.config.max_events_per_user {
            buf.pop_front();
        }
        Appended::Stored
    }

    /// Up to `limit` most recent unexpired events, ascending by timestamp,
    /// optionally restricted to `types`.
    pub fn recent(&self, anonymous_id: &str, limit: usize, types: Option<&[EventType]>) -> Vec<Event> {
        let now = self.clock.now_ms();
        let shard = self.shard(anonymous_id).lock().unwrap_or_else(|p| p.into_inner());
        let Some(buf) = shard.get(anonymous_id) else {
            return Vec::new();
        };
        let mut out: Vec<Event> = buf
            .iter()
            .rev()
            .filter(|e| !self.expired(now, e))
            .filter(|e| types.is_none_or(|t| t.contains(&e.event.event_type)))
            .take(limit.min(self.config.max_events_per_user))
            .map(|e| e.event.clone())
            .collect();
        out.reverse();
        out
    }

    /// Drops expired entries and empty users; returns the number of events removed.
    pub fn purge_expired(&self) -> usize {
        let now = self.clock.now_ms();
        let mut removed = 0;
        for shard in &self.shards {
            let mut shard = shard.lock().unwrap_or_else(|p| p.into_inner());
            shard.retain(|_, buf| {
                let before = buf.len();
                buf.retain(|e| !self.expired(now, e));
                removed += before - buf.len();
                !buf.is_empty()
            });
        }
        removed
    }

    pub fn user_count(&self) -> usize {
        self.shards.iter().map(|s| s.lock().unwrap_or_else(|p| p.into_inner()).len()).sum()
    }
}
