use std::collections::VecDeque;

use super::StateError;

/// Bound on how much a [`SlidingHistory`] retains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HistoryCapacity {
    /// Keep at most this many entries.
    Count(usize),
    /// Keep entries no older than this many seconds before the newest one.
    ///
    /// The newest entry at or before the cutoff is kept as well so that a
    /// query exactly at the cutoff still resolves.
    MaxAge(f64),
    Unbounded,
}

/// Time-sorted sliding window of `(timestamp, payload)` pairs.
///
/// Timestamps are strictly increasing; inserting at an existing timestamp
/// replaces that entry. Eviction only happens at the oldest end.
#[derive(Clone, Debug)]
pub struct SlidingHistory<T> {
    entries: VecDeque<(f64, T)>,
    capacity: HistoryCapacity,
}

impl<T> SlidingHistory<T> {
    pub fn new(capacity: HistoryCapacity) -> Self {
        Self { entries: VecDeque::new(), capacity }
    }

    pub fn with_max_age(seconds: f64) -> Self {
        Self::new(HistoryCapacity::MaxAge(seconds))
    }

    pub fn capacity(&self) -> HistoryCapacity {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index of the first entry with timestamp > t.
    fn upper_bound(&self, t: f64) -> usize {
        self.entries.partition_point(|(ts, _)| *ts <= t)
    }

    /// Inserts keeping timestamp order; replaces an entry with the same timestamp.
    pub fn insert(&mut self, t: f64, payload: T) {
        let idx = self.upper_bound(t);
        if idx > 0 && self.entries[idx - 1].0 == t {
            self.entries[idx - 1].1 = payload;
        } else {
            self.entries.insert(idx, (t, payload));
        }
        self.evict();
    }

    /// Mutates the entry at exactly `t`, creating it with `init` if absent.
    pub fn upsert_with(&mut self, t: f64, init: impl FnOnce() -> T, update: impl FnOnce(&mut T)) {
        let idx = self.upper_bound(t);
        if idx > 0 && self.entries[idx - 1].0 == t {
            update(&mut self.entries[idx - 1].1);
        } else {
            let mut payload = init();
            update(&mut payload);
            self.entries.insert(idx, (t, payload));
        }
        self.evict();
    }

    fn evict(&mut self) {
        match self.capacity {
            HistoryCapacity::Count(n) => {
                while self.entries.len() > n {
                    self.entries.pop_front();
                }
            }
            HistoryCapacity::MaxAge(age) => {
                let Some(newest) = self.latest_time() else { return };
                let cutoff = newest - age;
                while self.entries.len() > 1 && self.entries[1].0 <= cutoff {
                    self.entries.pop_front();
                }
            }
            HistoryCapacity::Unbounded => {}
        }
    }

    /// Entry with the greatest timestamp `<= t`.
    pub fn query(&self, t: f64) -> Result<(f64, &T), StateError> {
        match self.upper_bound(t) {
            0 => Err(StateError::NoBeliefAt(t)),
            idx => {
                let (ts, p) = &self.entries[idx - 1];
                Ok((*ts, p))
            }
        }
    }

    pub fn latest(&self) -> Option<(f64, &T)> {
        self.entries.back().map(|(t, p)| (*t, p))
    }

    pub fn latest_mut(&mut self) -> Option<&mut T> {
        self.entries.back_mut().map(|(_, p)| p)
    }

    pub fn latest_time(&self) -> Option<f64> {
        self.entries.back().map(|(t, _)| *t)
    }

    pub fn oldest_time(&self) -> Option<f64> {
        self.entries.front().map(|(t, _)| *t)
    }

    /// Drops every entry with timestamp > t.
    pub fn truncate_after(&mut self, t: f64) {
        let idx = self.upper_bound(t);
        self.entries.truncate(idx);
    }

    /// Entries with timestamp strictly greater than `t`, oldest first.
    pub fn iter_after(&self, t: f64) -> impl Iterator<Item = (f64, &T)> {
        let idx = self.upper_bound(t);
        self.entries.range(idx..).map(|(t, p)| (*t, p))
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &T)> {
        self.entries.iter().map(|(t, p)| (*t, p))
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.entries.iter().map(|(t, _)| *t).collect()
    }
}
