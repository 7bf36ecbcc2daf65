//! Two-tier future-event list.
//!
//! Events close to the current time live in a small sorted list; everything
//! further out is appended to an unsorted list in O(1). When the sorted list
//! drains, the far list is split at the mean of its times and the earlier
//! half is sorted into the near list.

use std::cmp::Ordering;

use thiserror::Error;

/// Event code for a policy change.
pub const CODE_CHANGE: i64 = -1;
/// Event code for a monitoring probe.
pub const CODE_PROBE: i64 = -2;
/// Event code for the end of the run.
pub const CODE_END: i64 = -3;

#[derive(Debug, Error, PartialEq)]
pub enum QueueError {
    #[error("event at t={time} scheduled before the last popped time {now}")]
    PastInsert { time: f64, now: f64 },
    #[error("event time {0} is not a finite non-negative number")]
    BadTime(f64),
}

/// A scheduled event: simulated time plus an integer code.
///
/// Codes `>= 1` are updates for service `code - 1`; negative codes are the
/// predefined [`CODE_CHANGE`], [`CODE_PROBE`] and [`CODE_END`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub code: i64,
}

impl Event {
    pub fn update(time: f64, service: u32) -> Self {
        Event {
            time,
            code: i64::from(service) + 1,
        }
    }

    /// The service id for update events, `None` for predefined events.
    pub fn service(&self) -> Option<u32> {
        if self.code >= 1 {
            Some((self.code - 1) as u32)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    time: f64,
    seq: u64,
    code: i64,
}

impl Entry {
    fn key_cmp(&self, other: &Entry) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

/// Counters describing where inserts landed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub near_inserts: u64,
    pub far_inserts: u64,
    pub refills: u64,
    pub peak_len: usize,
}

impl QueueStats {
    pub fn far_fraction(&self) -> f64 {
        let total = self.near_inserts + self.far_inserts;
        if total == 0 {
            0.0
        } else {
            self.far_inserts as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoTierQueue {
    // Sorted descending so the next event is popped from the back.
    near: Vec<Entry>,
    far: Vec<Entry>,
    horizon: f64,
    next_seq: u64,
    last_popped: f64,
    stats: QueueStats,
}

impl Default for TwoTierQueue {
    fn default() -> Self {
        Self::new()
    }
}

impl TwoTierQueue {
    pub fn new() -> Self {
        TwoTierQueue {
            near: Vec::new(),
            far: Vec::new(),
            horizon: 0.0,
            next_seq: 0,
            last_popped: 0.0,
            stats: QueueStats::default(),
        }
    }

    pub fn with_capacity(capacity: usize) -> Self {
        TwoTierQueue {
            far: Vec::with_capacity(capacity),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.near.len() + self.far.len()
    }

    pub fn is_empty(&self) -> bool {
        self.near.is_empty() && self.far.is_empty()
    }

    pub fn near_len(&self) -> usize {
        self.near.len()
    }

    pub fn far_len(&self) -> usize {
        self.far.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn stats(&self) -> QueueStats {
        self.stats
    }

    pub fn insert(&mut self, event: Event) -> Result<(), QueueError> {
        if !event.time.is_finite() || event.time < 0.0 {
            return Err(QueueError::BadTime(event.time));
        }
        if event.time < self.last_popped {
            return Err(QueueError::PastInsert {
                time: event.time,
                now: self.last_popped,
            });
        }
        let entry = Entry {
            time: event.time,
            seq: self.next_seq,
            code: event.code,
        };
        self.next_seq += 1;

        if entry.time <= self.horizon {
            // First index whose entry is not after the new one, in descending order.
            let idx = self
                .near
                .partition_point(|e| e.key_cmp(&entry) == Ordering::Greater);
            self.near.insert(idx, entry);
            self.stats.near_inserts += 1;
        } else {
            self.far.push(entry);
            self.stats.far_inserts += 1;
        }
        self.stats.peak_len = self.stats.peak_len.max(self.len());
        Ok(())
    }

    pub fn pop_next(&mut self) -> Option<Event> {
        if self.near.is_empty() {
            self.refill();
        }
        let entry = self.near.pop()?;
        self.last_popped = entry.time;
        Some(Event {
            time: entry.time,
            code: entry.code,
        })
    }

    pub fn peek_time(&mut self) -> Option<f64> {
        if self.near.is_empty() {
            self.refill();
        }
        self.near.last().map(|e| e.time)
    }

    fn refill(&mut self) {
        if self.far.is_empty() {
            return;
        }
        self.stats.refills += 1;
        let mean = self.far.iter().map(|e| e.time).sum::<f64>() / self.far.len() as f64;
        let mut pivot = mean;
        if !self.far.iter().any(|e| e.time <= pivot) {
            // Rounding can leave the mean below every element when all times are equal.
            pivot = self
                .far
                .iter()
                .map(|e| e.time)
                .fold(f64::NEG_INFINITY, f64::max);
        }
        self.horizon = pivot;

        let mut i = 0;
        while i < self.far.len() {
            if self.far[i].time <= pivot {
                self.near.push(self.far.swap_remove(i));
            } else {
                i += 1;
            }
        }
        self.near.sort_unstable_by(|a, b| b.key_cmp(a));
    }
}
