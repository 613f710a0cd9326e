//! Lazy max-priority queue shared by pair merges and scaffold readmissions.
//!
//! Entries are never updated in place. An entry whose recorded priority no
//! longer matches the current frequency is resolved when it reaches the head:
//! dropped if the frequency is zero, otherwise pushed back at the current
//! frequency. Correctness needs one invariant from the caller: every live item
//! has at least one entry recorded at or above its current frequency, i.e.
//! push again whenever a frequency grows.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::vocabulary::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EntryKind {
    MergePair(TokenId, TokenId),
    Readmit(TokenId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueueEntry {
    pub kind: EntryKind,
    pub priority: u64,
}

impl QueueEntry {
    // Greater wins. At equal priority a readmission beats a merge, and lower
    // ids beat higher ones.
    fn tie_key(&self) -> (u8, Reverse<(u32, u32)>) {
        match self.kind {
            EntryKind::MergePair(a, b) => (0, Reverse((a.0, b.0))),
            EntryKind::Readmit(t) => (1, Reverse((t.0, 0))),
        }
    }
}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .cmp(&other.priority)
            .then_with(|| self.tie_key().cmp(&other.tie_key()))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Source of current frequencies used to validate entries.
pub trait QueueTruth {
    fn pair_freq(&self, left: TokenId, right: TokenId) -> u64;
    /// Current frequency of `t` if it is a scaffold token, `None` otherwise.
    fn scaffold_freq(&self, t: TokenId) -> Option<u64>;
}

#[derive(Debug, Default)]
pub struct MergeQueue {
    heap: BinaryHeap<QueueEntry>,
}

impl MergeQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero-priority entries can never be selected and are not stored.
    pub fn push(&mut self, kind: EntryKind, priority: u64) {
        if priority > 0 {
            self.heap.push(QueueEntry { kind, priority });
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Recorded priority of the head, stale or not.
    pub fn peek_priority(&self) -> Option<u64> {
        self.heap.peek().map(|e| e.priority)
    }

    fn current(truth: &impl QueueTruth, kind: EntryKind) -> u64 {
        match kind {
            EntryKind::MergePair(a, b) => truth.pair_freq(a, b),
            EntryKind::Readmit(t) => truth.scaffold_freq(t).unwrap_or(0),
        }
    }

    /// Pops until an entry matches current truth and returns it. `None`
    /// means the queue is exhausted.
    pub fn pop_valid(&mut self, truth: &impl QueueTruth) -> Option<QueueEntry> {
        while let Some(entry) = self.heap.pop() {
            let now = Self::current(truth, entry.kind);
            if now == entry.priority {
                return Some(entry);
            }
            self.push(entry.kind, now);
        }
        None
    }

    /// Resolves stale entries at the head and returns the head's frequency
    /// without removing it.
    pub fn peek_valid(&mut self, truth: &impl QueueTruth) -> Option<u64> {
        loop {
            let entry = *self.heap.peek()?;
            let now = Self::current(truth, entry.kind);
            if now == entry.priority {
                return Some(now);
            }
            self.heap.pop();
            self.push(entry.kind, now);
        }
    }

    /// `f(Q_head)`, the frequency a component must reach to stay a normal
    /// token. An empty queue yields 1, so only tokens that vanished from the
    /// corpus are demoted.
    pub fn scaffold_threshold(&mut self, truth: &impl QueueTruth) -> u64 {
        self.peek_valid(truth).unwrap_or(1)
    }
}
