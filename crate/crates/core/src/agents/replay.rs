use alloc::vec::Vec;

use rand::Rng;

use crate::env::Features;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience {
    pub features: Features,
    pub action: usize,
    pub reward: f64,
    pub next_features: Features,
    /// The goal was reached: no bootstrapping past this entry.
    pub terminal: bool,
    /// Cut off by the step cap: still bootstraps.
    pub truncated: bool,
}

/// Bounded FIFO of experiences; the oldest entry is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Fills `out` with `n` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, out: &mut Vec<usize>) {
        out.clear();
        if self.items.is_empty() {
            return;
        }
        out.extend((0..n).map(|_| rng.gen_range(0..self.items.len())));
    }

    pub fn get(&self, index: usize) -> &T {
        &self.items[index]
    }
}
