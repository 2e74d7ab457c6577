use rand::Rng as _;

use crate::seeding::Rng;

/// Fixed-capacity ring buffer; once full, each push overwrites the oldest item.
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

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// `count` uniform draws with replacement.
    pub fn sample(&self, count: usize, rng: &mut Rng) -> Vec<&T> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..count)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}
