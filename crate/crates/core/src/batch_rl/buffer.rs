use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// One accepted insertion, kept when logging is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsertEvent {
    pub transition: u32,
    pub draw: f64,
    pub logged_action: u8,
    pub greedy_action: u8,
}

/// FIFO buffer of dataset transition indices.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<u32>,
    log: Option<Vec<InsertEvent>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, log: bool) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
            log: log.then(Vec::new),
        }
    }

    pub fn push(&mut self, transition: u32, draw: f64, logged_action: u8, greedy_action: u8) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(transition);
        if let Some(log) = &mut self.log {
            log.push(InsertEvent {
                transition,
                draw,
                logged_action,
                greedy_action,
            });
        }
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

    pub fn items(&self) -> impl Iterator<Item = u32> + '_ {
        self.items.iter().copied()
    }

    pub fn log(&self) -> &[InsertEvent] {
        self.log.as_deref().unwrap_or(&[])
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<u32> {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        (0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}
