use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use super::Transition;
use crate::error::{Error, Result};

/// FIFO experience replay.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Indices of `batch` distinct stored transitions.
    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.items.len() < batch {
            return Err(Error::InsufficientReplay {
                have: self.items.len(),
                need: batch,
            });
        }
        Ok(index::sample(rng, self.items.len(), batch).into_vec())
    }

    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| self.items[i])
            .collect())
    }
}
