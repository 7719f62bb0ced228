//! Bounded experience replay with reward-balanced batch sampling.

use std::collections::VecDeque;

use rand::Rng;

/// One step of experience: the action prefix before the step, the group
/// chosen, the reward for the item it produced, and the successor prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<usize>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<usize>,
    pub terminal: bool,
}

/// Fixed-capacity buffer; pushing past capacity evicts the oldest entry.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity > 0, "replay capacity must be >= 1");
        ReplayBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.entries[i]
    }

    /// Reward threshold at the top quartile of the buffer's rewards.
    fn quartile_threshold(&self) -> f64 {
        let mut rewards: Vec<f64> = self.entries.iter().map(|t| t.reward).collect();
        rewards.sort_by(f64::total_cmp);
        rewards[(3 * (rewards.len() - 1)) / 4]
    }

    /// Draws `batch` transitions with replacement: half from the top reward
    /// quartile, the rest uniformly, so rare high-reward experience stays
    /// represented in every update.
    pub fn sample_balanced<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        assert!(!self.entries.is_empty(), "cannot sample an empty buffer");
        let thr = self.quartile_threshold();
        let high: Vec<usize> = (0..self.entries.len())
            .filter(|&i| self.entries[i].reward >= thr)
            .collect();
        let mut out = Vec::with_capacity(batch);
        // NaN rewards compare false against any threshold and can empty the
        // high set; degrade to uniform draws and let the loss check report it
        if !high.is_empty() {
            for _ in 0..batch / 2 {
                out.push(&self.entries[high[rng.random_range(0..high.len())]]);
            }
        }
        while out.len() < batch {
            out.push(&self.entries[rng.random_range(0..self.entries.len())]);
        }
        out
    }
}
