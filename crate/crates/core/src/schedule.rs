//! Types shared by the two tree schedulers.

use std::collections::VecDeque;

use thiserror::Error;

use crate::steiner::{SteinerError, Tree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error(transparent)]
    Steiner(#[from] SteinerError),
    #[error("session {session}: approximation ratio {ratio} exceeds gamma {gamma}")]
    RatioViolation { session: usize, ratio: f64, gamma: f64 },
    #[error("{0}")]
    Config(String),
}

/// Real traffic handed to the data plane for one session in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub session: usize,
    pub tree: Tree,
    pub amount: f64,
}

/// What a scheduler decided for one session in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRecord {
    pub tree: Tree,
    /// Cost of the selected tree under the costs the scheduler saw.
    pub cost: f64,
    /// Exact minimum cost under the same costs, when it was computed.
    pub optimum: Option<f64>,
    /// `cost / optimum` (`0/0 = 1`).
    pub ratio: Option<f64>,
    /// Randomized scheduler: previous tree's cost under the current costs.
    pub previous_cost: Option<f64>,
    /// Randomized scheduler: the candidate's cost.
    pub candidate_cost: Option<f64>,
    /// Randomized scheduler: the candidate came from min-cost injection.
    pub injected: bool,
}

impl SelectionRecord {
    /// Whether the pick-stage candidate was a min-cost tree.
    pub fn candidate_was_min(&self) -> Option<bool> {
        let (c, opt) = (self.candidate_cost?, self.optimum?);
        Some(c <= opt + 1e-9 * (1.0 + opt.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlotOutput {
    pub emissions: Vec<Emission>,
    pub records: Vec<SelectionRecord>,
    /// Traffic signaled into each virtual queue this slot.
    pub virtual_arrivals: Vec<f64>,
}

/// Remembers recent virtual-queue vectors so tree selection can act on
/// stale link costs.
#[derive(Debug, Clone)]
pub struct DelayLine {
    delay: usize,
    history: VecDeque<Vec<f64>>,
}

impl DelayLine {
    pub fn new(delay: usize) -> Self {
        Self { delay, history: VecDeque::with_capacity(delay + 1) }
    }

    /// Records the current vector and returns the one `delay` slots old (the
    /// oldest available while the run is younger than the delay).
    pub fn observe(&mut self, current: &[f64]) -> &[f64] {
        if self.history.len() > self.delay {
            let mut recycled = self.history.pop_front().unwrap_or_default();
            recycled.clear();
            recycled.extend_from_slice(current);
            self.history.push_back(recycled);
        } else {
            self.history.push_back(current.to_vec());
        }
        &self.history[0]
    }
}
