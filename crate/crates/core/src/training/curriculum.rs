//! Per-worker maze-size curriculum.

use std::collections::VecDeque;

pub const WINDOW: usize = 50;

/// One curriculum level: maze size and the moving-average step count that
/// must be beaten to leave it.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Stage {
    pub size: usize,
    pub threshold: f64,
}

pub fn default_stages() -> Vec<Stage> {
    [(5, 60.0), (7, 100.0), (9, 140.0), (11, 180.0), (13, 220.0)]
        .into_iter()
        .map(|(size, threshold)| Stage { size, threshold })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurriculumEvent {
    Stay,
    Promoted { from: usize, to: usize },
    /// The last size passed; the worker stops.
    Finished,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CurriculumState {
    /// Stages in promotion order.
    pub stages: Vec<Stage>,
    pub level: usize,
    pub recent: VecDeque<usize>,
    pub done: bool,
}

impl CurriculumState {
    /// Starts at the stage of size `start`.
    pub fn new(stages: Vec<Stage>, start: usize) -> Option<Self> {
        let level = stages.iter().position(|s| s.size == start)?;
        Some(CurriculumState { stages, level, recent: VecDeque::with_capacity(WINDOW), done: false })
    }

    pub fn size(&self) -> usize {
        self.stages[self.level].size
    }

    pub fn moving_average(&self) -> Option<f64> {
        if self.recent.is_empty() {
            None
        } else {
            Some(self.recent.iter().sum::<usize>() as f64 / self.recent.len() as f64)
        }
    }

    /// Records one finished episode. Promotion needs a full window whose mean
    /// is strictly below the threshold of the current size; the window is
    /// cleared on promotion.
    pub fn update(&mut self, episode_steps: usize) -> CurriculumEvent {
        if self.done {
            return CurriculumEvent::Finished;
        }
        if self.recent.len() == WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(episode_steps);
        let size = self.size();
        let threshold = self.stages[self.level].threshold;
        let passed = self.recent.len() == WINDOW && self.moving_average().is_some_and(|m| m < threshold);
        if !passed {
            return CurriculumEvent::Stay;
        }
        if self.level + 1 == self.stages.len() {
            // the passing window is kept for reporting
            self.done = true;
            CurriculumEvent::Finished
        } else {
            self.recent.clear();
            self.level += 1;
            CurriculumEvent::Promoted { from: size, to: self.size() }
        }
    }
}
