//! Per-step JSON-lines traces of one episode.

use std::io::{self, Write};
use std::sync::Arc;

use crate::localization::Belief;
use crate::maze::{Action, EnvConfig, EnvState, MazeSpec};
use crate::numerics::ParamSet;
use crate::training::Model;

use super::eval::{run_episode, EvalConfig};

pub const TOP_K: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseRecord {
    pub row: f64,
    pub col: f64,
    pub heading: f64,
}

/// State before the action of step `step`, the action and its rewards.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub pose: PoseRecord,
    pub action: String,
    pub extrinsic: f64,
    pub explore: f64,
    pub exploit: f64,
    /// `(fine cell, probability)`, most likely first.
    pub belief_top: Vec<(usize, f64)>,
    pub entropy: f64,
    pub sttd: [f64; 4],
    pub target_dist: f64,
    pub estimated_cell: usize,
    pub true_cell: usize,
    pub done: bool,
    pub success: bool,
}

impl TraceRecord {
    pub fn action(&self) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name() == self.action)
    }

    /// Field checks for a maze with `cells` fine cells.
    pub fn validate(&self, cells: usize) -> Result<(), String> {
        if self.action().is_none() {
            return Err(format!("step {}: unknown action {:?}", self.step, self.action));
        }
        if self.belief_top.is_empty() || self.belief_top.len() > TOP_K {
            return Err(format!("step {}: {} belief entries", self.step, self.belief_top.len()));
        }
        if self.belief_top.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(format!("step {}: belief entries not sorted", self.step));
        }
        let mass: f64 = self.belief_top.iter().map(|e| e.1).sum();
        if self.belief_top.iter().any(|&(c, p)| c >= cells || !(0.0..=1.0).contains(&p)) || mass > 1.0 + 1e-9 {
            return Err(format!("step {}: invalid belief entries", self.step));
        }
        if self.estimated_cell >= cells || self.true_cell >= cells {
            return Err(format!("step {}: cell index out of range", self.step));
        }
        if !(0.0..=1.0).contains(&self.entropy) || self.sttd.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(format!("step {}: entropy or directions out of range", self.step));
        }
        if !(0.0..360.0).contains(&self.pose.heading) {
            return Err(format!("step {}: heading out of range", self.step));
        }
        Ok(())
    }
}

/// Runs one episode and writes one JSON object per step to `out`.
pub fn export_trace(
    model: &Model,
    set: &ParamSet,
    maze: Arc<MazeSpec>,
    cfg: &EvalConfig,
    seed: u64,
    out: &mut impl Write,
) -> io::Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    run_episode(model, set, maze, cfg, seed, |before, tr, after| {
        let belief = Belief::new(before.belief.to_vec());
        records.push(TraceRecord {
            step: records.len(),
            pose: PoseRecord { row: before.pose.row, col: before.pose.col, heading: before.pose.heading },
            action: tr.action.name().to_string(),
            extrinsic: tr.outcome.reward,
            explore: tr.explore,
            exploit: tr.exploit,
            belief_top: belief.top_k(TOP_K),
            entropy: before.entropy,
            sttd: before.query.sttd,
            target_dist: before.query.dist,
            estimated_cell: belief.argmax(),
            true_cell: before.truth.cell,
            done: after.done(),
            success: after.env.success,
        });
    });
    for r in &records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(records)
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Replays the logged actions from the first logged pose and checks every
/// logged pose is reproduced exactly.
pub fn replay_matches(maze: Arc<MazeSpec>, env: &EnvConfig, records: &[TraceRecord]) -> bool {
    let Some(first) = records.first() else { return true };
    let mut state = EnvState::new(maze, EnvConfig { step_cap: usize::MAX, ..env.clone() }, first.pose.heading);
    for r in records {
        let p = state.pose;
        if (p.row, p.col, p.heading) != (r.pose.row, r.pose.col, r.pose.heading) {
            return false;
        }
        let Some(a) = r.action() else { return false };
        if state.step(a).is_err() {
            return false;
        }
    }
    true
}
