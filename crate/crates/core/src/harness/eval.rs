//! Maze test sets and policy evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::{sample_action, RewardWeights};
use crate::maze::{generate_maze, maze_path, write_maze, Action, EnvConfig, MazeError, MazeSpec, RenderConfig};
use crate::numerics::ParamSet;
use crate::training::{Episode, Model, Percept, PerceptionMode, Transition};

/// Test-set seeds carry the top bit; training mazes never do.
const TESTSET_BIT: u64 = 1 << 63;

pub fn testset_seed(seed: u64, size: usize, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((size as u64) << 32) | index as u64);
    rng.gen::<u64>() | TESTSET_BIT
}

/// Writes `count` mazes per size as `<dir>/<size>/<index>.maze`.
pub fn generate_testset(dir: &Path, sizes: &[usize], count: usize, seed: u64) -> Result<Vec<(usize, usize, MazeSpec)>, MazeError> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::with_capacity(sizes.len() * count);
    for &size in sizes {
        for index in 0..count {
            let maze = generate_maze(size, testset_seed(seed, size, index))?;
            write_maze(&maze_path(dir, size, index), &maze)?;
            out.push((size, index, maze));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Actions sampled from the policy, as during training.
    #[default]
    Sampled,
    Greedy,
    /// Uniformly random actions (baseline).
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub env: EnvConfig,
    pub render: RenderConfig,
    pub mode: PerceptionMode,
    pub policy: PolicyKind,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            env: EnvConfig::default(),
            render: RenderConfig::default(),
            mode: PerceptionMode::Full,
            policy: PolicyKind::Sampled,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct EpisodeResult {
    pub size: usize,
    pub index: usize,
    pub maze_seed: u64,
    pub steps: usize,
    /// Non-rotation actions.
    pub moves: usize,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SizeStats {
    pub size: usize,
    pub episodes: usize,
    pub successes: usize,
    pub targets_found_pct: f64,
    /// Total steps of each successful episode.
    pub success_steps: Vec<usize>,
    /// Means over successful episodes (0 when there are none).
    pub mean_steps: f64,
    pub mean_moves: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct EvalStats {
    pub sizes: BTreeMap<usize, SizeStats>,
    pub episodes: Vec<EpisodeResult>,
}

impl EvalStats {
    pub fn from_episodes(episodes: Vec<EpisodeResult>) -> Self {
        let mut sizes: BTreeMap<usize, SizeStats> = BTreeMap::new();
        for e in &episodes {
            let s = sizes.entry(e.size).or_insert_with(|| SizeStats {
                size: e.size,
                episodes: 0,
                successes: 0,
                targets_found_pct: 0.0,
                success_steps: Vec::new(),
                mean_steps: 0.0,
                mean_moves: 0.0,
            });
            s.episodes += 1;
            if e.success {
                s.successes += 1;
                s.success_steps.push(e.steps);
                s.mean_steps += e.steps as f64;
                s.mean_moves += e.moves as f64;
            }
        }
        for s in sizes.values_mut() {
            s.targets_found_pct = 100.0 * s.successes as f64 / s.episodes as f64;
            if s.successes > 0 {
                s.mean_steps /= s.successes as f64;
                s.mean_moves /= s.successes as f64;
            }
        }
        EvalStats { sizes, episodes }
    }

    /// One row per episode: `size,index,maze_seed,steps,moves,success`.
    pub fn episodes_csv(&self) -> String {
        let mut s = String::from("size,index,maze_seed,steps,moves,success\n");
        for e in &self.episodes {
            writeln!(s, "{},{},{},{},{},{}", e.size, e.index, e.maze_seed, e.steps, e.moves, u8::from(e.success)).unwrap();
        }
        s
    }

    /// One row per size.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("size,episodes,successes,targets_found_pct,mean_steps,mean_moves\n");
        for v in self.sizes.values() {
            writeln!(s, "{},{},{},{:.2},{:.2},{:.2}", v.size, v.episodes, v.successes, v.targets_found_pct, v.mean_steps, v.mean_moves).unwrap();
        }
        s
    }
}

/// Seed of the episode on maze `index` of `size`; independent of the order
/// in which episodes run.
pub fn episode_seed(seed: u64, size: usize, index: usize) -> u64 {
    seed ^ ((size as u64) << 40) ^ (index as u64).wrapping_mul(0x2545_F491_4F6C_DD1D)
}

fn choose(model: &Model, set: &ParamSet, ep: &Episode, policy: PolicyKind, rng: &mut impl Rng) -> Action {
    let i = match policy {
        PolicyKind::Random => rng.gen_range(0..Action::COUNT),
        PolicyKind::Sampled => sample_action(&model.agent.run(set, &ep.current.input).0, rng),
        PolicyKind::Greedy => {
            let logits = model.agent.run(set, &ep.current.input).0;
            (0..logits.len()).fold(0, |b, i| if logits[i] > logits[b] { i } else { b })
        }
    };
    Action::from_index(i).expect("policy has one logit per action")
}

/// Runs one episode, calling `on_step` with the percept the action was
/// chosen from, the transition and the episode after it. Returns the
/// episode and its count of non-rotation actions.
pub fn run_episode(
    model: &Model,
    set: &ParamSet,
    maze: Arc<MazeSpec>,
    cfg: &EvalConfig,
    seed: u64,
    mut on_step: impl FnMut(&Percept, &Transition, &Episode),
) -> (Episode, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let env_cfg = EnvConfig { step_cap: cfg.env.step_cap.max(1), ..cfg.env.clone() };
    let mut ep = Episode::start(model, set, maze, &env_cfg, &cfg.render, cfg.mode, &mut rng);
    let mut moves = 0;
    if cfg.env.step_cap == 0 {
        return (ep, 0);
    }
    let weights = RewardWeights::default();
    while !ep.done() {
        let action = choose(model, set, &ep, cfg.policy, &mut rng);
        let before = ep.current.clone();
        let tr = ep.advance(model, set, action, &weights).expect("episode is running");
        if !action.is_rotation() {
            moves += 1;
        }
        on_step(&before, &tr, &ep);
    }
    (ep, moves)
}

pub fn evaluate_one(model: &Model, set: &ParamSet, size: usize, index: usize, maze: &MazeSpec, cfg: &EvalConfig) -> EpisodeResult {
    let (ep, moves) = run_episode(model, set, Arc::new(maze.clone()), cfg, episode_seed(cfg.seed, size, index), |_, _, _| {});
    EpisodeResult {
        size,
        index,
        maze_seed: maze.seed(),
        steps: ep.env.steps,
        moves,
        success: cfg.env.step_cap > 0 && ep.env.success,
    }
}

/// One episode per maze, in parallel; results are in input order.
pub fn evaluate(model: &Model, set: &ParamSet, mazes: &[(usize, usize, MazeSpec)], cfg: &EvalConfig) -> EvalStats {
    let episodes = mazes.par_iter().map(|(size, index, maze)| evaluate_one(model, set, *size, *index, maze, cfg)).collect();
    EvalStats::from_episodes(episodes)
}

/// Evaluation with ground truth substituted for the selected modules.
pub fn oracle_eval(model: &Model, set: &ParamSet, mazes: &[(usize, usize, MazeSpec)], mode: PerceptionMode, cfg: &EvalConfig) -> EvalStats {
    evaluate(model, set, mazes, &EvalConfig { mode, ..cfg.clone() })
}
