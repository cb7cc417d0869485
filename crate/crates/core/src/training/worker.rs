//! Actor-learner worker: rollout collection and the per-module losses.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{a3c_loss, sample_action, A3cStep, AgentInput};
use crate::localization::{localization_loss, LocTruth, RlcInputs, RlcState, RlcVars};
use crate::map_interp::{reward_map_loss, RewardClass, RewardSample};
use crate::maze::{generate_maze, true_local_map, true_visible_local_map, Action, MazeSpec};
use crate::numerics::{Grads, Grid2D, ParamSet, ParamStore, Tape, Tensor};
use crate::vlm::{vlm_loss, VlmSample};

use super::config::TrainConfig;
use super::curriculum::{CurriculumEvent, CurriculumState};
use super::episode::{Episode, Percept};
use super::history::{ExperienceFrame, ExperienceHistory};
use super::model::{module_of, Model, Module};

/// RNG streams of a worker; each consumer gets its own.
const STREAM_MAZE: u64 = 1;
const STREAM_ACTION: u64 = 2;
const STREAM_UNIFORM: u64 = 3;
const STREAM_SKEWED: u64 = 4;

fn stream(seed: u64, worker: usize, epoch: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (worker as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch.rotate_left(32));
    rng.set_stream(id);
    rng
}

/// One acted step as needed by the on-policy losses.
#[derive(Clone, Debug)]
pub struct RolloutStep {
    pub input: AgentInput,
    pub action: Action,
    pub reward: f64,
    pub extrinsic: f64,
    /// Filter input and side inputs of the observation that followed.
    pub visible: Option<Grid2D>,
    pub rlc_inputs: RlcInputs,
    pub truth: LocTruth,
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    /// Filter state when the rollout began.
    pub initial_rlc: RlcState,
    pub raster: Grid2D,
    pub maze: Arc<MazeSpec>,
    /// Agent input after the last step, for the value bootstrap.
    pub last_input: AgentInput,
    pub done: bool,
    /// Ground-truth local map at the final pose.
    pub final_local_map: Grid2D,
    pub finished: Option<EpisodeSummary>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub worker: usize,
    pub size: usize,
    pub episode: u64,
    pub steps: usize,
    pub rotations: usize,
    pub success: bool,
    pub intrinsic_mean: f64,
    pub event: CurriculumEvent,
}

/// Loss values of one iteration (zero for skipped terms).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IterationStats {
    pub agent: f64,
    pub entropy: f64,
    pub vlm: f64,
    pub loc_xent: f64,
    pub loc_dist: f64,
    pub loc_local_map: f64,
    pub reward_map: f64,
}

pub struct Worker {
    pub id: usize,
    pub curriculum: CurriculumState,
    pub history: ExperienceHistory,
    pub episodes: u64,
    pub env_steps: u64,
    episode: Option<Episode>,
    intrinsic_sum: f64,
    rng_maze: ChaCha8Rng,
    rng_action: ChaCha8Rng,
    rng_uniform: ChaCha8Rng,
    rng_skewed: ChaCha8Rng,
}

fn frame_of(p: &Percept, ep: &Episode) -> ExperienceFrame {
    ExperienceFrame {
        obs: p.obs.clone(),
        angle: p.rlc_inputs.angle,
        last_action: p.rlc_inputs.last_action,
        last_reward: p.rlc_inputs.last_reward,
        class: RewardClass::of(p.rlc_inputs.last_reward),
        contact: p.contact,
        pose: p.pose,
        true_cell: p.truth.cell,
        true_coords: p.truth.coords,
        maze: ep.maze().clone(),
        map_image: ep.sensor.map_image.clone(),
        belief: p.belief.clone(),
    }
}

impl Worker {
    /// `epoch` separates the RNG streams of resumed runs.
    pub fn new(id: usize, cfg: &TrainConfig, curriculum: CurriculumState, epoch: u64) -> Self {
        Worker {
            id,
            curriculum,
            history: ExperienceHistory::new(cfg.history_capacity),
            episodes: 0,
            env_steps: 0,
            episode: None,
            intrinsic_sum: 0.0,
            rng_maze: stream(cfg.seed, id, epoch, STREAM_MAZE),
            rng_action: stream(cfg.seed, id, epoch, STREAM_ACTION),
            rng_uniform: stream(cfg.seed, id, epoch, STREAM_UNIFORM),
            rng_skewed: stream(cfg.seed, id, epoch, STREAM_SKEWED),
        }
    }

    pub fn done(&self) -> bool {
        self.curriculum.done
    }

    pub fn episode(&self) -> Option<&Episode> {
        self.episode.as_ref()
    }

    fn ensure_episode(&mut self, model: &Model, set: &ParamSet, cfg: &TrainConfig) {
        if self.episode.as_ref().is_some_and(|e| !e.done()) {
            return;
        }
        let size = self.curriculum.size();
        // sizes were validated with the config, so generation cannot fail
        let maze = generate_maze(size, self.rng_maze.gen::<u64>() >> 1).expect("curriculum size is a valid maze width");
        let ep = Episode::start(model, set, Arc::new(maze), &cfg.env, &cfg.render, cfg.mode, &mut self.rng_maze);
        self.history.push(frame_of(&ep.current, &ep));
        self.intrinsic_sum = 0.0;
        self.episode = Some(ep);
    }

    /// Acts for up to `cfg.rollout_len` steps with the given parameters,
    /// pushing one frame per observation. Stops early at episode end.
    pub fn collect_rollout(&mut self, model: &Model, set: &ParamSet, cfg: &TrainConfig) -> Rollout {
        self.ensure_episode(model, set, cfg);
        let ep = self.episode.as_mut().expect("episode started");
        let initial_rlc = ep.sensor.rlc.clone();
        let mut steps = Vec::with_capacity(cfg.rollout_len);
        for _ in 0..cfg.rollout_len {
            let input = ep.current.input;
            let (logits, _) = model.agent.run(set, &input);
            let action = Action::from_index(sample_action(&logits, &mut self.rng_action)).expect("policy has one logit per action");
            let tr = ep.advance(model, set, action, &cfg.rewards).expect("episode is running");
            self.intrinsic_sum += tr.reward - tr.outcome.reward;
            self.history.push(frame_of(&ep.current, ep));
            steps.push(RolloutStep {
                input,
                action,
                reward: tr.reward,
                extrinsic: tr.outcome.reward,
                visible: ep.current.visible.clone(),
                rlc_inputs: ep.current.rlc_inputs,
                truth: ep.current.truth,
            });
            if tr.outcome.done {
                break;
            }
        }
        self.env_steps += steps.len() as u64;
        let l = model.local_size();
        let done = ep.done();
        let finished = done.then(|| {
            self.episodes += 1;
            let size = self.curriculum.size();
            let n = ep.env.steps;
            let summary = EpisodeSummary {
                worker: self.id,
                size,
                episode: self.episodes,
                steps: n,
                rotations: ep.rotations,
                success: ep.env.success,
                intrinsic_mean: self.intrinsic_sum / n.max(1) as f64,
                event: CurriculumEvent::Stay,
            };
            EpisodeSummary { event: self.curriculum.update(n), ..summary }
        });
        Rollout {
            steps,
            initial_rlc,
            raster: ep.sensor.raster.clone(),
            maze: ep.maze().clone(),
            last_input: ep.current.input,
            done,
            final_local_map: true_local_map(ep.maze(), &ep.env.pose, l).grid,
            finished,
        }
    }

    /// Gradients of every active loss, each restricted to its own module and
    /// clipped to `grad_clip`.
    pub fn compute_gradients(&mut self, model: &Model, set: &ParamSet, cfg: &TrainConfig, rollout: &Rollout) -> (Grads, IterationStats) {
        let mut stats = IterationStats::default();
        let mut all = Grads::new();
        if rollout.steps.is_empty() {
            return (all, stats);
        }
        let restrict = |mut g: Grads, m: Module| {
            g.retain(|id| module_of(set, id) == Some(m));
            let norm = g.l2_norm();
            if norm > cfg.optim.grad_clip {
                g.scale(cfg.optim.grad_clip / norm);
            }
            g
        };
        let w = &cfg.losses;
        if w.agent > 0.0 {
            all.merge(&restrict(agent_grads(model, set, cfg, rollout, &mut stats), Module::Agent));
        }
        if cfg.mode.learned_position() && w.localization_active() {
            all.merge(&restrict(localization_grads(model, set, cfg, rollout, &mut stats), Module::Localization));
        }
        if cfg.mode.learned_position() && w.vlm > 0.0 {
            let frames = self.history.sample_uniform(cfg.batch, &mut self.rng_uniform);
            all.merge(&restrict(vlm_grads(model, set, cfg, &frames, &mut stats), Module::Vlm));
        }
        if cfg.mode.learned_plan() && w.reward_map > 0.0 {
            let frames = self.history.sample_reward_skewed(cfg.batch, &mut self.rng_skewed);
            all.merge(&restrict(reward_map_grads(model, set, cfg, &frames, &mut stats), Module::MapInterp));
        }
        (all, stats)
    }

    /// One actor-learner iteration against the shared store: snapshot, act,
    /// compute gradients, apply.
    pub fn train_iteration(&mut self, model: &Model, store: &ParamStore, cfg: &TrainConfig, lr: &[f64]) -> (Rollout, IterationStats, u64) {
        let (set, _) = store.snapshot();
        let rollout = self.collect_rollout(model, &set, cfg);
        let (grads, stats) = self.compute_gradients(model, &set, cfg, &rollout);
        let version = store.apply(&grads, |id| lr[id.index()]);
        (rollout, stats, version)
    }
}

/// Learning rate of every parameter tensor, by module.
pub fn learning_rates(set: &ParamSet, cfg: &TrainConfig) -> Vec<f64> {
    set.ids().map(|id| module_of(set, id).map_or(0.0, |m| cfg.optim.lr.of(m))).collect()
}

/// Actor-critic loss over the rollout; the agent's inputs are constants.
pub fn agent_grads(model: &Model, set: &ParamSet, cfg: &TrainConfig, rollout: &Rollout, stats: &mut IterationStats) -> Grads {
    let mut tape = Tape::new();
    let steps: Vec<A3cStep> = rollout
        .steps
        .iter()
        .map(|s| {
            let x = tape.constant(Tensor::vector(s.input.features()));
            let out = model.agent.forward(&mut tape, set, x);
            A3cStep { logits: out.logits, value: out.value, action: s.action.index(), reward: s.reward }
        })
        .collect();
    let bootstrap = if rollout.done { 0.0 } else { model.agent.run(set, &rollout.last_input).1 };
    let loss = a3c_loss(&mut tape, &steps, bootstrap, &cfg.a3c).expect("rollout is non-empty");
    stats.agent = tape.scalar(loss.total);
    stats.entropy = loss.entropy;
    let total = tape.scale(loss.total, cfg.losses.agent);
    tape.backward(total)
}

/// Filter unrolled over the rollout from its detached initial state, with
/// the acted visible excerpts as constants.
pub fn localization_grads(model: &Model, set: &ParamSet, cfg: &TrainConfig, rollout: &Rollout, stats: &mut IterationStats) -> Grads {
    let w = &cfg.losses;
    let mut tape = Tape::new();
    let mut state = RlcVars::constant(&mut tape, &rollout.initial_rlc);
    let map = tape.constant(Tensor::from(&rollout.raster));
    let mut outs = Vec::with_capacity(rollout.steps.len());
    for s in &rollout.steps {
        let v = tape.constant(Tensor::from(s.visible.as_ref().expect("learned position keeps the filter input")));
        let out = model.rlc.step(&mut tape, set, state, v, map, &s.rlc_inputs, None);
        state = out.state;
        outs.push(out);
    }
    let truths: Vec<LocTruth> = rollout.steps.iter().map(|s| s.truth).collect();
    let loss = localization_loss(&mut tape, &outs, &truths, rollout.raster.cols, &rollout.final_local_map).expect("rollout is non-empty");
    stats.loc_xent = tape.scalar(loss.xent);
    stats.loc_dist = tape.scalar(loss.dist);
    stats.loc_local_map = tape.scalar(loss.local_map);
    let a = tape.scale(loss.xent, w.loc_xent);
    let b = tape.scale(loss.dist, w.loc_dist);
    let c = tape.scale(loss.local_map, w.loc_local_map);
    let ab = tape.add(a, b);
    let total = tape.add(ab, c);
    tape.backward(total)
}

/// Visible-map regression on sampled frames.
pub fn vlm_grads(model: &Model, set: &ParamSet, cfg: &TrainConfig, frames: &[&ExperienceFrame], stats: &mut IterationStats) -> Grads {
    let l = model.local_size();
    let targets: Vec<Grid2D> = frames.iter().map(|f| true_visible_local_map(&f.maze, &f.pose, l).grid).collect();
    let batch: Vec<VlmSample<'_>> = frames
        .iter()
        .zip(&targets)
        .filter_map(|(f, t)| f.obs.as_deref().map(|obs| VlmSample { obs, target: t }))
        .collect();
    if batch.is_empty() {
        return Grads::new();
    }
    let mut tape = Tape::new();
    let loss = vlm_loss(&mut tape, &model.vlm, set, &batch).expect("batch is non-empty");
    stats.vlm = tape.scalar(loss);
    let total = tape.scale(loss, cfg.losses.vlm);
    tape.backward(total)
}

/// Reward-class likelihood at the stored beliefs, which enter as constants.
pub fn reward_map_grads(model: &Model, set: &ParamSet, cfg: &TrainConfig, frames: &[&ExperienceFrame], stats: &mut IterationStats) -> Grads {
    let batch: Vec<RewardSample<'_>> = frames
        .iter()
        .map(|f| RewardSample { image: &f.map_image, belief: &f.belief, class: f.class, offset: f.reward_offset() })
        .collect();
    if batch.is_empty() {
        return Grads::new();
    }
    let mut tape = Tape::new();
    let loss = reward_map_loss(&mut tape, &model.mapint, set, &batch).expect("batch is non-empty");
    stats.reward_map = tape.scalar(loss);
    let total = tape.scale(loss, cfg.losses.reward_map);
    tape.backward(total)
}
