//! One agent episode: perception pipeline, planning and environment stepping.

use std::sync::Arc;

use rand::Rng;

use crate::agent::{intrinsic_rewards, AgentInput, RewardWeights};
use crate::localization::{egomotion_one_hot, Belief, LocTruth, RlcInputs, RlcState};
use crate::map_interp::{classify, plan_or_fallback, query_plan, PlanGrid, PlanQuery, PLAN_ITERATIONS};
use crate::maze::{
    discretize_angle, map_image, rasterize_map, render, true_cell_index, true_visible_local_map, Action, EnvConfig, EnvState,
    MazeError, MazeSpec, Observation, Pose, RenderConfig, StepOutcome,
};
use crate::numerics::{Grid2D, ParamSet};

use super::model::Model;

/// Which module outputs are replaced by ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptionMode {
    #[default]
    Full,
    /// One-hot belief at the true cell and true egomotion.
    PerfectPosition,
    /// Directions and distances planned on the true map.
    PerfectSttd,
    Both,
}

impl PerceptionMode {
    pub fn learned_position(self) -> bool {
        matches!(self, PerceptionMode::Full | PerceptionMode::PerfectSttd)
    }

    pub fn learned_plan(self) -> bool {
        matches!(self, PerceptionMode::Full | PerceptionMode::PerfectPosition)
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(PerceptionMode::Full),
            "perfect_position" => Some(PerceptionMode::PerfectPosition),
            "perfect_sttd" => Some(PerceptionMode::PerfectSttd),
            "both" => Some(PerceptionMode::Both),
            _ => None,
        }
    }
}

/// Ground-truth plan of a maze.
pub fn true_plan(maze: &MazeSpec) -> PlanGrid {
    let n = maze.fine_width();
    let values = Grid2D::from_vec(n, n, maze.ground_truth_values()).expect("fine grid is square");
    plan_or_fallback(&values, PLAN_ITERATIONS)
}

/// Plan from the learned reward map of `maze`'s image.
pub fn learned_plan(model: &Model, set: &ParamSet, maze: &MazeSpec, image: &Grid2D) -> PlanGrid {
    let rm = model.mapint.reward_map(set, image);
    plan_or_fallback(&classify(&rm, maze.width()), PLAN_ITERATIONS)
}

/// Everything known after one observation.
#[derive(Clone, Debug)]
pub struct Percept {
    pub obs: Option<Arc<Observation>>,
    /// Visible local map fed to the filter (absent in oracle-position modes).
    pub visible: Option<Grid2D>,
    pub rlc_inputs: RlcInputs,
    pub belief: Arc<Vec<f64>>,
    pub entropy: f64,
    pub egomotion: Grid2D,
    pub query: PlanQuery,
    pub input: AgentInput,
    pub pose: Pose,
    pub truth: LocTruth,
    pub contact: Option<(isize, isize)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub action: Action,
    pub outcome: StepOutcome,
    pub explore: f64,
    pub exploit: f64,
    /// Extrinsic reward plus weighted intrinsic rewards.
    pub reward: f64,
}

/// Per-episode perception state.
pub struct Sensor {
    pub mode: PerceptionMode,
    pub render: RenderConfig,
    pub raster: Grid2D,
    pub map_image: Arc<Grid2D>,
    pub plan: PlanGrid,
    pub rlc: RlcState,
}

impl Sensor {
    fn perceive(
        &mut self,
        model: &Model,
        set: &ParamSet,
        env: &EnvState,
        prev_cell: (usize, usize),
        inputs: RlcInputs,
        contact: Option<(isize, isize)>,
    ) -> Percept {
        let maze = &env.maze;
        let pose = env.pose;
        let (r, c) = pose.fine_cell();
        let cell = true_cell_index(&pose, maze);
        let truth = LocTruth { cell, coords: (r as f64 + 0.5, c as f64 + 0.5) };
        let (obs, visible, belief, egomotion) = if self.mode.learned_position() {
            let obs = render(maze, &pose, &self.render);
            let v = model.vlm.run(set, &obs).value;
            let (next, belief, s) = model.rlc.run_step(set, &self.rlc, &v, &self.raster, &inputs, None);
            self.rlc = next;
            (Some(Arc::new(obs)), Some(v), belief, s)
        } else {
            let ego = egomotion_one_hot(r as isize - prev_cell.0 as isize, c as isize - prev_cell.1 as isize);
            (None, None, Belief::one_hot(maze.fine_count(), cell), ego)
        };
        let query = query_plan(&self.plan, &belief);
        let input = AgentInput {
            angle: inputs.angle,
            last_reward: inputs.last_reward,
            entropy: belief.entropy_norm,
            sttd: query.sttd,
            target_dist: query.dist,
        };
        Percept {
            obs,
            visible,
            rlc_inputs: inputs,
            entropy: belief.entropy_norm,
            belief: Arc::new(belief.p),
            egomotion,
            query,
            input,
            pose,
            truth,
            contact,
        }
    }
}

pub struct Episode {
    pub env: EnvState,
    pub sensor: Sensor,
    pub current: Percept,
    pub rotations: usize,
}

impl Episode {
    /// Spawns with a random lattice heading, plans once for the maze and
    /// takes the first observation.
    pub fn start(
        model: &Model,
        set: &ParamSet,
        maze: Arc<MazeSpec>,
        env_cfg: &EnvConfig,
        render_cfg: &RenderConfig,
        mode: PerceptionMode,
        rng: &mut impl Rng,
    ) -> Self {
        let env = EnvState::random_start(maze.clone(), env_cfg.clone(), rng);
        let map_image = Arc::new(map_image(&maze));
        let plan = if mode.learned_plan() { learned_plan(model, set, &maze, &map_image) } else { true_plan(&maze) };
        let mut sensor = Sensor {
            mode,
            render: render_cfg.clone(),
            raster: rasterize_map(&maze).grid,
            map_image,
            plan,
            rlc: RlcState::fresh(model.local_size()),
        };
        let inputs = RlcInputs { angle: discretize_angle(env.pose.heading), last_action: None, last_reward: 0.0 };
        let current = sensor.perceive(model, set, &env, env.pose.fine_cell(), inputs, None);
        Episode { env, sensor, current, rotations: 0 }
    }

    pub fn maze(&self) -> &Arc<MazeSpec> {
        &self.env.maze
    }

    pub fn done(&self) -> bool {
        self.env.done
    }

    /// Applies `action`, observes the result and scores the transition.
    pub fn advance(&mut self, model: &Model, set: &ParamSet, action: Action, weights: &RewardWeights) -> Result<Transition, MazeError> {
        let prev_cell = self.env.pose.fine_cell();
        let outcome = self.env.step(action)?;
        if action.is_rotation() {
            self.rotations += 1;
        }
        let inputs = RlcInputs {
            angle: discretize_angle(self.env.pose.heading),
            last_action: Some(action),
            last_reward: outcome.reward,
        };
        let next = self.sensor.perceive(model, set, &self.env, prev_cell, inputs, outcome.contact);
        let (explore, exploit) = intrinsic_rewards(self.current.entropy, next.entropy, &next.egomotion, &self.current.query.sttd);
        self.current = next;
        Ok(Transition { action, outcome, explore, exploit, reward: weights.total(outcome.reward, explore, exploit) })
    }

    /// Ground-truth visible excerpt at the current pose.
    pub fn true_visible(&self, size: usize) -> Grid2D {
        true_visible_local_map(&self.env.maze, &self.env.pose, size).grid
    }
}
