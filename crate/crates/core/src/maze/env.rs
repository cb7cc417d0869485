use std::sync::Arc;

use rand::Rng;

use super::{MazeError, MazeSpec, FINE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    MoveFwd,
    MoveBack,
    StrafeL,
    StrafeR,
    RotL,
    RotR,
}

impl Action {
    pub const ALL: [Action; 6] = [Action::MoveFwd, Action::MoveBack, Action::StrafeL, Action::StrafeR, Action::RotL, Action::RotR];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, Action::RotL | Action::RotR)
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::MoveFwd => "fwd",
            Action::MoveBack => "back",
            Action::StrafeL => "left",
            Action::StrafeR => "right",
            Action::RotL => "rotl",
            Action::RotR => "rotr",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub row: f64,
    pub col: f64,
    /// Degrees clockwise from north.
    pub heading: f64,
    /// Fine cells per tick, `(drow, dcol)`.
    pub vel: (f64, f64),
}

impl Pose {
    pub fn fine_cell(&self) -> (usize, usize) {
        (self.row.floor() as usize, self.col.floor() as usize)
    }

    /// Unit facing vector `(drow, dcol)`.
    pub fn forward(&self) -> (f64, f64) {
        let h = self.heading.rem_euclid(360.0).to_radians();
        (-h.cos(), h.sin())
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub ticks_per_step: usize,
    pub rot_per_tick: f64,
    pub v_max: f64,
    pub decay: f64,
    pub gain: f64,
    pub radius: f64,
    pub target_reward: f64,
    pub wall_penalty: f64,
    pub step_cap: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            ticks_per_step: 4,
            rot_per_tick: 6.0,
            v_max: 0.25,
            decay: 0.7,
            gain: 0.3,
            radius: 0.3,
            target_reward: 10.0,
            wall_penalty: -0.1,
            step_cap: 4500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    /// First wall fine cell touched during the step, relative to the final
    /// fine cell, each component clamped to `-1..=1`.
    pub contact: Option<(isize, isize)>,
}

#[derive(Clone, Debug)]
pub struct EnvState {
    pub maze: Arc<MazeSpec>,
    pub pose: Pose,
    pub steps: usize,
    pub done: bool,
    pub success: bool,
    pub cfg: EnvConfig,
}

const EDGE_EPS: f64 = 1e-9;

impl EnvState {
    /// Agent at the centre of the spawn cell, at rest.
    pub fn new(maze: Arc<MazeSpec>, cfg: EnvConfig, heading: f64) -> Self {
        let (sr, sc) = maze.spawn();
        let centre = FINE as f64 / 2.0;
        let pose = Pose {
            row: (sr * FINE) as f64 + centre,
            col: (sc * FINE) as f64 + centre,
            heading: heading.rem_euclid(360.0),
            vel: (0.0, 0.0),
        };
        EnvState { maze, pose, steps: 0, done: false, success: false, cfg }
    }

    /// Spawn with a heading drawn from the rotation lattice.
    pub fn random_start(maze: Arc<MazeSpec>, cfg: EnvConfig, rng: &mut impl Rng) -> Self {
        let lattice = (360.0 / cfg.rot_per_tick).round().max(1.0) as usize;
        let heading = cfg.rot_per_tick * rng.gen_range(0..lattice) as f64;
        Self::new(maze, cfg, heading)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, MazeError> {
        if self.done {
            return Err(MazeError::EpisodeFinished);
        }
        let mut contact: Option<(isize, isize)> = None;
        let mut success = false;
        let vmax = self.cfg.v_max * (1.0 - 1e-9);
        for _ in 0..self.cfg.ticks_per_step {
            let dir = match action {
                Action::RotL => {
                    self.pose.heading = (self.pose.heading - self.cfg.rot_per_tick).rem_euclid(360.0);
                    (0.0, 0.0)
                }
                Action::RotR => {
                    self.pose.heading = (self.pose.heading + self.cfg.rot_per_tick).rem_euclid(360.0);
                    (0.0, 0.0)
                }
                _ => {
                    let (fr, fc) = self.pose.forward();
                    match action {
                        Action::MoveFwd => (fr, fc),
                        Action::MoveBack => (-fr, -fc),
                        Action::StrafeR => (fc, -fr),
                        _ => (-fc, fr),
                    }
                }
            };
            let (mut vr, mut vc) = (
                self.cfg.decay * self.pose.vel.0 + self.cfg.gain * self.cfg.v_max * dir.0,
                self.cfg.decay * self.pose.vel.1 + self.cfg.gain * self.cfg.v_max * dir.1,
            );
            let speed = (vr * vr + vc * vc).sqrt();
            if speed > vmax {
                vr *= vmax / speed;
                vc *= vmax / speed;
            }
            if let Some(hit) = self.move_axis(true, vr) {
                vr = 0.0;
                contact.get_or_insert(hit);
            }
            if let Some(hit) = self.move_axis(false, vc) {
                vc = 0.0;
                contact.get_or_insert(hit);
            }
            self.pose.vel = (vr, vc);
            let (r, c) = self.pose.fine_cell();
            if self.maze.fine_is_target(r as isize, c as isize) {
                success = true;
                break;
            }
        }
        self.steps += 1;
        let reward = if success {
            self.cfg.target_reward
        } else if contact.is_some() {
            self.cfg.wall_penalty
        } else {
            0.0
        };
        self.success = success;
        self.done = success || self.steps >= self.cfg.step_cap;
        let (r, c) = self.pose.fine_cell();
        let contact = contact.map(|(wr, wc)| ((wr - r as isize).clamp(-1, 1), (wc - c as isize).clamp(-1, 1)));
        Ok(StepOutcome { reward, done: self.done, success, contact })
    }

    /// Moves along one axis with the agent's square footprint; on overlap
    /// the footprint is clamped flush against the wall. Returns the wall
    /// fine cell that stopped the motion.
    fn move_axis(&mut self, rows: bool, delta: f64) -> Option<(isize, isize)> {
        if delta == 0.0 {
            return None;
        }
        let rad = self.cfg.radius;
        let (along, across) = if rows { (self.pose.row, self.pose.col) } else { (self.pose.col, self.pose.row) };
        let lo = (across - rad + EDGE_EPS).floor() as isize;
        let hi = (across + rad - EDGE_EPS).ceil() as isize - 1;
        let new = along + delta;
        let (k, clamped) = if delta > 0.0 {
            let k = (new + rad - EDGE_EPS).ceil() as isize - 1;
            (k, k as f64 - rad)
        } else {
            let k = (new - rad + EDGE_EPS).floor() as isize;
            (k, (k + 1) as f64 + rad)
        };
        let blocking = (lo..=hi).find(|&j| if rows { self.maze.fine_is_wall(k, j) } else { self.maze.fine_is_wall(j, k) });
        let (pos, hit) = match blocking {
            Some(j) => (clamped, Some(if rows { (k, j) } else { (j, k) })),
            None => (new, None),
        };
        if rows {
            self.pose.row = pos;
        } else {
            self.pose.col = pos;
        }
        hit
    }

    pub fn fine_cell(&self) -> (usize, usize) {
        self.pose.fine_cell()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{generate_maze, Cell};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight north-south corridor: spawn at the bottom, target at the top.
    fn corridor(len: usize) -> Arc<MazeSpec> {
        let w = len + 2;
        let w = if w % 2 == 0 { w + 1 } else { w };
        let mut cells = vec![Cell::Wall; w * w];
        for r in 1..=len {
            cells[r * w + 1] = Cell::Open;
        }
        cells[w + 1] = Cell::Target;
        cells[len * w + 1] = Cell::Spawn;
        Arc::new(MazeSpec::from_cells(w, 0, cells).unwrap())
    }

    #[test]
    fn forward_in_open_corridor() {
        let m = corridor(5);
        let mut env = EnvState::new(m, EnvConfig::default(), 0.0);
        let start = env.pose;
        let out = env.step(Action::MoveFwd).unwrap();
        // velocity after n ticks: 0.075 * (1 - 0.7^n) / 0.3
        let expect: f64 = (1..=4).map(|n| 0.075 * (1.0 - 0.7f64.powi(n)) / 0.3).sum();
        assert!((start.row - env.pose.row - expect).abs() < 1e-12);
        assert!(expect <= 1.0);
        assert_eq!(env.pose.col, start.col);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn nose_against_wall_is_blocked() {
        let m = corridor(5);
        let mut env = EnvState::new(m, EnvConfig::default(), 90.0);
        let first = env.step(Action::MoveFwd).unwrap();
        // 1.2 fine cells to the east wall from the centre minus radius
        assert!(first.reward == 0.0 || first.reward == -0.1);
        for _ in 0..3 {
            env.step(Action::MoveFwd).unwrap();
        }
        let before = env.pose;
        let out = env.step(Action::MoveFwd).unwrap();
        assert_eq!(out.reward, -0.1);
        assert!((env.pose.col - before.col).abs() < 1e-12);
        assert!((env.pose.col - (6.0 - 0.3)).abs() < 1e-9);
        assert_eq!(out.contact, Some((0, 1)));
    }

    #[test]
    fn reaching_target_ends_episode() {
        let m = corridor(3);
        let mut env = EnvState::new(m, EnvConfig::default(), 0.0);
        // spawn centre row 10.5; the target block ends at row 6
        let mut last = None;
        for _ in 0..20 {
            let out = env.step(Action::MoveFwd).unwrap();
            if out.done {
                last = Some(out);
                break;
            }
        }
        let out = last.unwrap();
        assert_eq!(out.reward, 10.0);
        assert!(out.success && env.done);
        assert!(matches!(env.step(Action::MoveFwd), Err(MazeError::EpisodeFinished)));
    }

    #[test]
    fn rotation_stays_on_lattice() {
        let m = corridor(3);
        let mut env = EnvState::new(m, EnvConfig::default(), 0.0);
        env.step(Action::RotL).unwrap();
        assert!((env.pose.heading - 336.0).abs() < 1e-9);
        for _ in 0..15 {
            env.step(Action::RotR).unwrap();
        }
        assert!((env.pose.heading - 336.0).abs() < 1e-6);
    }

    #[test]
    fn step_cap_truncates() {
        let m = corridor(3);
        let cfg = EnvConfig { step_cap: 5, ..Default::default() };
        let mut env = EnvState::new(m, cfg, 0.0);
        for i in 0..5 {
            let out = env.step(Action::RotL).unwrap();
            assert_eq!(out.done, i == 4);
        }
        assert!(!env.success);
    }

    proptest! {
        #[test]
        fn random_walks_respect_geometry(seed in any::<u64>(), size in prop::sample::select(vec![5usize, 7, 9])) {
            let maze = Arc::new(generate_maze(size, seed).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut env = EnvState::random_start(maze.clone(), EnvConfig::default(), &mut rng);
            let mut twin = env.clone();
            for _ in 0..200 {
                let a = Action::ALL[rng.gen_range(0..6)];
                let (r0, c0) = env.fine_cell();
                let out = env.step(a).unwrap();
                let twin_out = twin.step(a).unwrap();
                prop_assert_eq!(out, twin_out);
                prop_assert_eq!(env.pose, twin.pose);
                let (r1, c1) = env.fine_cell();
                prop_assert!(r0.abs_diff(r1) <= 1 && c0.abs_diff(c1) <= 1);
                let v = env.pose.vel;
                prop_assert!((v.0 * v.0 + v.1 * v.1).sqrt() <= 0.25);
                // footprint never overlaps a wall
                let rad = 0.3 - 1e-6;
                for (dr, dc) in [(-rad, -rad), (-rad, rad), (rad, -rad), (rad, rad)] {
                    let (pr, pc) = (env.pose.row + dr, env.pose.col + dc);
                    prop_assert!(!maze.fine_is_wall(pr.floor() as isize, pc.floor() as isize));
                }
                if out.done {
                    break;
                }
            }
        }
    }
}
