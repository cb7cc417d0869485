//! Scripted motion and the oracle-mode localization probe.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::localization::{egomotion_one_hot, Belief, RlcInputs, RlcNet, RlcState};
use crate::maze::{rasterize_map, true_cell_index, true_visible_local_map, Action, EnvConfig, EnvState, MazeSpec, Pose, FINE};
use crate::numerics::ParamSet;

fn angle_diff(a: f64, b: f64) -> f64 {
    (a - b + 180.0).rem_euclid(360.0) - 180.0
}

/// Action moving the agent toward `(row, col)`: forward if the heading is
/// within `tolerance` degrees of the bearing, otherwise a rotation closing
/// the gap.
pub fn steer_toward(pose: &Pose, target: (f64, f64), tolerance: f64) -> Action {
    let want = (target.1 - pose.col).atan2(-(target.0 - pose.row)).to_degrees();
    let err = angle_diff(want, pose.heading);
    if err.abs() <= tolerance {
        Action::MoveFwd
    } else if err > 0.0 {
        Action::RotR
    } else {
        Action::RotL
    }
}

/// Maze-cell path from `from` to `to` (inclusive), by BFS.
pub fn cell_path(maze: &MazeSpec, from: (usize, usize), to: (usize, usize)) -> Vec<(usize, usize)> {
    let w = maze.width();
    let mut prev = vec![usize::MAX; w * w];
    let mut q = VecDeque::from([from]);
    prev[from.0 * w + from.1] = from.0 * w + from.1;
    while let Some((r, c)) = q.pop_front() {
        if (r, c) == to {
            break;
        }
        for (nr, nc) in [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)] {
            if maze.cell(nr, nc).is_navigable() && prev[nr * w + nc] == usize::MAX {
                prev[nr * w + nc] = r * w + c;
                q.push_back((nr, nc));
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to.0 * w + to.1;
    while cur != from.0 * w + from.1 {
        cur = prev[cur];
        if cur == usize::MAX {
            return Vec::new();
        }
        path.push((cur / w, cur % w));
    }
    path.reverse();
    path
}

/// Follows the BFS path to a goal cell; yields the next scripted action.
pub struct PathFollower {
    waypoints: Vec<(f64, f64)>,
    next: usize,
}

impl PathFollower {
    pub fn new(maze: &MazeSpec, pose: &Pose, goal: (usize, usize)) -> Self {
        let (fr, fc) = pose.fine_cell();
        let start = (fr / FINE, fc / FINE);
        let half = FINE as f64 / 2.0;
        let waypoints = cell_path(maze, start, goal)
            .into_iter()
            .skip(1)
            .map(|(r, c)| ((r * FINE) as f64 + half, (c * FINE) as f64 + half))
            .collect();
        PathFollower { waypoints, next: 0 }
    }

    pub fn action(&mut self, pose: &Pose) -> Option<Action> {
        while let Some(&(r, c)) = self.waypoints.get(self.next) {
            if (pose.row - r).hypot(pose.col - c) < 0.6 {
                self.next += 1;
            } else {
                return Some(steer_toward(pose, (r, c), 12.5));
            }
        }
        None
    }
}

/// Farthest navigable cell whose path from `from` avoids the target (which
/// would end the episode); falls back to any farthest cell.
fn farthest_path(maze: &MazeSpec, from: (usize, usize)) -> Vec<(usize, usize)> {
    let target = maze.target();
    let paths: Vec<_> = maze.navigable_cells().into_iter().map(|g| cell_path(maze, from, g)).collect();
    let longest = |avoid: bool| {
        paths
            .iter()
            .filter(|p| !avoid || !p.contains(&target))
            .max_by_key(|p| (p.len(), p.last().copied()))
            .cloned()
    };
    longest(true).or_else(|| longest(false)).unwrap_or_default()
}

/// Interior path indices where the direction changes.
fn corner_indices(path: &[(usize, usize)]) -> Vec<usize> {
    let dir = |a: (usize, usize), b: (usize, usize)| (b.0 as isize - a.0 as isize, b.1 as isize - a.1 as isize);
    (1..path.len().saturating_sub(1))
        .filter(|&i| dir(path[i - 1], path[i]) != dir(path[i], path[i + 1]))
        .collect()
}

/// Forward steps budgeted per maze cell when deciding whether the next
/// corner is still reachable.
const MOVES_PER_CELL: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeOutcome {
    pub localized: bool,
    pub argmax_correct: bool,
    pub entropy: f64,
    pub moves: usize,
    pub belief: Belief,
    pub true_cell: usize,
    pub final_state: RlcState,
}

/// Oracle-mode probe: ground-truth visible excerpts and one-hot true
/// egomotion drive the filter through a full in-place rotation followed by
/// at most `max_moves` forward steps toward the far end of the maze.
/// Rotations during the walk are not counted against the budget.
pub fn localization_probe(net: &RlcNet, set: &ParamSet, maze: Arc<MazeSpec>, seed: u64, max_moves: usize, entropy_goal: f64) -> ProbeOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EnvConfig { step_cap: usize::MAX, ..EnvConfig::default() };
    let mut env = EnvState::random_start(maze.clone(), cfg, &mut rng);
    let map = rasterize_map(&maze).grid;
    let l = net.cfg.local_size;
    let mut state = RlcState::fresh(l);
    let mut last: Option<(Action, f64)> = None;

    let observe = |env: &EnvState, prev_cell: (usize, usize), last: Option<(Action, f64)>, state: &mut RlcState| {
        let (r, c) = env.pose.fine_cell();
        let ego = egomotion_one_hot(r as isize - prev_cell.0 as isize, c as isize - prev_cell.1 as isize);
        let v = true_visible_local_map(&maze, &env.pose, l).grid;
        let inputs = RlcInputs {
            angle: crate::maze::discretize_angle(env.pose.heading),
            last_action: last.map(|x| x.0),
            last_reward: last.map_or(0.0, |x| x.1),
        };
        let (next, b, _) = net.run_step(set, state, &v, &map, &inputs, Some(&ego));
        *state = next;
        b
    };

    let here = env.pose.fine_cell();
    let mut belief = observe(&env, here, last, &mut state);
    let turns = (360.0 / (env.cfg.rot_per_tick * env.cfg.ticks_per_step as f64)).round() as usize;
    for _ in 0..turns {
        let prev = env.pose.fine_cell();
        let out = env.step(Action::RotL).expect("probe env has no step cap");
        last = Some((Action::RotL, out.reward));
        belief = observe(&env, prev, last, &mut state);
    }
    // Walk toward the cell farthest from wherever the agent is, retargeting
    // on arrival. At a corner whose successor corner is out of budget the
    // agent turns into the new corridor and stops: the cross walls seen
    // there pin the position along both axes.
    let half = FINE as f64 / 2.0;
    let centre = |(r, c): (usize, usize)| ((r * FINE) as f64 + half, (c * FINE) as f64 + half);
    let mut path: Vec<(usize, usize)> = Vec::new();
    let mut corners: Vec<usize> = Vec::new();
    let mut next = 0;
    let mut moves = 0;
    let mut rotations = 0;
    let mut stopping = false;
    while moves < max_moves && rotations < 10 * max_moves && !env.done {
        if next >= path.len() {
            let (fr, fc) = env.pose.fine_cell();
            path = farthest_path(&maze, (fr / FINE, fc / FINE));
            corners = corner_indices(&path);
            next = 1;
            if path.len() < 2 {
                break;
            }
        }
        let wp = centre(path[next]);
        if !stopping && (env.pose.row - wp.0).hypot(env.pose.col - wp.1) < 0.6 {
            if let Some(k) = corners.iter().position(|&i| i == next) {
                let span = corners.get(k + 1).map_or(path.len() - 1, |&i| i) - next;
                stopping = moves + MOVES_PER_CELL * span > max_moves;
            }
            next += 1;
            continue;
        }
        let a = steer_toward(&env.pose, wp, 12.5);
        if stopping && !a.is_rotation() {
            break;
        }
        let prev = env.pose.fine_cell();
        let out = env.step(a).expect("probe env has no step cap");
        if a.is_rotation() {
            rotations += 1;
        } else {
            moves += 1;
        }
        last = Some((a, out.reward));
        belief = observe(&env, prev, last, &mut state);
    }
    let true_cell = true_cell_index(&env.pose, &maze);
    let argmax_correct = belief.argmax() == true_cell;
    ProbeOutcome {
        localized: argmax_correct && belief.entropy_norm < entropy_goal,
        argmax_correct,
        entropy: belief.entropy_norm,
        moves,
        belief,
        true_cell,
        final_state: state,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::generate_maze;

    #[test]
    fn steering_reaches_goal() {
        let maze = Arc::new(generate_maze(9, 4).unwrap());
        let mut env = EnvState::new(maze.clone(), EnvConfig::default(), 42.0);
        let goal = maze.target();
        let mut f = PathFollower::new(&maze, &env.pose, goal);
        for _ in 0..600 {
            match f.action(&env.pose) {
                Some(a) => {
                    if env.step(a).unwrap().done {
                        break;
                    }
                }
                None => break,
            }
        }
        assert!(env.success);
    }

    #[test]
    fn path_endpoints() {
        let maze = generate_maze(7, 1).unwrap();
        let p = cell_path(&maze, maze.spawn(), maze.target());
        assert_eq!(p.first(), Some(&maze.spawn()));
        assert_eq!(p.last(), Some(&maze.target()));
        for w in p.windows(2) {
            assert_eq!(w[0].0.abs_diff(w[1].0) + w[0].1.abs_diff(w[1].1), 1);
        }
    }
}
