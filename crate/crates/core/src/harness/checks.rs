//! Self-checks: module gradients, planner against BFS, oracle localization.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{a3c_loss, discounted_returns, A3cConfig, A3cStep, AgentInput};
use crate::localization::{localization_loss, LocTruth, RlcInputs, RlcState, RlcVars};
use crate::map_interp::{plan, reward_map_loss, RewardClass, RewardSample, DIRECTIONS, PLAN_ITERATIONS};
use crate::maze::{
    discretize_angle, generate_maze, map_image, rasterize_map, render, true_visible_local_map, window, Action, MazeSpec, Pose,
    RenderConfig,
};
use crate::numerics::{finite_diff_check, GradCheckConfig, GradCheckReport, Grads, Grid2D, ParamSet, Tape, Tensor};
use crate::training::{Model, ModelConfig};
use crate::vlm::{vlm_loss, VlmSample};

use super::probe::localization_probe;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const PROBE_SIZE: usize = 7;
pub const PROBE_MOVES: usize = 30;
pub const PROBE_ENTROPY: f64 = 0.2;
pub const PROBE_PASS_RATE: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct SelfCheckReport {
    pub items: Vec<CheckItem>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }
}

/// Finite-difference check of `f` at `set`, reported as one item.
pub fn gradient_check(name: &str, set: &ParamSet, cfg: &GradCheckConfig, f: impl FnMut(&ParamSet) -> (f64, Grads)) -> CheckItem {
    let report: GradCheckReport = finite_diff_check(set, cfg, f);
    let detail = match &report.worst {
        Some(w) => format!(
            "max rel err {:.2e} over {} coords (worst {}[{}]: analytic {:.6e}, numeric {:.6e})",
            report.max_rel_error, report.checked, w.param, w.index, w.analytic, w.numeric
        ),
        None => format!("max rel err {:.2e} over {} coords", report.max_rel_error, report.checked),
    };
    CheckItem { name: name.to_string(), passed: report.passed(GRAD_TOLERANCE), detail }
}

fn random_input(rng: &mut impl Rng) -> AgentInput {
    let raw: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.1..1.0));
    let s: f64 = raw.iter().sum();
    AgentInput {
        angle: discretize_angle(rng.gen_range(0.0..360.0)),
        last_reward: rng.gen_range(-0.1..0.1),
        entropy: rng.gen_range(0.0..1.0),
        sttd: raw.map(|x| x / s),
        target_dist: rng.gen_range(0.0..1.0),
    }
}

/// Pose strictly inside a navigable fine cell, away from cell borders.
fn random_pose(maze: &MazeSpec, rng: &mut impl Rng) -> Pose {
    let cells = maze.navigable_cells();
    let (r, c) = cells[rng.gen_range(0..cells.len())];
    Pose {
        row: (3 * r) as f64 + rng.gen_range(1.2..1.8),
        col: (3 * c) as f64 + rng.gen_range(1.2..1.8),
        heading: rng.gen_range(0.0..360.0),
        vel: (0.0, 0.0),
    }
}

/// Gradient checks of the four module losses at freshly initialized
/// parameters drawn from `seed`.
pub fn module_gradient_checks(seed: u64) -> Vec<CheckItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (model, set) = Model::init(&ModelConfig::default(), &mut rng).expect("default model is consistent");
    let cfg = GradCheckConfig { coords_per_tensor: 8, seed, ..Default::default() };
    let maze = generate_maze(5, seed).expect("valid size");
    let l = model.local_size();
    let mut items = Vec::new();

    let poses: Vec<Pose> = (0..2).map(|_| random_pose(&maze, &mut rng)).collect();
    let obs: Vec<_> = poses.iter().map(|p| render(&maze, p, &RenderConfig::default())).collect();
    let targets: Vec<Grid2D> = poses.iter().map(|p| true_visible_local_map(&maze, p, l).grid).collect();
    items.push(gradient_check("vlm", &set, &cfg, |s| {
        let batch: Vec<_> = obs.iter().zip(&targets).map(|(o, t)| VlmSample { obs: o, target: t }).collect();
        let mut tape = Tape::new();
        let loss = vlm_loss(&mut tape, &model.vlm, s, &batch).expect("non-empty batch");
        (tape.scalar(loss), tape.backward(loss))
    }));

    let map = rasterize_map(&maze).grid;
    let vs: Vec<Grid2D> = (0..3).map(|_| Grid2D::from_fn(l, l, |_, _| rng.gen_range(-0.2..0.2))).collect();
    let inputs: Vec<RlcInputs> = (0..3)
        .map(|_| RlcInputs {
            angle: discretize_angle(rng.gen_range(0.0..360.0)),
            last_action: Action::from_index(rng.gen_range(0..Action::COUNT)),
            last_reward: 0.0,
        })
        .collect();
    let n = maze.fine_width();
    let truths: Vec<LocTruth> = (0..3)
        .map(|_| {
            let p = random_pose(&maze, &mut rng);
            let (r, c) = p.fine_cell();
            LocTruth { cell: r * n + c, coords: (r as f64 + 0.5, c as f64 + 0.5) }
        })
        .collect();
    let last = truths[2].cell;
    let true_lm = window(&map, last / n, last % n, l);
    items.push(gradient_check("localization", &set, &cfg, |s| {
        let mut tape = Tape::new();
        let mut state = RlcVars::constant(&mut tape, &RlcState::fresh(l));
        let mv = tape.constant(Tensor::from(&map));
        let mut steps = Vec::new();
        for (v, inp) in vs.iter().zip(&inputs) {
            let vv = tape.constant(Tensor::from(v));
            let out = model.rlc.step(&mut tape, s, state, vv, mv, inp, None);
            state = out.state;
            steps.push(out);
        }
        let loss = localization_loss(&mut tape, &steps, &truths, n, &true_lm).expect("aligned rollout");
        let parts = tape.concat(&[loss.xent, loss.dist, loss.local_map]);
        let total = tape.sum(parts);
        (tape.scalar(total), tape.backward(total))
    }));

    let image = map_image(&maze);
    let beliefs: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            let raw: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
        .collect();
    items.push(gradient_check("map_interp", &set, &cfg, |s| {
        let batch: Vec<_> = RewardClass::ALL
            .iter()
            .zip(&beliefs)
            .map(|(&class, b)| RewardSample { image: &image, belief: b, class, offset: (0, 0) })
            .collect();
        let mut tape = Tape::new();
        let loss = reward_map_loss(&mut tape, &model.mapint, s, &batch).expect("non-empty batch");
        (tape.scalar(loss), tape.backward(loss))
    }));

    let rollout: Vec<(AgentInput, usize, f64)> =
        (0..5).map(|_| (random_input(&mut rng), rng.gen_range(0..Action::COUNT), rng.gen_range(-1.0..1.0))).collect();
    let rewards: Vec<f64> = rollout.iter().map(|r| r.2).collect();
    let returns = discounted_returns(&rewards, 0.0, A3cConfig::default().gamma);
    let frozen: Vec<f64> = returns.iter().zip(&rollout).map(|(r, (x, _, _))| r - model.agent.run(&set, x).1).collect();
    items.push(gradient_check("agent", &set, &cfg, |s| {
        // The loss holds advantages fixed; the added sum of
        // log pi(a) * (A(theta) - A0) makes finite differences see the same.
        let mut tape = Tape::new();
        let steps: Vec<_> = rollout
            .iter()
            .map(|(x, a, r)| {
                let xv = tape.constant(Tensor::vector(x.features()));
                let out = model.agent.forward(&mut tape, s, xv);
                A3cStep { logits: out.logits, value: out.value, action: *a, reward: *r }
            })
            .collect();
        let loss = a3c_loss(&mut tape, &steps, 0.0, &A3cConfig::default()).expect("non-empty rollout");
        let mut terms = vec![loss.total];
        for ((st, &ret), &a0) in steps.iter().zip(&returns).zip(&frozen) {
            let live = ret - tape.scalar(st.value);
            let logp = tape.log_softmax(st.logits);
            let lp = tape.pick(logp, st.action);
            terms.push(tape.scale(lp, live - a0));
        }
        let all = tape.concat(&terms);
        let total = tape.sum(all);
        (tape.scalar(total), tape.backward(total))
    }));
    items
}

/// Planner on ground truth against BFS: within the iteration horizon the
/// most likely direction steps one closer to the target, and the distance
/// measure strictly increases with BFS distance.
pub fn planner_check(maze: &MazeSpec) -> Result<(), String> {
    let n = maze.fine_width();
    let values = Grid2D::from_vec(n, n, maze.ground_truth_values()).expect("square fine grid");
    let p = plan(&values, PLAN_ITERATIONS).map_err(|e| e.to_string())?;
    let bfs = maze.fine_distance_to_target();
    let mut by_dist: Vec<(u32, f64)> = Vec::new();
    for i in 0..n * n {
        let Some(d) = bfs[i] else { continue };
        if d as usize > PLAN_ITERATIONS {
            continue;
        }
        by_dist.push((d, p.dist[i]));
        if d == 0 {
            continue;
        }
        let s = p.sttd[i];
        let best = (0..4).fold(0, |b, k| if s[k] > s[b] { k } else { b });
        let (dr, dc) = DIRECTIONS[best];
        let (r, c) = ((i / n) as isize + dr, (i % n) as isize + dc);
        let j = r as usize * n + c as usize;
        if r < 0 || c < 0 || r >= n as isize || c >= n as isize || bfs[j] != Some(d - 1) {
            return Err(format!("maze {}x{} seed {}: cell {i} at distance {d} points to {:?}", maze.width(), maze.width(), maze.seed(), bfs.get(j)));
        }
    }
    by_dist.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    for w in by_dist.windows(2) {
        let ((d0, m0), (d1, m1)) = (w[0], w[1]);
        if (d0 == d1 && m0 != m1) || (d0 < d1 && m0 >= m1) {
            return Err(format!("maze seed {}: distance measure not monotone ({d0}: {m0}, {d1}: {m1})", maze.seed()));
        }
    }
    Ok(())
}

pub fn planner_suite(mazes: &[MazeSpec]) -> CheckItem {
    let failures: Vec<String> = mazes.iter().filter_map(|m| planner_check(m).err()).collect();
    CheckItem {
        name: "planner_vs_bfs".into(),
        passed: failures.is_empty(),
        detail: match failures.first() {
            None => format!("{} mazes agree", mazes.len()),
            Some(e) => format!("{} of {} mazes disagree; first: {e}", failures.len(), mazes.len()),
        },
    }
}

/// `count` mazes cycling through the odd sizes 5..=21.
pub fn planner_mazes(count: usize, seed: u64) -> Vec<MazeSpec> {
    (0..count).map(|k| generate_maze(5 + 2 * (k % 9), seed.wrapping_add(k as u64)).expect("valid size")).collect()
}

/// Oracle localization probe on `trials` seeded 7x7 mazes.
pub fn probe_suite(trials: usize, seed: u64) -> CheckItem {
    let mut set = ParamSet::new();
    let rlc = crate::localization::RlcNet::register(&mut set, &Default::default(), &mut ChaCha8Rng::seed_from_u64(seed))
        .expect("fresh parameter set");
    let ok = (0..trials)
        .filter(|&k| {
            let s = seed.wrapping_add(k as u64);
            let maze = Arc::new(generate_maze(PROBE_SIZE, s).expect("valid size"));
            localization_probe(&rlc, &set, maze, s, PROBE_MOVES, PROBE_ENTROPY).localized
        })
        .count();
    let rate = ok as f64 / trials.max(1) as f64;
    CheckItem {
        name: "localization_probe".into(),
        passed: trials > 0 && rate >= PROBE_PASS_RATE,
        detail: format!("{ok}/{trials} trials localized (argmax correct, H < {PROBE_ENTROPY})"),
    }
}

pub fn selfcheck(seed: u64) -> SelfCheckReport {
    let mut items: Vec<CheckItem> = module_gradient_checks(seed)
        .into_iter()
        .map(|i| CheckItem { name: format!("gradient_{}", i.name), ..i })
        .collect();
    items.push(planner_suite(&planner_mazes(20, seed)));
    items.push(probe_suite(100, 1000));
    SelfCheckReport { items }
}
