//! Recurrent localization cell: egomotion estimate, egocentric local-map
//! integration and map correlation yielding a belief over fine cells.
//!
//! The 3x3 egomotion grid is indexed `(drow + 1, dcol + 1)`; index `(0, 1)`
//! is a one-cell move north.

use rand::Rng;

use crate::maze::{Action, AngleCode, ANGLE_BINS};
use crate::numerics::init::Dense;
use crate::numerics::{CorrGeometry, Grid2D, NumericsError, ParamId, ParamSet, Tape, Tensor, Var};
use crate::vlm::InvalidBatch;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RlcConfig {
    pub hidden: usize,
    pub lambda_init: f64,
    pub belief_temperature: f64,
    pub local_size: usize,
}

impl Default for RlcConfig {
    fn default() -> Self {
        RlcConfig { hidden: 32, lambda_init: 0.1, belief_temperature: 1.0, local_size: 15 }
    }
}

const F_INPUTS: usize = 9 + ANGLE_BINS + Action::COUNT + 1;

#[derive(Clone, Debug)]
pub struct RlcNet {
    pub f1: Dense,
    pub f2: Dense,
    pub lambda: ParamId,
    pub cfg: RlcConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlcState {
    pub s_prev: Grid2D,
    pub lm_est: Grid2D,
    pub lm_mfb: Grid2D,
}

impl RlcState {
    /// Episode start: no map knowledge, "stayed in place" egomotion.
    pub fn fresh(local_size: usize) -> Self {
        let mut s = Grid2D::zeros(3, 3);
        s.set(1, 1, 1.0);
        RlcState { s_prev: s, lm_est: Grid2D::zeros(local_size, local_size), lm_mfb: Grid2D::zeros(local_size, local_size) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    pub p: Vec<f64>,
    pub entropy_norm: f64,
}

impl Belief {
    pub fn new(p: Vec<f64>) -> Self {
        let entropy_norm = normalized_entropy(&p);
        Belief { p, entropy_norm }
    }

    pub fn uniform(n: usize) -> Self {
        Belief::new(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, i: usize) -> Self {
        let mut p = vec![0.0; n];
        p[i] = 1.0;
        Belief { p, entropy_norm: 0.0 }
    }

    pub fn argmax(&self) -> usize {
        self.p.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0
    }

    /// Indices and probabilities of the `k` most likely cells, descending.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<usize> = (0..self.p.len()).collect();
        idx.sort_by(|&a, &b| self.p[b].total_cmp(&self.p[a]).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|i| (i, self.p[i])).collect()
    }
}

/// `-sum p log p / log N`; zero for a single cell.
pub fn normalized_entropy(p: &[f64]) -> f64 {
    if p.len() < 2 {
        return 0.0;
    }
    let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    (h / (p.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Per-step side inputs of the cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RlcInputs {
    pub angle: AngleCode,
    pub last_action: Option<Action>,
    pub last_reward: f64,
}

impl RlcInputs {
    fn features(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(F_INPUTS - 9);
        v.extend_from_slice(&self.angle.bits());
        let mut a = [0.0; Action::COUNT];
        if let Some(act) = self.last_action {
            a[act.index()] = 1.0;
        }
        v.extend_from_slice(&a);
        v.push(self.last_reward);
        v
    }
}

/// Recurrent state on a tape.
#[derive(Clone, Copy, Debug)]
pub struct RlcVars {
    pub s_prev: Var,
    pub lm_est: Var,
    pub lm_mfb: Var,
}

impl RlcVars {
    pub fn constant(tape: &mut Tape, state: &RlcState) -> Self {
        RlcVars {
            s_prev: tape.constant(Tensor::from(&state.s_prev)),
            lm_est: tape.constant(Tensor::from(&state.lm_est)),
            lm_mfb: tape.constant(Tensor::from(&state.lm_mfb)),
        }
    }

    pub fn read(&self, tape: &Tape) -> RlcState {
        RlcState {
            s_prev: tape.value(self.s_prev).to_grid(),
            lm_est: tape.value(self.lm_est).to_grid(),
            lm_mfb: tape.value(self.lm_mfb).to_grid(),
        }
    }
}

/// Outputs of one step on a tape.
#[derive(Clone, Copy, Debug)]
pub struct RlcStepVars {
    pub state: RlcVars,
    pub s: Var,
    /// Belief, flat of length `N`.
    pub p: Var,
    /// Log belief, flat of length `N`.
    pub log_p: Var,
}

/// Match of the previous local map against the new excerpt at the nine
/// offsets: `out[o] = sum_x lm[x + o] * v[x]`.
pub fn ego_geometry(l: usize) -> CorrGeometry {
    CorrGeometry { in_rows: l, in_cols: l, k_rows: l, k_cols: l, out_rows: 3, out_cols: 3, origin_row: 1, origin_col: 1 }
}

/// Shift by a 3x3 offset distribution: `out[x] = sum_o grid[x + o] * s[o]`.
pub fn shift_geometry(l: usize) -> CorrGeometry {
    CorrGeometry { in_rows: l, in_cols: l, k_rows: 3, k_cols: 3, out_rows: l, out_cols: l, origin_row: 1, origin_col: 1 }
}

/// One logit per map cell: correlation of the zero-padded window around the
/// cell with the local map.
pub fn belief_geometry(l: usize, rows: usize, cols: usize) -> CorrGeometry {
    let h = (l / 2) as isize;
    CorrGeometry { in_rows: rows, in_cols: cols, k_rows: l, k_cols: l, out_rows: rows, out_cols: cols, origin_row: h, origin_col: h }
}

/// Belief-weighted sum of map windows: the belief acts as the kernel.
pub fn feedback_geometry(l: usize, rows: usize, cols: usize) -> CorrGeometry {
    let h = (l / 2) as isize;
    CorrGeometry { in_rows: rows, in_cols: cols, k_rows: rows, k_cols: cols, out_rows: l, out_cols: l, origin_row: h, origin_col: h }
}

fn apply(geom: &CorrGeometry, input: &Grid2D, kernel: &Grid2D) -> Grid2D {
    let mut out = Grid2D::zeros(geom.out_rows, geom.out_cols);
    geom.forward(&input.data, &kernel.data, &mut out.data);
    out
}

pub fn shift(grid: &Grid2D, s: &Grid2D) -> Grid2D {
    apply(&shift_geometry(grid.rows), grid, s)
}

/// One-hot egomotion for a fine-cell displacement in `{-1,0,1}^2`.
pub fn egomotion_one_hot(drow: isize, dcol: isize) -> Grid2D {
    let mut s = Grid2D::zeros(3, 3);
    s.set((drow.clamp(-1, 1) + 1) as usize, (dcol.clamp(-1, 1) + 1) as usize, 1.0);
    s
}

impl RlcNet {
    pub fn register(set: &mut ParamSet, cfg: &RlcConfig, rng: &mut impl Rng) -> Result<Self, NumericsError> {
        let f1 = Dense::register(set, "rlc/f1", F_INPUTS, cfg.hidden, rng)?;
        let f2 = Dense::register(set, "rlc/f2", cfg.hidden, 9, rng)?;
        let lambda = set.add("rlc/lambda", Tensor::scalar(cfg.lambda_init))?;
        Ok(RlcNet { f1, f2, lambda, cfg: cfg.clone() })
    }

    pub fn lookup(set: &ParamSet, cfg: &RlcConfig) -> Option<Self> {
        Some(RlcNet {
            f1: Dense::lookup(set, "rlc/f1")?,
            f2: Dense::lookup(set, "rlc/f2")?,
            lambda: set.id("rlc/lambda")?,
            cfg: cfg.clone(),
        })
    }

    /// `softmax(f(s_prev, angle, a, r) + lm_est * v)` as a 3x3 grid.
    pub fn egomotion(&self, tape: &mut Tape, set: &ParamSet, state: &RlcVars, v: Var, inputs: &RlcInputs) -> Var {
        let side = tape.constant(Tensor::vector(inputs.features()));
        let s_flat = tape.reshape(state.s_prev, &[9]);
        let x = tape.concat(&[s_flat, side]);
        let h = self.f1.forward_relu(tape, set, x);
        let f = self.f2.forward(tape, set, h);
        let f = tape.reshape(f, &[3, 3]);
        let m = tape.correlate(state.lm_est, v, ego_geometry(self.cfg.local_size));
        let logits = tape.add(f, m);
        tape.softmax(logits, 1.0)
    }

    /// One filter step. `map` is the `R x C` raster as a constant; `ego`
    /// overrides the learned egomotion when given.
    pub fn step(
        &self,
        tape: &mut Tape,
        set: &ParamSet,
        state: RlcVars,
        v: Var,
        map: Var,
        inputs: &RlcInputs,
        ego: Option<&Grid2D>,
    ) -> RlcStepVars {
        let l = self.cfg.local_size;
        let s = match ego {
            Some(g) => tape.constant(Tensor::from(g)),
            None => self.egomotion(tape, set, &state, v, inputs),
        };
        let shifted = tape.correlate(state.lm_est, s, shift_geometry(l));
        let sum = tape.add(shifted, v);
        let lm_est = tape.clip_unit(sum);
        let mfb = tape.correlate(state.lm_mfb, s, shift_geometry(l));
        let lambda = tape.param(self.lambda, set);
        let mfb = tape.scale_by(mfb, lambda);
        let combined = tape.add(lm_est, mfb);
        let combined = tape.clip_unit(combined);
        let shape = tape.value(map).shape.clone();
        let (rows, cols) = (shape[0], shape[1]);
        let logits = tape.correlate(map, combined, belief_geometry(l, rows, cols));
        let t = self.cfg.belief_temperature;
        let p = tape.softmax(logits, t);
        let scaled = tape.scale(logits, 1.0 / t);
        let log_p = tape.log_softmax(scaled);
        let lm_mfb = tape.correlate(map, p, feedback_geometry(l, rows, cols));
        let p = tape.reshape(p, &[rows * cols]);
        let log_p = tape.reshape(log_p, &[rows * cols]);
        RlcStepVars { state: RlcVars { s_prev: s, lm_est, lm_mfb }, s, p, log_p }
    }

    /// Untaped step for acting. Returns the new state, belief and egomotion.
    pub fn run_step(
        &self,
        set: &ParamSet,
        state: &RlcState,
        v: &Grid2D,
        map: &Grid2D,
        inputs: &RlcInputs,
        ego: Option<&Grid2D>,
    ) -> (RlcState, Belief, Grid2D) {
        let mut tape = Tape::new();
        let vars = RlcVars::constant(&mut tape, state);
        let vv = tape.constant(Tensor::from(v));
        let mv = tape.constant(Tensor::from(map));
        let out = self.step(&mut tape, set, vars, vv, mv, inputs, ego);
        let next = out.state.read(&tape);
        let s = tape.value(out.s).to_grid();
        (next, Belief::new(tape.data(out.p).to_vec()), s)
    }
}

/// Ground truth for one rollout step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocTruth {
    pub cell: usize,
    /// Fine-cell centre `(row, col)`.
    pub coords: (f64, f64),
}

#[derive(Clone, Copy, Debug)]
pub struct LocLoss {
    pub xent: Var,
    pub dist: Var,
    pub local_map: Var,
}

/// Cross-entropy and centroid-distance terms summed over the rollout, plus
/// the local-map term at its last step.
pub fn localization_loss(
    tape: &mut Tape,
    steps: &[RlcStepVars],
    truths: &[LocTruth],
    map_cols: usize,
    true_local_map: &Grid2D,
) -> Result<LocLoss, InvalidBatch> {
    if steps.is_empty() || steps.len() != truths.len() {
        return Err(InvalidBatch("localization rollout is empty or misaligned"));
    }
    let n = tape.value(steps[0].p).len();
    let rows = tape.constant(Tensor::vector((0..n).map(|i| (i / map_cols) as f64 + 0.5).collect()));
    let cols = tape.constant(Tensor::vector((0..n).map(|i| (i % map_cols) as f64 + 0.5).collect()));
    let mut xent = Vec::with_capacity(steps.len());
    let mut dist = Vec::with_capacity(steps.len());
    for (st, tr) in steps.iter().zip(truths) {
        let lp = tape.pick(st.log_p, tr.cell);
        xent.push(tape.scale(lp, -1.0));
        let cr = tape.dot(st.p, rows);
        let cc = tape.dot(st.p, cols);
        let c = tape.concat(&[cr, cc]);
        let truth = tape.constant(Tensor::vector(vec![tr.coords.0, tr.coords.1]));
        let d = tape.sub(c, truth);
        dist.push(tape.norm2(d));
    }
    let xent = tape.concat(&xent);
    let xent = tape.sum(xent);
    let dist = tape.concat(&dist);
    let dist = tape.sum(dist);
    let last = steps.last().unwrap().state.lm_est;
    let target = tape.constant(Tensor::from(true_local_map));
    let diff = tape.sub(last, target);
    let local_map = tape.norm2(diff);
    Ok(LocLoss { xent, dist, local_map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{discretize_angle, generate_maze, rasterize_map, window};
    use crate::numerics::{correlate2d_offsets, finite_diff_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64) -> (ParamSet, RlcNet) {
        let mut set = ParamSet::new();
        let n = RlcNet::register(&mut set, &RlcConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (set, n)
    }

    fn inputs() -> RlcInputs {
        RlcInputs { angle: discretize_angle(90.0), last_action: Some(Action::MoveFwd), last_reward: 0.0 }
    }

    fn random_grid(rng: &mut impl Rng, r: usize, c: usize) -> Grid2D {
        Grid2D::from_fn(r, c, |_, _| rng.gen_range(-0.5..0.5))
    }

    #[test]
    fn shift_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_grid(&mut rng, 15, 15);
        assert_eq!(shift(&g, &egomotion_one_hot(0, 0)), g);
        let north = shift(&g, &egomotion_one_hot(-1, 0));
        for x in 0..15 {
            for y in 0..15 {
                let expect = if x == 0 { 0.0 } else { g.get(x - 1, y) };
                assert_eq!(north.get(x, y), expect);
            }
        }
        let box_blur = shift(&g, &Grid2D::filled(3, 3, 1.0 / 9.0));
        for x in 0..15isize {
            for y in 0..15isize {
                let mut s = 0.0;
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        s += g.get_or_zero(x + dx, y + dy);
                    }
                }
                assert!((box_blur.get(x as usize, y as usize) - s / 9.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_shift_tracks_true_local_map() {
        use crate::maze::{true_local_map, true_visible_local_map, EnvConfig, EnvState};
        use std::sync::Arc;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for seed in 0..5 {
            let maze = Arc::new(generate_maze(9, seed).unwrap());
            let mut env = EnvState::random_start(maze.clone(), EnvConfig::default(), &mut rng);
            let mut lm = true_local_map(&maze, &env.pose, 15).grid;
            for _ in 0..300 {
                let prev = env.pose.fine_cell();
                if env.step(Action::from_index(rng.gen_range(0..Action::COUNT)).unwrap()).unwrap().done {
                    break;
                }
                let (r, c) = env.pose.fine_cell();
                let (dr, dc) = (r as isize - prev.0 as isize, c as isize - prev.1 as isize);
                assert!(dr.abs() <= 1 && dc.abs() <= 1);
                let truth = true_local_map(&maze, &env.pose, 15).grid;
                let shifted = shift(&lm, &egomotion_one_hot(dr, dc));
                for u in 1..14 {
                    for v in 1..14 {
                        assert_eq!(shifted.get(u, v), truth.get(u, v));
                    }
                }
                let vis = true_visible_local_map(&maze, &env.pose, 15).grid;
                for (a, b) in vis.data.iter().zip(&truth.data) {
                    assert!(*a == 0.0 || a == b);
                }
                lm = truth;
            }
        }
    }

    #[test]
    fn egomotion_zero_map_and_east_match() {
        let (mut set, net) = net(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_grid(&mut rng, 15, 15);
        let state = RlcState::fresh(15);
        let mut tape = Tape::new();
        let sv = RlcVars::constant(&mut tape, &state);
        let vv = tape.constant(Tensor::from(&v));
        let s = net.egomotion(&mut tape, &set, &sv, vv, &inputs());
        let s_val = tape.data(s).to_vec();
        assert!((s_val.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // zero lm_est: equals softmax of f alone
        let side = inputs().features();
        let mut x = state.s_prev.data.clone();
        x.extend(side);
        let h = crate::numerics::dense(&x, &set.get(net.f1.w).data, &set.get(net.f1.b).data, true).unwrap();
        let f = crate::numerics::dense(&h, &set.get(net.f2.w).data, &set.get(net.f2.b).data, false).unwrap();
        let expect = crate::numerics::softmax(&f, 1.0);
        for i in 0..9 {
            assert!((s_val[i] - expect[i]).abs() < 1e-12);
        }

        // f == 0 and lm_est = v moved one cell east
        set.get_mut(net.f2.w).data.iter_mut().for_each(|w| *w = 0.0);
        set.get_mut(net.f2.b).data.iter_mut().for_each(|w| *w = 0.0);
        let lm = Grid2D::from_fn(15, 15, |x, y| if y == 0 { 0.0 } else { v.get(x, y - 1) });
        let oracle = correlate2d_offsets(&lm, &v, 1);
        let mut tape = Tape::new();
        let sv = RlcVars::constant(&mut tape, &RlcState { lm_est: lm, ..state });
        let vv = tape.constant(Tensor::from(&v));
        let s = net.egomotion(&mut tape, &set, &sv, vv, &inputs());
        let sd = tape.data(s);
        let arg = (0..9).max_by(|&a, &b| sd[a].total_cmp(&sd[b])).unwrap();
        assert_eq!(arg, 5);
        let o_arg = (0..9).max_by(|&a, &b| oracle.data[a].total_cmp(&oracle.data[b])).unwrap();
        assert_eq!(o_arg, 5);
    }

    #[test]
    fn fresh_state_gives_uniform_belief() {
        let (set, net) = net(4);
        let m = generate_maze(7, 2).unwrap();
        let map = rasterize_map(&m).grid;
        let v = Grid2D::zeros(15, 15);
        let (_, b, _) = net.run_step(&set, &RlcState::fresh(15), &v, &map, &inputs(), None);
        assert!(b.p.iter().all(|&x| (x - 1.0 / 441.0).abs() < 1e-12));
        assert!((b.entropy_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_window_is_argmax_over_brute_force() {
        let (set, net) = net(5);
        let m = generate_maze(9, 6).unwrap();
        let map = rasterize_map(&m).grid;
        let n = map.rows;
        // brute force over all cells; keep windows that are the unique best match
        let mut found = 0;
        for j in (0..n * n).step_by(37) {
            let w = window(&map, j / n, j % n, 15);
            let scores: Vec<f64> = (0..n * n)
                .map(|i| {
                    let g = window(&map, i / n, i % n, 15);
                    g.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
                })
                .collect();
            let best = scores[j];
            if scores.iter().enumerate().any(|(i, &s)| i != j && s >= best) {
                continue;
            }
            found += 1;
            let state = RlcState { lm_est: w.clone(), ..RlcState::fresh(15) };
            let zero = Grid2D::zeros(15, 15);
            let (_, b, _) = net.run_step(&set, &state, &zero, &map, &inputs(), Some(&egomotion_one_hot(0, 0)));
            assert_eq!(b.argmax(), j);
        }
        assert!(found > 5);
    }

    #[test]
    fn one_hot_belief_feedback_is_window() {
        let m = generate_maze(7, 8).unwrap();
        let map = rasterize_map(&m).grid;
        let i = 5 * 21 + 9;
        let p = Grid2D::from_fn(21, 21, |r, c| if r * 21 + c == i { 1.0 } else { 0.0 });
        let fb = apply(&feedback_geometry(15, 21, 21), &map, &p);
        assert_eq!(fb, window(&map, 5, 9, 15));
    }

    #[test]
    fn entropy_values() {
        assert!((normalized_entropy(&[0.25; 4]) - 1.0).abs() < 1e-12);
        assert_eq!(normalized_entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((normalized_entropy(&[0.5, 0.5, 0.0, 0.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        // centroid degeneracy: 0.5/0.5 on (0,0),(0,2) with truth (0,1)
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::vector(vec![0.5, 0.0, 0.5]));
        let log_p = tape.constant(Tensor::vector(vec![0.5f64.ln(), f64::NEG_INFINITY, 0.5f64.ln()]));
        let lm = tape.constant(Tensor::zeros(&[15, 15]));
        let st = RlcStepVars { state: RlcVars { s_prev: lm, lm_est: lm, lm_mfb: lm }, s: lm, p, log_p };
        let l = localization_loss(&mut tape, &[st], &[LocTruth { cell: 1, coords: (0.5, 1.5) }], 3, &Grid2D::zeros(15, 15)).unwrap();
        assert!(tape.scalar(l.dist).abs() < 1e-12);
        assert_eq!(tape.scalar(l.local_map), 0.0);

        let mut tape = Tape::new();
        let p = tape.constant(Tensor::vector(vec![0.0, 1.0, 0.0]));
        let log_p = tape.constant(Tensor::vector(vec![-50.0, 0.0, -50.0]));
        let lm = tape.constant(Tensor::zeros(&[15, 15]));
        let st = RlcStepVars { state: RlcVars { s_prev: lm, lm_est: lm, lm_mfb: lm }, s: lm, p, log_p };
        let l = localization_loss(&mut tape, &[st], &[LocTruth { cell: 1, coords: (0.5, 1.5) }], 3, &Grid2D::zeros(15, 15)).unwrap();
        assert_eq!(tape.scalar(l.xent), 0.0);
        assert_eq!(tape.scalar(l.dist), 0.0);
        assert!(localization_loss(&mut tape, &[], &[], 3, &Grid2D::zeros(15, 15)).is_err());
    }

    /// Gradient of a short unrolled rollout w.r.t. f and lambda; the map and
    /// the excerpts enter as constants.
    #[test]
    fn unrolled_gradients_match_finite_differences() {
        let (set, net) = net(9);
        let m = generate_maze(5, 3).unwrap();
        let map = rasterize_map(&m).grid;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let vs: Vec<Grid2D> = (0..3).map(|_| random_grid(&mut rng, 15, 15).map(|x| 0.4 * x)).collect();
        let truths: Vec<LocTruth> = [(4usize, 4usize), (4, 5), (5, 5)]
            .iter()
            .map(|&(r, c)| LocTruth { cell: r * 15 + c, coords: (r as f64 + 0.5, c as f64 + 0.5) })
            .collect();
        let true_lm = window(&map, 5, 5, 15);
        let report = finite_diff_check(&set, &GradCheckConfig { coords_per_tensor: 40, ..Default::default() }, |s| {
            let mut tape = Tape::new();
            let mut state = RlcVars::constant(&mut tape, &RlcState::fresh(15));
            let mv = tape.constant(Tensor::from(&map));
            let mut steps = Vec::new();
            for v in &vs {
                let vv = tape.constant(Tensor::from(v));
                let out = net.step(&mut tape, s, state, vv, mv, &inputs(), None);
                state = out.state;
                steps.push(out);
            }
            let l = localization_loss(&mut tape, &steps, &truths, 15, &true_lm).unwrap();
            let parts = tape.concat(&[l.xent, l.dist, l.local_map]);
            let total = tape.sum(parts);
            (tape.scalar(total), tape.backward(total))
        });
        assert!(report.passed(1e-4), "{report:?}");
    }
}
