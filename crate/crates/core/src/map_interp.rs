//! Map interpretation: a small conv net turns the map image into a
//! 3-channel reward map, which is classified per maze cell and fed to a
//! parameter-free shortest-path planner queried with the belief.

use rand::Rng;

use crate::localization::Belief;
use crate::maze::FINE;
use crate::numerics::init::Conv;
use crate::numerics::{ConvSpec, Grid2D, NumericsError, ParamSet, Tape, Tensor, Var};
use crate::vlm::InvalidBatch;

/// Channel order of the reward map.
pub const WALL: usize = 0;
pub const NAVIGABLE: usize = 1;
pub const TARGET: usize = 2;
pub const CHANNELS: usize = 3;

pub const CLASSIFY_TEMPERATURE: f64 = 0.01;
pub const PLAN_ITERATIONS: usize = 200;
/// Classified values at or above this count as target cells.
pub const TARGET_THRESHOLD: f64 = 0.995;
/// Classified values below this are walls.
pub const WALL_THRESHOLD: f64 = 0.5;
pub const Q_FLOOR: f64 = 1e-12;

/// Directions of the short term target direction, in output order.
pub const DIRECTIONS: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

/// Neighbour log values differ by `2 |ln 0.99|` on the grid, so this gives a
/// logit gap of 20 between improving and worsening moves.
pub fn plan_temperature() -> f64 {
    0.99f64.ln().abs() / 10.0
}

/// Extrinsic-reward class of a frame; doubles as reward-map channel index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum RewardClass {
    Negative,
    Zero,
    Positive,
}

impl RewardClass {
    pub const ALL: [RewardClass; 3] = [RewardClass::Negative, RewardClass::Zero, RewardClass::Positive];

    pub fn of(reward: f64) -> Self {
        if reward > 0.0 {
            RewardClass::Positive
        } else if reward < 0.0 {
            RewardClass::Negative
        } else {
            RewardClass::Zero
        }
    }

    pub fn channel(self) -> usize {
        match self {
            RewardClass::Negative => WALL,
            RewardClass::Zero => NAVIGABLE,
            RewardClass::Positive => TARGET,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapInterpNet {
    pub conv1: Conv,
    pub conv2: Conv,
}

const HIDDEN: usize = 8;

fn spec(in_channels: usize, filters: usize, rows: usize, cols: usize) -> ConvSpec {
    ConvSpec { in_channels, in_rows: rows, in_cols: cols, filters, kernel: 3, stride: 1, pad: 1 }
}

impl MapInterpNet {
    pub fn register(set: &mut ParamSet, rng: &mut impl Rng) -> Result<Self, NumericsError> {
        // weight shapes do not depend on the map size; specs are rebuilt per map
        let conv1 = Conv::register(set, "mapint/conv1", spec(1, HIDDEN, 3, 3), rng)?;
        let conv2 = Conv::register(set, "mapint/conv2", spec(HIDDEN, CHANNELS, 3, 3), rng)?;
        Ok(MapInterpNet { conv1, conv2 })
    }

    pub fn lookup(set: &ParamSet) -> Option<Self> {
        let get = |name: &str, s: ConvSpec| Some(Conv { w: set.id(&format!("{name}.w"))?, b: set.id(&format!("{name}.b"))?, spec: s });
        Some(MapInterpNet { conv1: get("mapint/conv1", spec(1, HIDDEN, 3, 3))?, conv2: get("mapint/conv2", spec(HIDDEN, CHANNELS, 3, 3))? })
    }

    /// `image` is `1 x R x C`; returns the `3 x R x C` reward map. Only the
    /// hidden layer is rectified, so no output channel can go dead.
    pub fn forward(&self, tape: &mut Tape, set: &ParamSet, image: Var) -> Var {
        let shape = tape.value(image).shape.clone();
        let (rows, cols) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let mut h = image;
        let layers = [(self.conv1, spec(1, HIDDEN, rows, cols), true), (self.conv2, spec(HIDDEN, CHANNELS, rows, cols), false)];
        for (conv, spec, rectify) in layers {
            let (w, b) = (tape.param(conv.w, set), tape.param(conv.b, set));
            let z = tape.conv2d(h, w, b, spec);
            h = if rectify { tape.relu(z) } else { z };
        }
        h
    }

    pub fn reward_map(&self, set: &ParamSet, image: &Grid2D) -> Tensor {
        let mut tape = Tape::new();
        let x = tape.constant(image_tensor(image));
        let rm = self.forward(&mut tape, set, x);
        tape.value(rm).clone()
    }
}

pub fn image_tensor(image: &Grid2D) -> Tensor {
    Tensor { shape: vec![1, image.rows, image.cols], data: image.data.clone() }
}

/// Per-fine-cell planner values from a `3 x R x C` reward map: channel
/// means over each maze cell, sharp softmax, then `1.0 * P(target) +
/// 0.99 * P(navigable)`.
pub fn classify(rm: &Tensor, maze_width: usize) -> Grid2D {
    assert_eq!(rm.shape.len(), 3, "reward map must be 3 x R x C");
    let (rows, cols) = (rm.shape[1], rm.shape[2]);
    assert!(rows == maze_width * FINE && cols == maze_width * FINE, "reward map does not match maze width");
    let plane = rows * cols;
    let mut out = Grid2D::zeros(rows, cols);
    for br in 0..maze_width {
        for bc in 0..maze_width {
            let mut means = [0.0; CHANNELS];
            for (ch, m) in means.iter_mut().enumerate() {
                for dr in 0..FINE {
                    for dc in 0..FINE {
                        *m += rm.data[ch * plane + (br * FINE + dr) * cols + bc * FINE + dc];
                    }
                }
                *m /= (FINE * FINE) as f64;
            }
            let p = crate::numerics::softmax(&means, CLASSIFY_TEMPERATURE);
            let value = p[TARGET] + 0.99 * p[NAVIGABLE];
            for dr in 0..FINE {
                for dc in 0..FINE {
                    out.set(br * FINE + dr, bc * FINE + dc, value);
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanGrid {
    pub rows: usize,
    pub cols: usize,
    /// Per fine cell, distribution over (North, East, South, West).
    pub sttd: Vec<[f64; 4]>,
    /// `1 - v_K`, in `[0, 1]`.
    pub dist: Vec<f64>,
    pub log_v: Vec<f64>,
}

impl PlanGrid {
    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    pub fn uninformed(rows: usize, cols: usize) -> Self {
        PlanGrid {
            rows,
            cols,
            sttd: vec![[0.25; 4]; rows * cols],
            dist: vec![1.0; rows * cols],
            log_v: vec![f64::NEG_INFINITY; rows * cols],
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("no target cell in planner input")]
pub struct NoTargetPlan {
    /// Uniform directions, distance 1 everywhere.
    pub fallback: PlanGrid,
}

/// Softmax over `(-inf allowed)` log values; uniform when all are `-inf`.
fn direction_softmax(values: [f64; 4], temperature: f64) -> [f64; 4] {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return [0.25; 4];
    }
    let mut out = values.map(|v| ((v - max) / temperature).exp());
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

/// Multiplicative shortest-path recursion in log space. Target cells are
/// absorbing at `log 1 = 0`; every other cell takes its own initial log
/// value plus the best neighbour of the previous sweep, so after `k` sweeps
/// a cell at fine distance `d <= k` holds `d * log 0.99`.
pub fn plan(values: &Grid2D, iterations: usize) -> Result<PlanGrid, NoTargetPlan> {
    let (rows, cols) = (values.rows, values.cols);
    let n = rows * cols;
    let init: Vec<f64> = values
        .data
        .iter()
        .map(|&v| if v < WALL_THRESHOLD { f64::NEG_INFINITY } else if v >= TARGET_THRESHOLD { 0.0 } else { v.ln() })
        .collect();
    let is_target: Vec<bool> = values.data.iter().map(|&v| v >= TARGET_THRESHOLD).collect();
    if !is_target.iter().any(|&t| t) {
        return Err(NoTargetPlan { fallback: PlanGrid::uninformed(rows, cols) });
    }
    let neighbour = |i: usize, (dr, dc): (isize, isize)| {
        let (r, c) = ((i / cols) as isize + dr, (i % cols) as isize + dc);
        (r >= 0 && c >= 0 && r < rows as isize && c < cols as isize).then(|| r as usize * cols + c as usize)
    };
    let best_neighbour = |l: &[f64], i: usize| {
        DIRECTIONS.iter().filter_map(|&d| neighbour(i, d)).map(|j| l[j]).fold(f64::NEG_INFINITY, f64::max)
    };
    let mut l = init.clone();
    let mut next = vec![0.0; n];
    for _ in 0..iterations {
        for i in 0..n {
            next[i] = if is_target[i] || init[i] == f64::NEG_INFINITY { init[i] } else { init[i] + best_neighbour(&l, i) };
        }
        std::mem::swap(&mut l, &mut next);
    }
    let t = plan_temperature();
    let sttd = (0..n)
        .map(|i| {
            let vals = DIRECTIONS.map(|d| neighbour(i, d).map_or(f64::NEG_INFINITY, |j| l[j]));
            if init[i] == f64::NEG_INFINITY {
                [0.25; 4]
            } else {
                direction_softmax(vals, t)
            }
        })
        .collect();
    let dist = l.iter().map(|&x| (1.0 - x.exp()).clamp(0.0, 1.0)).collect();
    Ok(PlanGrid { rows, cols, sttd, dist, log_v: l })
}

/// Plan from a ground-truth or classified grid, replacing a missing target
/// by the uninformed fallback.
pub fn plan_or_fallback(values: &Grid2D, iterations: usize) -> PlanGrid {
    plan(values, iterations).unwrap_or_else(|e| e.fallback)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanQuery {
    pub sttd: [f64; 4],
    pub dist: f64,
}

/// Belief-weighted plan lookup.
pub fn query_plan(plan: &PlanGrid, belief: &Belief) -> PlanQuery {
    assert_eq!(plan.len(), belief.p.len(), "belief does not match plan");
    let mut sttd = [0.0; 4];
    let mut dist = 0.0;
    for (i, &p) in belief.p.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (acc, s) in sttd.iter_mut().zip(plan.sttd[i]) {
            *acc += p * s;
        }
        dist += p * plan.dist[i];
    }
    let total: f64 = sttd.iter().sum();
    if (total - 1.0).abs() < 1e-12 {
        // already normalized; keeps one-hot queries exact
    } else if total > 0.0 {
        sttd.iter_mut().for_each(|s| *s /= total);
    } else {
        sttd = [0.25; 4];
    }
    PlanQuery { sttd, dist }
}

/// One reward-map training sample.
pub struct RewardSample<'a> {
    /// Map image (raster with target X).
    pub image: &'a Grid2D,
    pub belief: &'a [f64],
    pub class: RewardClass,
    /// Fine-cell offset from the believed cell to where the reward arose
    /// (the wall that was hit for negative frames, zero otherwise).
    pub offset: (isize, isize),
}

/// `sum_frames -ln q_class`, with `q = sum_i p_i softmax(rm at i + offset)`.
pub fn reward_map_loss(tape: &mut Tape, net: &MapInterpNet, set: &ParamSet, batch: &[RewardSample<'_>]) -> Result<Var, InvalidBatch> {
    if batch.is_empty() {
        return Err(InvalidBatch("empty reward-map batch"));
    }
    // frames from the same maze share one forward pass
    let mut cache: Vec<(*const Grid2D, Var)> = Vec::new();
    let mut terms = Vec::with_capacity(batch.len());
    for s in batch {
        let (rows, cols) = (s.image.rows, s.image.cols);
        if s.belief.len() != rows * cols {
            return Err(InvalidBatch("belief does not match map"));
        }
        let key = s.image as *const Grid2D;
        let probs = match cache.iter().find(|(k, _)| *k == key) {
            Some(&(_, v)) => v,
            None => {
                let x = tape.constant(image_tensor(s.image));
                let rm = net.forward(tape, set, x);
                let v = tape.channel_softmax(rm);
                cache.push((key, v));
                v
            }
        };
        let plane = rows * cols;
        let mut mask = vec![0.0; CHANNELS * plane];
        let ch = s.class.channel();
        for (i, &p) in s.belief.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let r = ((i / cols) as isize + s.offset.0).clamp(0, rows as isize - 1) as usize;
            let c = ((i % cols) as isize + s.offset.1).clamp(0, cols as isize - 1) as usize;
            mask[ch * plane + r * cols + c] += p;
        }
        let m = tape.constant(Tensor { shape: vec![CHANNELS, rows, cols], data: mask });
        let q = tape.dot(probs, m);
        let lq = tape.log_floor(q, Q_FLOOR);
        terms.push(tape.scale(lq, -1.0));
    }
    let all = tape.concat(&terms);
    Ok(tape.sum(all))
}
