//! Visible-local-map network: first-person image plus heading code to a
//! gated, north-up excerpt of the surrounding map.

use rand::Rng;

use crate::maze::{AngleCode, Observation, ANGLE_BINS};
use crate::numerics::init::{conv_stack, Conv, Dense};
use crate::numerics::{ConvSpec, Grid2D, NumericsError, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct VlmConfig {
    pub image_height: usize,
    pub image_width: usize,
    /// `(filters, kernel, stride)` per convolution layer.
    pub conv: Vec<(usize, usize, usize)>,
    pub visual_units: usize,
    pub merge_units: usize,
    pub local_size: usize,
}

impl Default for VlmConfig {
    fn default() -> Self {
        VlmConfig {
            image_height: 32,
            image_width: 32,
            conv: vec![(8, 5, 2), (16, 3, 2)],
            visual_units: 128,
            merge_units: 128,
            local_size: 15,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VlmNet {
    pub convs: Vec<Conv>,
    pub visual: Dense,
    pub merge: Dense,
    pub excerpt: Dense,
    pub gate: Dense,
    pub local_size: usize,
}

/// Tape handles of one forward pass; each head is `L x L`.
#[derive(Clone, Copy, Debug)]
pub struct VlmVars {
    pub excerpt: Var,
    pub gate: Var,
    pub value: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisibleLocalMap {
    pub excerpt: Grid2D,
    pub gate: Grid2D,
    pub value: Grid2D,
}

fn conv_specs(cfg: &VlmConfig) -> Vec<ConvSpec> {
    let (mut c, mut h, mut w) = (3, cfg.image_height, cfg.image_width);
    cfg.conv
        .iter()
        .map(|&(filters, kernel, stride)| {
            let s = ConvSpec { in_channels: c, in_rows: h, in_cols: w, filters, kernel, stride, pad: 0 };
            (c, h, w) = (filters, s.out_rows(), s.out_cols());
            s
        })
        .collect()
}

impl VlmNet {
    pub fn register(set: &mut ParamSet, cfg: &VlmConfig, rng: &mut impl Rng) -> Result<Self, NumericsError> {
        let specs = conv_specs(cfg);
        let convs = specs
            .iter()
            .enumerate()
            .map(|(i, &s)| Conv::register(set, &format!("vlm/conv{}", i + 1), s, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let features = specs.last().map_or(3 * cfg.image_height * cfg.image_width, |s| s.out_len());
        let l2 = cfg.local_size * cfg.local_size;
        let visual = Dense::register(set, "vlm/visual", features, cfg.visual_units, rng)?;
        let merge = Dense::register(set, "vlm/merge", cfg.visual_units + ANGLE_BINS, cfg.merge_units, rng)?;
        let excerpt = Dense::register(set, "vlm/excerpt", cfg.merge_units, l2, rng)?;
        let gate = Dense::register(set, "vlm/gate", cfg.merge_units, l2, rng)?;
        Ok(VlmNet { convs, visual, merge, excerpt, gate, local_size: cfg.local_size })
    }

    /// Rebinds to parameters already present in `set` (e.g. after loading a
    /// checkpoint).
    pub fn lookup(set: &ParamSet, cfg: &VlmConfig) -> Option<Self> {
        let specs = conv_specs(cfg);
        let convs = specs
            .iter()
            .enumerate()
            .map(|(i, &spec)| {
                let name = format!("vlm/conv{}", i + 1);
                Some(Conv { w: set.id(&format!("{name}.w"))?, b: set.id(&format!("{name}.b"))?, spec })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(VlmNet {
            convs,
            visual: Dense::lookup(set, "vlm/visual")?,
            merge: Dense::lookup(set, "vlm/merge")?,
            excerpt: Dense::lookup(set, "vlm/excerpt")?,
            gate: Dense::lookup(set, "vlm/gate")?,
            local_size: cfg.local_size,
        })
    }

    /// `image` is `3 x H x W`, `angle` the 30 heading bits.
    pub fn forward(&self, tape: &mut Tape, set: &ParamSet, image: Var, angle: Var) -> VlmVars {
        let features = conv_stack(tape, set, &self.convs, image);
        let visual = self.visual.forward_relu(tape, set, features);
        let joined = tape.concat(&[visual, angle]);
        let hidden = self.merge.forward_relu(tape, set, joined);
        let l = self.local_size;
        let e = self.excerpt.forward(tape, set, hidden);
        let e = tape.clip_unit(e);
        let excerpt = tape.reshape(e, &[l, l]);
        let g = self.gate.forward(tape, set, hidden);
        let g = tape.clip_unit(g);
        let g = tape.add_const(g, 0.5);
        let gate = tape.reshape(g, &[l, l]);
        let value = tape.mul(excerpt, gate);
        VlmVars { excerpt, gate, value }
    }

    /// Forward pass on raw inputs.
    pub fn run(&self, set: &ParamSet, obs: &Observation) -> VisibleLocalMap {
        let mut tape = Tape::new();
        let image = tape.constant(image_tensor(obs));
        let angle = tape.constant(angle_tensor(&obs.angle));
        let out = self.forward(&mut tape, set, image, angle);
        VisibleLocalMap {
            excerpt: tape.value(out.excerpt).to_grid(),
            gate: tape.value(out.gate).to_grid(),
            value: tape.value(out.value).to_grid(),
        }
    }
}

pub fn image_tensor(obs: &Observation) -> Tensor {
    Tensor { shape: vec![3, obs.height, obs.width], data: obs.image.iter().map(|&v| v as f64).collect() }
}

pub fn angle_tensor(angle: &AngleCode) -> Tensor {
    Tensor::vector(angle.bits().to_vec())
}

#[derive(Debug, thiserror::Error)]
#[error("invalid batch: {0}")]
pub struct InvalidBatch(pub &'static str);

/// One supervised sample: observation and ground-truth visible excerpt.
pub struct VlmSample<'a> {
    pub obs: &'a Observation,
    pub target: &'a Grid2D,
}

/// Sum over samples of the Euclidean distance between predicted and true
/// excerpts.
pub fn vlm_loss(tape: &mut Tape, net: &VlmNet, set: &ParamSet, batch: &[VlmSample<'_>]) -> Result<Var, InvalidBatch> {
    if batch.is_empty() {
        return Err(InvalidBatch("empty vlm batch"));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for s in batch {
        let image = tape.constant(image_tensor(s.obs));
        let angle = tape.constant(angle_tensor(&s.obs.angle));
        let out = net.forward(tape, set, image, angle);
        let target = tape.constant(Tensor::from(s.target));
        let diff = tape.sub(out.value, target);
        terms.push(tape.norm2(diff));
    }
    let all = tape.concat(&terms);
    Ok(tape.sum(all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{discretize_angle, generate_maze, render, true_visible_local_map, Pose, RenderConfig};
    use crate::numerics::{finite_diff_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (ParamSet, VlmNet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        let net = VlmNet::register(&mut set, &VlmConfig::default(), &mut rng).unwrap();
        (set, net)
    }

    fn random_obs(rng: &mut impl Rng) -> Observation {
        Observation {
            image: (0..3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect(),
            height: 32,
            width: 32,
            angle: discretize_angle(rng.gen_range(0.0..360.0)),
        }
    }

    #[test]
    fn gate_closed_and_open() {
        let (mut set, net) = setup(1);
        let obs = random_obs(&mut ChaCha8Rng::seed_from_u64(2));
        set.get_mut(net.gate.w).data.iter_mut().for_each(|w| *w = 0.0);
        set.get_mut(net.gate.b).data.iter_mut().for_each(|b| *b = -1.0);
        let out = net.run(&set, &obs);
        assert!(out.gate.data.iter().all(|&g| g == 0.0));
        assert!(out.value.data.iter().all(|&v| v == 0.0));
        set.get_mut(net.gate.b).data.iter_mut().for_each(|b| *b = 1.0);
        let out = net.run(&set, &obs);
        assert!(out.gate.data.iter().all(|&g| g == 1.0));
        assert_eq!(out.value, out.excerpt);
    }

    #[test]
    fn output_range_over_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..1000 {
            if k % 100 == 0 {
                // fresh, inflated weights so the clips are exercised
                let (mut set, net) = setup(k);
                let ids: Vec<_> = set.ids().collect();
                for id in ids {
                    set.get_mut(id).data.iter_mut().for_each(|w| *w *= 4.0);
                }
                for _ in 0..100 {
                    let out = net.run(&set, &random_obs(&mut rng));
                    assert!(out.value.data.iter().all(|v| v.abs() <= 0.5));
                    assert!(out.gate.data.iter().all(|g| (0.0..=1.0).contains(g)));
                }
            }
        }
    }

    #[test]
    fn loss_values() {
        let (set, net) = setup(4);
        let obs = random_obs(&mut ChaCha8Rng::seed_from_u64(5));
        let pred = net.run(&set, &obs).value;
        let mut tape = Tape::new();
        let l = vlm_loss(&mut tape, &net, &set, &[VlmSample { obs: &obs, target: &pred }]).unwrap();
        assert!(tape.scalar(l).abs() < 1e-12);

        let mut target = pred.clone();
        target.data[3] -= 0.3;
        target.data[100] += 0.3;
        let mut tape = Tape::new();
        let l = vlm_loss(&mut tape, &net, &set, &[VlmSample { obs: &obs, target: &target }]).unwrap();
        assert!((tape.scalar(l) - 0.3 * 2f64.sqrt()).abs() < 1e-9);
        assert!(vlm_loss(&mut Tape::new(), &net, &set, &[]).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (set, net) = setup(6);
        let m = generate_maze(7, 1).unwrap();
        let (sr, sc) = m.spawn();
        let pose = Pose { row: 3.0 * sr as f64 + 1.4, col: 3.0 * sc as f64 + 1.6, heading: 70.0, vel: (0.0, 0.0) };
        let obs = render(&m, &pose, &RenderConfig::default());
        let target = true_visible_local_map(&m, &pose, 15).grid;
        let cfg = GradCheckConfig { coords_per_tensor: 12, ..Default::default() };
        let report = finite_diff_check(&set, &cfg, |s| {
            let mut tape = Tape::new();
            let l = vlm_loss(&mut tape, &net, s, &[VlmSample { obs: &obs, target: &target }]).unwrap();
            (tape.scalar(l), tape.backward(l))
        });
        assert!(report.passed(1e-4), "{report:?}");
    }
}
