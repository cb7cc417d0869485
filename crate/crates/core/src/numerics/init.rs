//! Parameter-registering layer handles.

use rand::Rng;

use super::params::{ParamId, ParamSet};
use super::tape::{ConvSpec, Tape, Var};
use super::tensor::Tensor;
use super::NumericsError;

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.gen_range(-bound..bound)).collect() }
}

/// Fully connected layer; weights `out x in`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    /// Registers `<name>.w` and `<name>.b`, uniform in `+-1/sqrt(fan_in)`.
    pub fn register(set: &mut ParamSet, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Result<Self, NumericsError> {
        let bound = 1.0 / (inputs as f64).sqrt();
        let w = set.add(&format!("{name}.w"), uniform(rng, &[outputs, inputs], bound))?;
        let b = set.add(&format!("{name}.b"), uniform(rng, &[outputs], bound))?;
        Ok(Dense { w, b, inputs, outputs })
    }

    pub fn lookup(set: &ParamSet, name: &str) -> Option<Self> {
        let w = set.id(&format!("{name}.w"))?;
        let b = set.id(&format!("{name}.b"))?;
        let shape = &set.get(w).shape;
        Some(Dense { w, b, inputs: shape[1], outputs: shape[0] })
    }

    pub fn forward(&self, tape: &mut Tape, set: &ParamSet, x: Var) -> Var {
        let (w, b) = (tape.param(self.w, set), tape.param(self.b, set));
        tape.affine(w, x, b)
    }

    pub fn forward_relu(&self, tape: &mut Tape, set: &ParamSet, x: Var) -> Var {
        let z = self.forward(tape, set, x);
        tape.relu(z)
    }
}

/// Convolution layer; weights `F x C x k x k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn register(set: &mut ParamSet, name: &str, spec: ConvSpec, rng: &mut impl Rng) -> Result<Self, NumericsError> {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = set.add(
            &format!("{name}.w"),
            uniform(rng, &[spec.filters, spec.in_channels, spec.kernel, spec.kernel], bound),
        )?;
        let b = set.add(&format!("{name}.b"), uniform(rng, &[spec.filters], bound))?;
        Ok(Conv { w, b, spec })
    }

    pub fn forward(&self, tape: &mut Tape, set: &ParamSet, x: Var) -> Var {
        let (w, b) = (tape.param(self.w, set), tape.param(self.b, set));
        tape.conv2d(x, w, b, self.spec)
    }
}

/// Valid-padding conv layers, each followed by ReLU, flattened at the end.
pub fn conv_stack(tape: &mut Tape, set: &ParamSet, layers: &[Conv], image: Var) -> Var {
    let mut h = image;
    for layer in layers {
        let z = layer.forward(tape, set, h);
        h = tape.relu(z);
    }
    let n = tape.value(h).len();
    tape.reshape(h, &[n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{finite_diff_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_by_one_filter_is_per_pixel_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut set = ParamSet::new();
        let spec = ConvSpec { in_channels: 3, in_rows: 4, in_cols: 5, filters: 1, kernel: 1, stride: 1, pad: 0 };
        let conv = Conv::register(&mut set, "c", spec, &mut rng).unwrap();
        set.get_mut(conv.w).data = vec![0.5, -1.0, 2.0];
        set.get_mut(conv.b).data = vec![0.0];
        let img: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3, 4, 5], img.clone()).unwrap());
        let out = conv.forward(&mut tape, &set, x);
        for p in 0..20 {
            let expect = 0.5 * img[p] - img[20 + p] + 2.0 * img[40 + p];
            assert!((tape.data(out)[p] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn stack_output_length_matches_shape_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut set = ParamSet::new();
        let s1 = ConvSpec { in_channels: 3, in_rows: 32, in_cols: 32, filters: 8, kernel: 5, stride: 2, pad: 0 };
        let s2 = ConvSpec { in_channels: 8, in_rows: 14, in_cols: 14, filters: 16, kernel: 3, stride: 2, pad: 0 };
        let layers = [Conv::register(&mut set, "c1", s1, &mut rng).unwrap(), Conv::register(&mut set, "c2", s2, &mut rng).unwrap()];
        assert_eq!(s1.out_rows(), (32 - 5) / 2 + 1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 32, 32]));
        let f = conv_stack(&mut tape, &set, &layers, x);
        assert_eq!(tape.value(f).len(), 16 * 6 * 6);
    }

    #[test]
    fn conv_stack_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut set = ParamSet::new();
        let s1 = ConvSpec { in_channels: 2, in_rows: 9, in_cols: 9, filters: 3, kernel: 3, stride: 2, pad: 0 };
        let s2 = ConvSpec { in_channels: 3, in_rows: 4, in_cols: 4, filters: 2, kernel: 2, stride: 1, pad: 0 };
        let layers = [Conv::register(&mut set, "c1", s1, &mut rng).unwrap(), Conv::register(&mut set, "c2", s2, &mut rng).unwrap()];
        let head = Dense::register(&mut set, "fc", 18, 1, &mut rng).unwrap();
        let img: Vec<f64> = (0..162).map(|_| rng.gen_range(0.0..1.0)).collect();
        let report = finite_diff_check(&set, &GradCheckConfig { coords_per_tensor: 1000, ..Default::default() }, |s| {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::new(vec![2, 9, 9], img.clone()).unwrap());
            let f = conv_stack(&mut tape, s, &layers, x);
            let y = head.forward(&mut tape, s, f);
            let l = tape.sum(y);
            (tape.scalar(l), tape.backward(l))
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
