//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Grads, ParamSet};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates checked per tensor; larger tensors are subsampled.
    pub coords_per_tensor: usize,
    /// Denominator floor, so gradients far below it are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-5, coords_per_tensor: 24, floor: 1e-4, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.checked > 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient returned by `f` against
/// `(f(p+eps) - f(p-eps)) / 2eps` on a sample of coordinates of every
/// parameter tensor. Parameters absent from the analytic gradient count as
/// zero.
pub fn finite_diff_check<F>(params: &ParamSet, cfg: &GradCheckConfig, mut f: F) -> GradCheckReport
where
    F: FnMut(&ParamSet) -> (f64, Grads),
{
    let (_, analytic) = f(params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, worst: None };
    for id in params.ids() {
        let n = params.get(id).len();
        let coords: Vec<usize> = if n <= cfg.coords_per_tensor {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, cfg.coords_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for i in coords {
            let orig = params.get(id).data[i];
            work.get_mut(id).data[i] = orig + cfg.eps;
            let (fp, _) = f(&work);
            work.get_mut(id).data[i] = orig - cfg.eps;
            let (fm, _) = f(&work);
            work.get_mut(id).data[i] = orig;
            let numeric = (fp - fm) / (2.0 * cfg.eps);
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            let err = relative_error(a, numeric, cfg.floor);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(Mismatch { param: params.name(id).to_string(), index: i, analytic: a, numeric });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Tape, Tensor};

    fn quad_params() -> (ParamSet, crate::numerics::ParamId) {
        let mut s = ParamSet::new();
        let id = s.add("x", Tensor::vector(vec![0.3, -1.7, 2.2, 0.9])).unwrap();
        (s, id)
    }

    #[test]
    fn quadratic_is_exact() {
        let (set, id) = quad_params();
        let cfg = GradCheckConfig { floor: 1e-12, ..GradCheckConfig::default() };
        let r = finite_diff_check(&set, &cfg, |s| {
            let mut t = Tape::new();
            let x = t.param(id, s);
            let sq = t.mul(x, x);
            let l = t.sum(sq);
            (t.scalar(l), t.backward(l))
        });
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn dense_relu_off_kinks() {
        let mut s = ParamSet::new();
        let w = s.add("w", Tensor::new(vec![3, 2], vec![0.5, -0.3, 0.8, 0.1, -0.6, 0.4]).unwrap()).unwrap();
        let b = s.add("b", Tensor::vector(vec![0.2, -0.1, 0.3])).unwrap();
        let r = finite_diff_check(&s, &GradCheckConfig::default(), |s| {
            let mut t = Tape::new();
            let x = t.constant(Tensor::vector(vec![1.3, -0.7]));
            let (wv, bv) = (t.param(w, s), t.param(b, s));
            let z = t.affine(wv, x, bv);
            let h = t.relu(z);
            let n = t.norm2(h);
            (t.scalar(n), t.backward(n))
        });
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let (set, id) = quad_params();
        let r = finite_diff_check(&set, &GradCheckConfig::default(), |s| {
            let x = &s.get(id).data;
            let l: f64 = x.iter().map(|v| v * v).sum();
            (l, Grads::new())
        });
        assert!((r.max_rel_error - 1.0).abs() < 1e-6, "{r:?}");
        assert!(!r.passed(1e-4));
    }
}
