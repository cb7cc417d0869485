use super::params::{Grads, ParamId, ParamSet};

/// One RMSProp step on a flat tensor:
/// `a <- decay*a + (1-decay)*g^2`, `p <- p - lr*g/sqrt(a+eps)`.
pub fn rmsprop_update(params: &mut [f64], acc: &mut [f64], grads: &[f64], lr: f64, decay: f64, eps: f64) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(acc.len(), grads.len());
    for ((p, a), &g) in params.iter_mut().zip(acc.iter_mut()).zip(grads) {
        *a = decay * *a + (1.0 - decay) * g * g;
        *p -= lr * g / (*a + eps).sqrt();
    }
}

/// RMSProp with one accumulator tensor per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub decay: f64,
    pub eps: f64,
    acc: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(decay: f64, eps: f64, params: &ParamSet) -> Self {
        RmsProp { decay, eps, acc: params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect() }
    }

    pub fn with_accumulators(decay: f64, eps: f64, acc: Vec<Vec<f64>>) -> Self {
        RmsProp { decay, eps, acc }
    }

    pub fn accumulator(&self, id: ParamId) -> &[f64] {
        &self.acc[id.0]
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &Grads, lr: impl Fn(ParamId) -> f64) {
        for (id, g) in grads.iter() {
            let rate = lr(id);
            if rate == 0.0 {
                continue;
            }
            let acc = &mut self.acc[id.0];
            rmsprop_update(&mut params.get_mut(id).data, acc, g, rate, self.decay, self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn zero_grad_leaves_params() {
        let mut p = vec![0.3, -1.2];
        let mut a = vec![0.0; 2];
        rmsprop_update(&mut p, &mut a, &[0.0, 0.0], 0.1, 0.99, 1e-8);
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn first_step_closed_form() {
        let (lr, decay, eps, g) = (0.01, 0.99, 1e-6, 0.5);
        let mut p = vec![1.0];
        let mut a = vec![0.0];
        rmsprop_update(&mut p, &mut a, &[g], lr, decay, eps);
        let expect = 1.0 - lr * g / (0.01 * g * g + eps).sqrt();
        assert!((p[0] - expect).abs() < 1e-15);
        assert!((a[0] - 0.01 * g * g).abs() < 1e-15);
    }

    #[test]
    fn deterministic() {
        let mut set = ParamSet::new();
        let id = set.add("w", Tensor::vector(vec![0.5, 0.25, -2.0])).unwrap();
        let mut g = Grads::new();
        g.accumulate(id, &[0.1, -0.2, 0.3]);
        let mut s1 = set.clone();
        let mut s2 = set.clone();
        let mut o1 = RmsProp::new(0.99, 1e-5, &set);
        let mut o2 = o1.clone();
        o1.update(&mut s1, &g, |_| 1e-3);
        o2.update(&mut s2, &g, |_| 1e-3);
        assert_eq!(s1, s2);
        assert_eq!(o1, o2);
    }
}
