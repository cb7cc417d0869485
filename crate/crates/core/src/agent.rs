//! Reactive agent: feed-forward policy/value network over the short-term
//! goal inputs, intrinsic rewards and the actor-critic loss.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::maze::{AngleCode, ANGLE_BINS};
use crate::numerics::init::Dense;
use crate::numerics::{softmax, Grid2D, NumericsError, ParamSet, Tape, Tensor, Var};
use crate::vlm::InvalidBatch;

pub const INPUT_LEN: usize = ANGLE_BINS + 7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentInput {
    pub angle: AngleCode,
    pub last_reward: f64,
    pub entropy: f64,
    /// (North, East, South, West).
    pub sttd: [f64; 4],
    pub target_dist: f64,
}

impl AgentInput {
    pub fn features(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(INPUT_LEN);
        x.extend_from_slice(&self.angle.bits());
        x.push(self.last_reward);
        x.push(self.entropy);
        x.extend_from_slice(&self.sttd);
        x.push(self.target_dist);
        x
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub hidden: usize,
    pub actions: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig { hidden: 64, actions: crate::maze::Action::COUNT }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentNet {
    pub h1: Dense,
    pub h2: Dense,
    pub policy: Dense,
    pub value: Dense,
}

#[derive(Clone, Copy, Debug)]
pub struct AgentVars {
    pub logits: Var,
    pub value: Var,
}

impl AgentNet {
    pub fn register(set: &mut ParamSet, cfg: &AgentConfig, rng: &mut impl Rng) -> Result<Self, NumericsError> {
        Ok(AgentNet {
            h1: Dense::register(set, "agent/h1", INPUT_LEN, cfg.hidden, rng)?,
            h2: Dense::register(set, "agent/h2", cfg.hidden, cfg.hidden, rng)?,
            policy: Dense::register(set, "agent/pi", cfg.hidden, cfg.actions, rng)?,
            value: Dense::register(set, "agent/v", cfg.hidden, 1, rng)?,
        })
    }

    pub fn lookup(set: &ParamSet) -> Option<Self> {
        Some(AgentNet {
            h1: Dense::lookup(set, "agent/h1")?,
            h2: Dense::lookup(set, "agent/h2")?,
            policy: Dense::lookup(set, "agent/pi")?,
            value: Dense::lookup(set, "agent/v")?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, set: &ParamSet, x: Var) -> AgentVars {
        let h = self.h1.forward_relu(tape, set, x);
        let h = self.h2.forward_relu(tape, set, h);
        let logits = self.policy.forward(tape, set, h);
        let v = self.value.forward(tape, set, h);
        let value = tape.reshape(v, &[]);
        AgentVars { logits, value }
    }

    /// Untaped forward pass: `(policy logits, value)`.
    pub fn run(&self, set: &ParamSet, input: &AgentInput) -> (Vec<f64>, f64) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(input.features()));
        let out = self.forward(&mut tape, set, x);
        (tape.data(out.logits).to_vec(), tape.scalar(out.value))
    }
}

/// Categorical sample from `softmax(logits)`.
pub fn sample_action(logits: &[f64], rng: &mut impl Rng) -> usize {
    let p = softmax(logits, 1.0);
    WeightedIndex::new(&p).expect("softmax weights are positive").sample(rng)
}

/// `e = sum s[dr, dc] * (dc, -dr)` with x east, y north.
pub fn egomotion_vector(s: &Grid2D) -> (f64, f64) {
    let mut e = (0.0, 0.0);
    for r in 0..3 {
        for c in 0..3 {
            let w = s.get(r, c);
            e.0 += w * (c as f64 - 1.0);
            e.1 -= w * (r as f64 - 1.0);
        }
    }
    e
}

/// `d = pN (0,1) + pE (1,0) + pS (0,-1) + pW (-1,0)`.
pub fn sttd_vector(sttd: &[f64; 4]) -> (f64, f64) {
    (sttd[1] - sttd[3], sttd[0] - sttd[2])
}

/// `(I_explor, I_exploit)`.
pub fn intrinsic_rewards(h_prev: f64, h_now: f64, s: &Grid2D, sttd_prev: &[f64; 4]) -> (f64, f64) {
    let e = egomotion_vector(s);
    let d = sttd_vector(sttd_prev);
    (h_prev - h_now, e.0 * d.0 + e.1 * d.1)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub explore: f64,
    pub exploit: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { explore: 1.0, exploit: 0.5 }
    }
}

impl RewardWeights {
    pub fn total(&self, extrinsic: f64, explore: f64, exploit: f64) -> f64 {
        extrinsic + self.explore * explore + self.exploit * exploit
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct A3cConfig {
    pub gamma: f64,
    pub entropy_beta: f64,
    pub value_coef: f64,
}

impl Default for A3cConfig {
    fn default() -> Self {
        A3cConfig { gamma: 0.99, entropy_beta: 0.01, value_coef: 0.5 }
    }
}

/// One rollout step on the tape.
#[derive(Clone, Copy, Debug)]
pub struct A3cStep {
    pub logits: Var,
    pub value: Var,
    pub action: usize,
    pub reward: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct A3cLoss {
    pub total: Var,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Discounted returns bootstrapped from `bootstrap`.
pub fn discounted_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut r = bootstrap;
    let mut out = vec![0.0; rewards.len()];
    for (o, &x) in out.iter_mut().zip(rewards).rev() {
        r = x + gamma * r;
        *o = r;
    }
    out
}

/// `sum_t [-log pi(a_t) A_t + c (R_t - V_t)^2 - beta H(pi_t)]` with the
/// advantage `A_t = R_t - V_t` held constant.
pub fn a3c_loss(tape: &mut Tape, steps: &[A3cStep], bootstrap: f64, cfg: &A3cConfig) -> Result<A3cLoss, InvalidBatch> {
    if steps.is_empty() {
        return Err(InvalidBatch("empty rollout"));
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let returns = discounted_returns(&rewards, bootstrap, cfg.gamma);
    let (mut pg, mut vl, mut ent) = (0.0, 0.0, 0.0);
    let mut terms = Vec::with_capacity(3 * steps.len());
    for (s, &ret) in steps.iter().zip(&returns) {
        let adv = ret - tape.scalar(s.value);
        let logp = tape.log_softmax(s.logits);
        let lp_a = tape.pick(logp, s.action);
        let policy_term = tape.scale(lp_a, -adv);
        let pi = tape.softmax(s.logits, 1.0);
        let neg_h = tape.dot(pi, logp);
        let entropy_term = tape.scale(neg_h, cfg.entropy_beta);
        let neg_v = tape.scale(s.value, -1.0);
        let err = tape.add_const(neg_v, ret);
        let sq = tape.mul(err, err);
        let value_term = tape.scale(sq, cfg.value_coef);
        pg += tape.scalar(policy_term);
        vl += tape.scalar(value_term);
        ent -= tape.scalar(neg_h);
        terms.extend([policy_term, value_term, entropy_term]);
    }
    let all = tape.concat(&terms);
    let total = tape.sum(all);
    Ok(A3cLoss { total, policy: pg, value: vl, entropy: ent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::discretize_angle;
    use crate::numerics::{finite_diff_check, GradCheckConfig, RmsProp};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn input(rng: &mut impl Rng) -> AgentInput {
        let raw: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.01..1.0));
        let s: f64 = raw.iter().sum();
        AgentInput {
            angle: discretize_angle(rng.gen_range(0.0..360.0)),
            last_reward: [0.0, -0.1, 10.0][rng.gen_range(0..3)],
            entropy: rng.gen_range(0.0..1.0),
            sttd: raw.map(|x| x / s),
            target_dist: rng.gen_range(0.0..1.0),
        }
    }

    fn one_hot3(r: usize, c: usize) -> Grid2D {
        let mut g = Grid2D::zeros(3, 3);
        g.set(r, c, 1.0);
        g
    }

    #[test]
    fn zero_params_give_uniform_policy() {
        let mut set = ParamSet::new();
        let net = AgentNet::register(&mut set, &AgentConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = input(&mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(x.features().len(), 37);
        let ids: Vec<_> = set.ids().collect();
        for id in ids {
            set.get_mut(id).data.iter_mut().for_each(|w| *w = 0.0);
        }
        let (logits, v) = net.run(&set, &x);
        assert_eq!(logits, vec![0.0; 6]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn value_head_independent_of_policy_weights() {
        let mut set = ParamSet::new();
        let net = AgentNet::register(&mut set, &AgentConfig::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = input(&mut ChaCha8Rng::seed_from_u64(4));
        let (_, v0) = net.run(&set, &x);
        set.get_mut(net.policy.w).data.iter_mut().for_each(|w| *w += 1.0);
        let (_, v1) = net.run(&set, &x);
        assert_eq!(v0, v1);
    }

    #[test]
    fn sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut logits = vec![0.0; 6];
        logits[4] = 100.0;
        assert!((0..1000).all(|_| sample_action(&logits, &mut rng) == 4));
        let mut counts = [0usize; 6];
        for _ in 0..60_000 {
            counts[sample_action(&[0.0; 6], &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 60_000.0 - 1.0 / 6.0).abs() < 0.02);
        }
        let a: Vec<_> = (0..50).map(|_| sample_action(&[0.0; 6], &mut ChaCha8Rng::seed_from_u64(9))).collect();
        let b: Vec<_> = (0..50).map(|_| sample_action(&[0.0; 6], &mut ChaCha8Rng::seed_from_u64(9))).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn intrinsic_examples() {
        let north = [1.0, 0.0, 0.0, 0.0];
        let (explore, _) = intrinsic_rewards(1.0, 0.5, &one_hot3(1, 1), &north);
        assert_eq!(explore, 0.5);
        let (_, exploit) = intrinsic_rewards(0.0, 0.0, &one_hot3(0, 1), &north);
        assert!((exploit - 1.0).abs() < 1e-12);
        let (_, exploit) = intrinsic_rewards(0.0, 0.0, &one_hot3(1, 2), &north);
        assert_eq!(exploit, 0.0);
        let (_, exploit) = intrinsic_rewards(0.0, 0.0, &one_hot3(2, 1), &north);
        assert!((exploit + 1.0).abs() < 1e-12);
    }

    fn dist3(rng: &mut impl Rng) -> Grid2D {
        let raw: Vec<f64> = (0..9).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        Grid2D::from_vec(3, 3, raw.iter().map(|x| x / s).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn intrinsic_iff_properties(seed in any::<u64>(), h_prev in 0.0f64..1.0, h_now in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = dist3(&mut rng);
            let raw: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
            let t: f64 = raw.iter().sum();
            let sttd = raw.map(|x| x / t);
            let (explore, exploit) = intrinsic_rewards(h_prev, h_now, &s, &sttd);
            prop_assert_eq!(explore > 0.0, h_now < h_prev);
            let e = egomotion_vector(&s);
            let d = sttd_vector(&sttd);
            let cos = (e.0 * d.0 + e.1 * d.1) / (e.0.hypot(e.1) * d.0.hypot(d.1));
            if cos.is_finite() && cos.abs() > 1e-9 {
                prop_assert_eq!(exploit > 0.0, cos > 0.0);
            }
            prop_assert!(e.0.hypot(e.1) <= 2f64.sqrt() + 1e-12);
            prop_assert!(d.0.hypot(d.1) <= 1.0 + 1e-12);
            prop_assert!(exploit.abs() <= 2f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn single_step_value_loss() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::vector(vec![0.0; 6]));
        let value = tape.constant_scalar(0.0);
        let steps = [A3cStep { logits, value, action: 2, reward: 1.0 }];
        let out = a3c_loss(&mut tape, &steps, 0.0, &A3cConfig::default()).unwrap();
        assert!((out.value - 0.5).abs() < 1e-12);
        assert!((out.policy - 6f64.ln()).abs() < 1e-12);
        assert!(a3c_loss(&mut tape, &[], 0.0, &A3cConfig::default()).is_err());
    }

    #[test]
    fn zero_advantage_leaves_entropy_term() {
        let cfg = A3cConfig::default();
        let rewards = [0.3, -0.1, 0.7];
        let returns = discounted_returns(&rewards, 0.2, cfg.gamma);
        let mut tape = Tape::new();
        let steps: Vec<_> = rewards
            .iter()
            .zip(&returns)
            .enumerate()
            .map(|(t, (&r, &ret))| A3cStep {
                logits: tape.constant(Tensor::vector(vec![0.5, -0.2, 0.1, 0.0, 0.3, -0.4])),
                value: tape.constant_scalar(ret),
                action: t,
                reward: r,
            })
            .collect();
        let out = a3c_loss(&mut tape, &steps, 0.2, &cfg).unwrap();
        assert!(out.policy.abs() < 1e-12 && out.value.abs() < 1e-12);
        assert!((tape.scalar(out.total) + cfg.entropy_beta * out.entropy).abs() < 1e-12);
    }

    #[test]
    fn a3c_gradient_matches_finite_differences() {
        let mut set = ParamSet::new();
        let net = AgentNet::register(&mut set, &AgentConfig::default(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rollout: Vec<(AgentInput, usize, f64)> =
            (0..5).map(|_| (input(&mut rng), rng.gen_range(0..6), rng.gen_range(-1.0..1.0))).collect();
        let rewards: Vec<f64> = rollout.iter().map(|r| r.2).collect();
        let returns = discounted_returns(&rewards, 0.0, 0.99);
        let values_at = |ps: &ParamSet| -> Vec<f64> { rollout.iter().map(|(x, _, _)| net.run(ps, x).1).collect() };
        let frozen: Vec<f64> = returns.iter().zip(values_at(&set)).map(|(r, v)| r - v).collect();
        // The loss holds the advantage constant. Adding
        // sum log pi(a) (A(theta) - A0) cancels the advantage's own
        // dependence on theta at the reference point, so finite differences
        // of the sum measure exactly the stop-gradient gradient.
        let cfg = GradCheckConfig { coords_per_tensor: 10, ..Default::default() };
        let report = finite_diff_check(&set, &cfg, |ps| {
            let mut tape = Tape::new();
            let steps: Vec<_> = rollout
                .iter()
                .map(|(x, a, r)| {
                    let xv = tape.constant(Tensor::vector(x.features()));
                    let out = net.forward(&mut tape, ps, xv);
                    A3cStep { logits: out.logits, value: out.value, action: *a, reward: *r }
                })
                .collect();
            let loss = a3c_loss(&mut tape, &steps, 0.0, &A3cConfig::default()).unwrap();
            let mut terms = vec![loss.total];
            for ((s, &ret), &a0) in steps.iter().zip(&returns).zip(&frozen) {
                let live = ret - tape.scalar(s.value);
                let logp = tape.log_softmax(s.logits);
                let lp = tape.pick(logp, s.action);
                terms.push(tape.scale(lp, live - a0));
            }
            let all = tape.concat(&terms);
            let total = tape.sum(all);
            (tape.scalar(total), tape.backward(total))
        });
        assert!(report.passed(1e-4), "{report:?}");
    }

    /// Two-armed bandit with rewards (1, 0) and a softmax policy over two
    /// logits: the entropy-regularized optimum is `pi_1 = sigmoid(1/beta)`.
    fn bandit_entropy(beta: f64) -> f64 {
        let mut set = ParamSet::new();
        let logits_id = set.add("bandit/logits", Tensor::vector(vec![0.0, 0.0])).unwrap();
        let value_id = set.add("bandit/v", Tensor::scalar(0.0)).unwrap();
        let mut opt = RmsProp::new(0.99, 1e-6, &set);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = A3cConfig { entropy_beta: beta, ..A3cConfig::default() };
        let mut avg = 0.0;
        let iters = 6000;
        for it in 0..iters {
            let mut tape = Tape::new();
            let logits = tape.param(logits_id, &set);
            let value = tape.param(value_id, &set);
            let value = tape.reshape(value, &[]);
            let probs = softmax(tape.data(logits), 1.0);
            let steps: Vec<_> = (0..20)
                .map(|_| {
                    let a = WeightedIndex::new(&probs).unwrap().sample(&mut rng);
                    A3cStep { logits, value, action: a, reward: if a == 0 { 1.0 } else { 0.0 } }
                })
                .collect();
            // independent one-step episodes
            let mut terms = Vec::new();
            for s in &steps {
                terms.push(a3c_loss(&mut tape, std::slice::from_ref(s), 0.0, &cfg).unwrap().total);
            }
            let all = tape.concat(&terms);
            let loss = tape.sum(all);
            let grads = tape.backward(loss);
            let lr = if it < iters / 2 { 3e-3 } else { 5e-4 };
            opt.update(&mut set, &grads, |_| lr);
            if it >= iters - 1000 {
                let p = softmax(&set.get(logits_id).data, 1.0);
                avg += -(p[0] * p[0].ln() + p[1] * p[1].ln()) / 1000.0;
            }
        }
        avg
    }

    #[test]
    fn entropy_bonus_raises_converged_entropy() {
        let betas = [0.1, 0.25, 0.5];
        let h: Vec<f64> = betas.iter().map(|&b| bandit_entropy(b)).collect();
        for w in h.windows(2) {
            assert!(w[1] > w[0], "{h:?}");
        }
        for (&b, &got) in betas.iter().zip(&h) {
            let p: f64 = 1.0 / (1.0 + (-1.0 / b).exp());
            let want = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
            assert!((got - want).abs() < 0.1, "beta {b}: {got} vs {want}");
        }
    }
}
