//! Returns, advantages, the clipped surrogate, the value loss and their
//! analytic gradients, plus the Adam optimiser.

use serde::{Deserialize, Serialize};

use super::nn::Cache;
use super::policy::Policy;
use super::state::STATE_DIM;

/// `R_t = r_t + gamma * R_{t+1}` over the episode suffix.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

pub fn advantage(returns: &[f64], values: &[f64]) -> Vec<f64> {
    returns.iter().zip(values).map(|(r, v)| r - v).collect()
}

pub fn ppo_surrogate(ratio: f64, adv: f64, epsilon: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * adv)
}

/// `d(ppo_surrogate)/d(ratio)`.
fn surrogate_slope(ratio: f64, adv: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    if ratio * adv <= clipped * adv {
        adv
    } else {
        0.0
    }
}

pub fn value_loss(returns: &[f64], values: &[f64]) -> f64 {
    let n = returns.len().max(1) as f64;
    returns.iter().zip(values).map(|(r, v)| (r - v).powi(2)).sum::<f64>() / n
}

/// One stored decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: [f64; STATE_DIM],
    /// Action in the unit square.
    pub unit: [f64; 2],
    pub reward: f64,
    pub next_obs: [f64; STATE_DIM],
    pub done: bool,
    /// Behaviour-policy log-density of `unit`.
    pub logp_old: f64,
    /// Discounted return from this step.
    pub ret: f64,
}

/// Mean clipped surrogate over `batch` and its gradient with respect to the
/// actor parameters.
pub fn surrogate_and_grad(policy: &Policy, batch: &[&Transition], adv: &[f64], epsilon: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; policy.actor.params.len()];
    let mut cache = Cache::default();
    let n = batch.len().max(1) as f64;
    let mut total = 0.0;
    for (t, &a) in batch.iter().zip(adv) {
        let (logp, d_raw) = policy.log_prob_with_grad(&t.obs, t.unit, &mut cache);
        let ratio = (logp - t.logp_old).exp();
        total += ppo_surrogate(ratio, a, epsilon);
        // d ratio / d logp = ratio
        let scale = surrogate_slope(ratio, a, epsilon) * ratio / n;
        if scale != 0.0 {
            let d: Vec<f64> = d_raw.iter().map(|g| g * scale).collect();
            policy.actor.backward(&cache, &d, &mut grad);
        }
    }
    (total / n, grad)
}

/// Mean squared error of the critic against `targets` and its gradient.
pub fn value_loss_and_grad(policy: &Policy, batch: &[&Transition], targets: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; policy.critic.params.len()];
    let mut cache = Cache::default();
    let n = batch.len().max(1) as f64;
    let mut total = 0.0;
    for (t, &target) in batch.iter().zip(targets) {
        let v = policy.critic.forward_cached(&t.obs, &mut cache)[0];
        total += (target - v).powi(2);
        policy.critic.backward(&cache, &[-2.0 * (target - v) / n], &mut grad);
    }
    (total / n, grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Moves `params` against `grad` (pass a negated gradient to ascend).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn return_examples() {
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.5), vec![1.75, 1.5, 1.0]);
        assert_eq!(discounted_return(&[3.0], 0.9), vec![3.0]);
        assert_eq!(discounted_return(&[1.0, 2.0, 3.0], 0.0), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantage(&[5.0], &[3.0]), vec![2.0]);
        assert_eq!(advantage(&[4.0, 1.0], &[4.0, 2.0]), vec![0.0, -1.0]);
    }

    #[test]
    fn surrogate_examples() {
        assert!((ppo_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((ppo_surrogate(0.5, -1.0, 0.2) - -0.8).abs() < 1e-12);
        assert_eq!(ppo_surrogate(1.0, -3.5, 0.2), -3.5);
    }

    #[test]
    fn value_loss_examples() {
        assert_eq!(value_loss(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(value_loss(&[3.0], &[1.0]), 4.0);
        assert_eq!(value_loss(&[1.0, 3.0], &[0.0, 0.0]), 5.0);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2));
    }
}

#[cfg(test)]
mod gradient_tests {
    use super::*;
    use crate::rl::policy::BetaTransform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(policy: &Policy, rng: &mut ChaCha8Rng, n: usize) -> Vec<Transition> {
        (0..n)
            .map(|_| {
                let obs: [f64; STATE_DIM] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let (unit, logp) = policy.sample(&obs, rng);
                Transition {
                    obs,
                    unit,
                    reward: 0.0,
                    next_obs: obs,
                    done: false,
                    // Offset so some ratios land outside the clip range.
                    logp_old: logp + rng.random_range(-0.3..0.3),
                    ret: rng.random_range(-2.0..2.0),
                }
            })
            .collect()
    }

    #[test]
    fn surrogate_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut policy = Policy::new(&[8, 8], BetaTransform::ShiftedInput, &mut rng);
        policy.actor.params.iter_mut().for_each(|p| *p *= 3.0);
        let data = batch(&policy, &mut rng, 32);
        let refs: Vec<&Transition> = data.iter().collect();
        let adv: Vec<f64> = data.iter().map(|t| t.ret).collect();
        let (_, g) = surrogate_and_grad(&policy, &refs, &adv, 0.2);
        let h = 1e-6;
        for k in (0..g.len()).step_by(7) {
            let mut p = policy.clone();
            p.actor.params[k] += h;
            let up = surrogate_and_grad(&p, &refs, &adv, 0.2).0;
            p.actor.params[k] -= 2.0 * h;
            let dn = surrogate_and_grad(&p, &refs, &adv, 0.2).0;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }
}
