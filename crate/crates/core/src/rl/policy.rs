//! Beta-distribution policy heads and the actor/critic pair.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::nn::{Cache, Mlp};
use super::state::STATE_DIM;
use crate::road::VehicleParams;

/// Lower bound on every beta parameter.
pub const BETA_FLOOR: f64 = 1e-3;
/// Unit samples are kept this far from the support edges so that their
/// log-density stays finite.
pub const UNIT_MARGIN: f64 = 1e-6;

/// Map from raw network output to a beta parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaTransform {
    /// softplus(raw + 1)
    ShiftedInput,
    /// softplus(raw) + 1
    ShiftedOutput,
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Beta parameter and its derivative with respect to the raw output.
pub fn beta_param(raw: f64, t: BetaTransform) -> (f64, f64) {
    let (v, d) = match t {
        BetaTransform::ShiftedInput => (softplus(raw + 1.0), sigmoid(raw + 1.0)),
        BetaTransform::ShiftedOutput => (softplus(raw) + 1.0, sigmoid(raw)),
    };
    if v < BETA_FLOOR {
        (BETA_FLOOR, 0.0)
    } else {
        (v, d)
    }
}

/// Raw output at which [`beta_param`] returns `c`.
pub fn raw_for_param(c: f64, t: BetaTransform) -> f64 {
    let inv_softplus = |y: f64| if y > 30.0 { y } else { y.exp_m1().ln() };
    match t {
        BetaTransform::ShiftedInput => inv_softplus(c) - 1.0,
        BetaTransform::ShiftedOutput => inv_softplus(c - 1.0),
    }
}

pub fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

pub fn beta_ln_pdf(u: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * u.ln() + (b - 1.0) * (1.0 - u).ln() - ln_beta_fn(a, b)
}

/// Partial derivatives of [`beta_ln_pdf`] with respect to `a` and `b`.
pub fn beta_ln_pdf_grad(u: f64, a: f64, b: f64) -> (f64, f64) {
    let s = digamma(a + b);
    (u.ln() - digamma(a) + s, (1.0 - u).ln() - digamma(b) + s)
}

/// Affine map from the unit square to (acceleration, steering).
pub fn unit_to_action(unit: [f64; 2], p: &VehicleParams) -> (f64, f64) {
    (
        p.a_min + unit[0] * (p.a_max - p.a_min),
        p.delta_min + unit[1] * (p.delta_max - p.delta_min),
    )
}

pub fn action_to_unit(a: f64, delta: f64, p: &VehicleParams) -> [f64; 2] {
    [(a - p.a_min) / (p.a_max - p.a_min), (delta - p.delta_min) / (p.delta_max - p.delta_min)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Outputs (k_a, l_a, k_delta, l_delta) before the beta transform.
    pub actor: Mlp,
    pub critic: Mlp,
    pub transform: BetaTransform,
}

/// Beta parameters of both heads: `[alpha_a, beta_a, alpha_delta, beta_delta]`.
pub type Heads = [f64; 4];

impl Policy {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], transform: BetaTransform, rng: &mut R) -> Self {
        let mut a_sizes = vec![STATE_DIM];
        a_sizes.extend_from_slice(hidden);
        let mut c_sizes = a_sizes.clone();
        a_sizes.push(4);
        c_sizes.push(1);
        let g = std::f64::consts::SQRT_2;
        Self {
            actor: Mlp::new(&a_sizes, g, 0.01, rng),
            critic: Mlp::new(&c_sizes, g, 1.0, rng),
            transform,
        }
    }

    /// Sets every head to `c` for a zero hidden activation, which narrows
    /// the initial action spread around the centre of the action box.
    pub fn set_initial_concentration(&mut self, c: f64) {
        let raw = raw_for_param(c, self.transform);
        self.actor.output_bias_mut().iter_mut().for_each(|b| *b = raw);
    }

    pub fn heads(&self, obs: &[f64]) -> Heads {
        let raw = self.actor.forward(obs);
        std::array::from_fn(|k| beta_param(raw[k], self.transform).0)
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.critic.forward(obs)[0]
    }

    /// Draws a unit-square action and returns it with its log-density.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> ([f64; 2], f64) {
        let h = self.heads(obs);
        let mut unit = [0.0; 2];
        for (k, u) in unit.iter_mut().enumerate() {
            let d = Beta::new(h[2 * k], h[2 * k + 1]).expect("beta parameters are positive");
            *u = d.sample(rng).clamp(UNIT_MARGIN, 1.0 - UNIT_MARGIN);
        }
        (unit, log_prob_heads(&h, unit))
    }

    /// Mean of each beta head.
    pub fn mean_unit(&self, obs: &[f64]) -> [f64; 2] {
        let h = self.heads(obs);
        [h[0] / (h[0] + h[1]), h[2] / (h[2] + h[3])]
    }

    pub fn log_prob(&self, obs: &[f64], unit: [f64; 2]) -> f64 {
        log_prob_heads(&self.heads(obs), unit)
    }

    /// Log-density and `d(log-density)/d(raw actor output)`, with the cache
    /// needed to push that gradient through the actor.
    pub fn log_prob_with_grad(&self, obs: &[f64], unit: [f64; 2], cache: &mut Cache) -> (f64, [f64; 4]) {
        let raw = self.actor.forward_cached(obs, cache);
        let mut heads = [0.0; 4];
        let mut d_raw = [0.0; 4];
        for k in 0..4 {
            (heads[k], d_raw[k]) = beta_param(raw[k], self.transform);
        }
        let mut grad = [0.0; 4];
        for h in 0..2 {
            let (ga, gb) = beta_ln_pdf_grad(unit[h], heads[2 * h], heads[2 * h + 1]);
            grad[2 * h] = ga * d_raw[2 * h];
            grad[2 * h + 1] = gb * d_raw[2 * h + 1];
        }
        (log_prob_heads(&heads, unit), grad)
    }
}

pub fn log_prob_heads(h: &Heads, unit: [f64; 2]) -> f64 {
    beta_ln_pdf(unit[0], h[0], h[1]) + beta_ln_pdf(unit[1], h[2], h[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_raw_gives_symmetric_heads() {
        let (v, _) = beta_param(0.0, BetaTransform::ShiftedInput);
        assert!((v - 1.313_261_687_518_222_8).abs() < 1e-12);
        let (v, _) = beta_param(-1e6, BetaTransform::ShiftedInput);
        assert_eq!(v, BETA_FLOOR);
        let (v, _) = beta_param(0.0, BetaTransform::ShiftedOutput);
        assert!((v - (2f64.ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn raw_for_param_inverts_transform() {
        for t in [BetaTransform::ShiftedInput, BetaTransform::ShiftedOutput] {
            for c in [1.5, 3.0, 20.0, 80.0] {
                assert!((beta_param(raw_for_param(c, t), t).0 - c).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unit_midpoint_maps_to_zero_action() {
        let p = VehicleParams::default();
        let (a, d) = unit_to_action([0.5, 0.5], &p);
        assert!(a.abs() < 1e-12 && d.abs() < 1e-12);
        let u = action_to_unit(1.5, 0.1, &p);
        let (a, d) = unit_to_action(u, &p);
        assert!((a - 1.5).abs() < 1e-12 && (d - 0.1).abs() < 1e-12);
    }

    #[test]
    fn beta_gradient_matches_finite_difference() {
        for &(u, a, b) in &[(0.3, 1.3, 2.2), (0.9, 0.5, 0.7), (0.01, 12.0, 3.0)] {
            let (ga, gb) = beta_ln_pdf_grad(u, a, b);
            let h = 1e-6;
            let fa = (beta_ln_pdf(u, a + h, b) - beta_ln_pdf(u, a - h, b)) / (2.0 * h);
            let fb = (beta_ln_pdf(u, a, b + h) - beta_ln_pdf(u, a, b - h)) / (2.0 * h);
            assert!((ga - fa).abs() < 1e-6 && (gb - fb).abs() < 1e-6);
        }
    }

    #[test]
    fn sampled_actions_are_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pol = Policy::new(&[16, 16], BetaTransform::ShiftedInput, &mut rng);
        let p = VehicleParams::default();
        for k in 0..500 {
            let obs: Vec<f64> = (0..STATE_DIM).map(|j| ((k * 7 + j) as f64).sin() * 3.0).collect();
            let (unit, lp) = pol.sample(&obs, &mut rng);
            assert!(lp.is_finite());
            let (a, d) = unit_to_action(unit, &p);
            assert!((p.a_min..=p.a_max).contains(&a));
            assert!((p.delta_min..=p.delta_max).contains(&d));
        }
    }
}
