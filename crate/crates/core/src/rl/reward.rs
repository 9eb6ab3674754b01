//! Terminal and running rewards of the merging controller.

use serde::{Deserialize, Serialize};

use super::state::{Relative, RlState};
use crate::road::{RoadGeometry, VehicleParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub c_fail: f64,
    pub c_success: f64,
    pub k_fail_x: f64,
    pub k_fail_y: f64,
    pub k_success_y: f64,
    pub k_success_theta: f64,
    pub k_success_a: f64,
    pub k_success_delta: f64,
    pub k_ego_x: f64,
    pub k_ego_y: f64,
    pub k_ego_theta: f64,
    pub k_ego_act: f64,
    pub k_theta_sq: f64,
    pub k_theta_rate: f64,
    pub k_other_pos: f64,
    pub k_other_vel: f64,
    pub k_other_gap: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            c_fail: 50.0,
            c_success: 150.0,
            k_fail_x: 4.3,
            k_fail_y: 4.3,
            k_success_y: 10.0,
            k_success_theta: 10.0,
            k_success_a: 7.5,
            k_success_delta: 15.0,
            k_ego_x: 0.05,
            k_ego_y: 1.0,
            k_ego_theta: 1.0,
            k_ego_act: 2.0,
            k_theta_sq: 3.0,
            k_theta_rate: 7.0,
            k_other_pos: 5.0,
            k_other_vel: 0.7,
            k_other_gap: 5.0,
        }
    }
}

/// Reward on a collision or road-edge violation.
pub fn reward_terminal_fail(x: f64, y_r: f64, y_f: f64, c: &RewardConfig) -> f64 {
    -c.c_fail - c.k_fail_x * x.abs() - c.k_fail_y * (y_r.abs() + y_f.abs())
}

/// Reward on passing the lane end; the action sums run over the whole
/// merging-area phase.
pub fn reward_terminal_success(y_r: f64, theta: f64, sum_abs_a: f64, sum_abs_delta: f64, c: &RewardConfig) -> f64 {
    c.c_success - c.k_success_y * y_r.abs() - c.k_success_theta * theta.abs() - c.k_success_a * sum_abs_a - c.k_success_delta * sum_abs_delta
}

/// Lateral deviation normalised by the distance to the outer edge on that side.
pub fn lateral_penalty(y: f64, geo: &RoadGeometry) -> f64 {
    if y < 0.0 {
        (y / (1.5 * geo.lane_width)).abs()
    } else {
        (y / (0.5 * geo.lane_width)).abs()
    }
}

/// Action magnitude relative to the bound on its side.
pub fn action_penalty(x: f64, lo: f64, hi: f64) -> f64 {
    if x <= 0.0 {
        x / lo
    } else {
        x / hi
    }
}

/// Headway-and-speed shaping term for one neighbour. `gap` is the spacing
/// minus the desired headway distance; `dv` the longitudinal speed difference.
pub fn neighbor_term(gap: f64, dv: f64, c: &RewardConfig) -> f64 {
    let pos = if gap < 0.0 {
        (-(gap / c.k_other_gap).powi(2)).max(-1.0)
    } else {
        (-gap).exp() - 1.0
    };
    c.k_other_pos * pos + c.k_other_vel * (-dv.abs() - 1.0).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunningReward {
    pub ego: f64,
    pub other: f64,
}

impl RunningReward {
    pub fn total(&self) -> f64 {
        self.ego + self.other
    }
}

/// Per-step reward from the post-step state `s`, the heading before the
/// step and the applied action.
pub fn reward_running(
    s: &RlState,
    phi_prev: f64,
    a: f64,
    delta: f64,
    geo: &RoadGeometry,
    p: &VehicleParams,
    t_h: f64,
    c: &RewardConfig,
) -> RunningReward {
    let frac = (s.x / geo.merging_length).abs();
    let r_x = -frac;
    let r_y = (1.0 - frac) * (lateral_penalty(s.y_r, geo) + lateral_penalty(s.y_f, geo));
    let r_theta = c.k_theta_sq * s.phi * s.phi + c.k_theta_rate * (s.phi - phi_prev).abs();
    let r_act = action_penalty(a, p.a_min, p.a_max) + action_penalty(delta, p.delta_min, p.delta_max);
    let ego = c.k_ego_x * r_x - c.k_ego_y * r_y - c.k_ego_theta * r_theta - c.k_ego_act * r_act;

    let vx = s.v * s.phi.cos();
    let lead = |r: &Relative| neighbor_term(r.dx - t_h * vx, vx - r.v * r.phi.cos(), c);
    let foll = |r: &Relative| {
        let vf = r.v * r.phi.cos();
        neighbor_term(-r.dx - t_h * vf, vx - vf, c)
    };
    let other = s.leader.as_ref().map_or(0.0, lead) + s.follower.as_ref().map_or(0.0, foll);
    RunningReward { ego, other }
}
