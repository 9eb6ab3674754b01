//! Observation of a vehicle inside the merging area.

use crate::control::{select_follower, select_leader, NeighborEstimate};
use crate::road::{project_1d, RoadGeometry, VehicleParams, VehicleState};

pub const STATE_DIM: usize = 9;

/// Neighbour relative to ego: along-road offset, speed and heading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Relative {
    /// `pos_neighbor - pos_ego`, m.
    pub dx: f64,
    pub v: f64,
    pub phi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RlState {
    pub x: f64,
    pub y_r: f64,
    pub y_f: f64,
    pub v: f64,
    pub phi: f64,
    pub dx_prev: f64,
    pub dv_prev: f64,
    pub dx_foll: f64,
    pub dv_foll: f64,
    pub leader: Option<Relative>,
    pub follower: Option<Relative>,
}

/// Builds the state from ego's true state and its (possibly estimated)
/// neighbours. Missing neighbours, and neighbours farther than
/// `sentinel_gap`, read as `±sentinel_gap` with zero speed difference.
pub fn build_state(
    ego: &VehicleState,
    neighbors: &[NeighborEstimate],
    geo: &RoadGeometry,
    p: &VehicleParams,
    sentinel_gap: f64,
) -> RlState {
    let pos = project_1d(ego, geo);
    let vx = ego.v * ego.phi.cos();
    let rel = |n: &NeighborEstimate| Relative {
        dx: n.pos - pos,
        v: n.v,
        phi: n.phi,
    };
    let leader = select_leader(neighbors, pos).map(rel).filter(|r| r.dx <= sentinel_gap);
    let follower = select_follower(neighbors, pos).map(rel).filter(|r| -r.dx <= sentinel_gap);
    let (dx_prev, dv_prev) = leader.map_or((sentinel_gap, 0.0), |r| (r.dx, vx - r.v * r.phi.cos()));
    let (dx_foll, dv_foll) = follower.map_or((-sentinel_gap, 0.0), |r| (r.dx, vx - r.v * r.phi.cos()));
    RlState {
        x: ego.x,
        y_r: ego.y,
        y_f: ego.y + p.wheelbase * ego.phi.sin(),
        v: ego.v,
        phi: ego.phi,
        dx_prev,
        dv_prev,
        dx_foll,
        dv_foll,
        leader,
        follower,
    }
}

impl RlState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.x,
            self.y_r,
            self.y_f,
            self.v,
            self.phi,
            self.dx_prev,
            self.dv_prev,
            self.dx_foll,
            self.dv_foll,
        ]
    }

    /// Network input: every component divided by a fixed scale of order one.
    pub fn observation(&self, geo: &RoadGeometry, p: &VehicleParams, sentinel_gap: f64) -> [f64; STATE_DIM] {
        let raw = self.to_array();
        let scale = [
            geo.merging_length,
            geo.lane_width,
            geo.lane_width,
            p.v_max,
            p.delta_max,
            sentinel_gap,
            p.v_max,
            sentinel_gap,
            p.v_max,
        ];
        std::array::from_fn(|k| raw[k] / scale[k])
    }
}
