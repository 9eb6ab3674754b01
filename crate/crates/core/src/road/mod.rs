//! Road geometry and vehicle kinematics.
//!
//! Coordinates: `x` runs along the main road with the lane-end point O at
//! `x = 0` (upstream negative); `y` is lateral with the main-lane center at
//! `y = 0` and the ramp/acceleration lane centered at `y = -lane_width`. The
//! reference point of a vehicle is its rear axle.

mod footprint;

pub use footprint::{detect_collision, road_violation, soft_distance, soft_edge_distance, Footprint, Vec2};

use serde::{Deserialize, Serialize};

/// Road section a vehicle is on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Road {
    Main,
    Merge,
    /// Came from the ramp and has passed O.
    Merging,
}

impl Road {
    pub fn code(self) -> u8 {
        match self {
            Road::Main => 0,
            Road::Merge => 1,
            Road::Merging => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Road::Main),
            1 => Some(Road::Merge),
            2 => Some(Road::Merging),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Road::Main => "MAIN",
            Road::Merge => "MERGE",
            Road::Merging => "MERGING",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    /// Heading, radians.
    pub phi: f64,
    pub road: Road,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadGeometry {
    /// Adjusting area length upstream of P, m.
    pub adjusting_length: f64,
    /// Merging area (acceleration lane) length between P and O, m.
    pub merging_length: f64,
    pub lane_width: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        Self {
            adjusting_length: 200.0,
            merging_length: 175.0,
            lane_width: 3.75,
        }
    }
}

impl RoadGeometry {
    /// Station of point P, where ramp vehicles hand over to the merging controller.
    pub fn point_p(&self) -> f64 {
        -self.merging_length
    }

    /// Upstream end of the modelled roads.
    pub fn start_x(&self) -> f64 {
        -(self.adjusting_length + self.merging_length)
    }

    pub fn ramp_center(&self) -> f64 {
        -self.lane_width
    }

    /// Drivable lateral band at station `x`.
    pub fn lateral_bounds(&self, x: f64) -> (f64, f64) {
        if x < 0.0 {
            (-1.5 * self.lane_width, 0.5 * self.lane_width)
        } else {
            (-0.5 * self.lane_width, 0.5 * self.lane_width)
        }
    }
}

/// Physical limits and dimensions shared by every vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub length: f64,
    pub width: f64,
    pub wheelbase: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// Steering bounds, radians.
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            length: 4.5,
            width: 2.0,
            wheelbase: 4.5,
            v_min: 0.0,
            v_max: 25.0,
            a_min: -3.0,
            a_max: 3.0,
            delta_min: (-15f64).to_radians(),
            delta_max: 15f64.to_radians(),
        }
    }
}

/// Result of one kinematic step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stepped {
    pub state: VehicleState,
    /// Set when the acceleration or steering input had to be clamped.
    pub input_clamped: bool,
}

/// Kinematic bicycle model, explicit Euler over `dt` seconds.
///
/// Position and heading use the pre-update speed; the new speed is clamped
/// to `[v_min, v_max]`.
pub fn bicycle_step(s: &VehicleState, a: f64, delta: f64, dt: f64, params: &VehicleParams) -> Stepped {
    let a_c = a.clamp(params.a_min, params.a_max);
    let d_c = delta.clamp(params.delta_min, params.delta_max);
    let input_clamped = a_c != a || d_c != delta;
    let (sin, cos) = s.phi.sin_cos();
    let state = VehicleState {
        x: s.x + s.v * cos * dt,
        y: s.y + s.v * sin * dt,
        v: (s.v + a_c * dt).clamp(params.v_min, params.v_max),
        phi: s.phi + s.v * d_c * dt / params.wheelbase,
        road: s.road,
    };
    Stepped { state, input_clamped }
}

/// Signed along-road distance to the merge point (negative upstream).
///
/// The ramp runs parallel to the main road, so arc length along its
/// centerline coincides with `x` on every road section.
pub fn project_1d(s: &VehicleState, _geo: &RoadGeometry) -> f64 {
    match s.road {
        Road::Main | Road::Merging => s.x,
        Road::Merge => s.x,
    }
}
