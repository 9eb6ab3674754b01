//! Beacon buffering, AoI-aware neighbour estimation, the four-mode CACC
//! longitudinal law, control-mode hand-over and the two-point steering
//! baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::road::{project_1d, Road, RoadGeometry, VehicleParams, VehicleState};

/// Application payload broadcast every reservation period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeaconPacket {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
    pub road: Road,
    /// Generation time, ms.
    pub ts: u64,
}

/// Serialized size: id u32, four f64, road u8, ts u64, little-endian.
pub const BEACON_BYTES: usize = 4 + 4 * 8 + 1 + 8;

impl BeaconPacket {
    pub fn to_bytes(&self) -> [u8; BEACON_BYTES] {
        let mut b = [0u8; BEACON_BYTES];
        b[0..4].copy_from_slice(&self.id.to_le_bytes());
        for (k, f) in [self.x, self.y, self.v, self.theta].into_iter().enumerate() {
            b[4 + 8 * k..12 + 8 * k].copy_from_slice(&f.to_le_bytes());
        }
        b[36] = self.road.code();
        b[37..45].copy_from_slice(&self.ts.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() != BEACON_BYTES {
            return Err(Error::Config(format!("beacon payload is {} bytes, expected {BEACON_BYTES}", b.len())));
        }
        let f = |k: usize| f64::from_le_bytes(b[4 + 8 * k..12 + 8 * k].try_into().unwrap());
        Ok(Self {
            id: u32::from_le_bytes(b[0..4].try_into().unwrap()),
            x: f(0),
            y: f(1),
            v: f(2),
            theta: f(3),
            road: Road::from_code(b[36]).ok_or_else(|| Error::Config(format!("unknown road code {}", b[36])))?,
            ts: u64::from_le_bytes(b[37..45].try_into().unwrap()),
        })
    }

    pub fn state(&self) -> VehicleState {
        VehicleState {
            x: self.x,
            y: self.y,
            v: self.v,
            phi: self.theta,
            road: self.road,
        }
    }
}

/// Latest beacon per sender.
#[derive(Clone, Debug, Default)]
pub struct NeighborBuffer {
    packets: BTreeMap<u32, BeaconPacket>,
}

impl NeighborBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `p` unless a packet at least as recent from the same sender is held.
    pub fn insert(&mut self, p: BeaconPacket) {
        match self.packets.get(&p.id) {
            Some(old) if old.ts >= p.ts => {}
            _ => {
                self.packets.insert(p.id, p);
            }
        }
    }

    pub fn get(&self, id: u32) -> Option<&BeaconPacket> {
        self.packets.get(&id)
    }

    pub fn remove(&mut self, id: u32) {
        self.packets.remove(&id);
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BeaconPacket> {
        self.packets.values()
    }
}

/// A neighbour as seen by a controller, in along-road coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborEstimate {
    pub id: u32,
    pub pos: f64,
    pub v: f64,
    pub phi: f64,
    pub y: f64,
    pub road: Road,
    pub aoi_ms: u64,
}

/// Constant-speed extrapolation of a beacon to `now`.
pub fn estimate_neighbor(p: &BeaconPacket, now: u64, geo: &RoadGeometry) -> NeighborEstimate {
    let aoi_ms = now.saturating_sub(p.ts);
    NeighborEstimate {
        id: p.id,
        pos: project_1d(&p.state(), geo) + p.v * aoi_ms as f64 / 1000.0,
        v: p.v,
        phi: p.theta,
        y: p.y,
        road: p.road,
        aoi_ms,
    }
}

/// Exact neighbour view from a true state.
pub fn perfect_neighbor(id: u32, s: &VehicleState, geo: &RoadGeometry) -> NeighborEstimate {
    NeighborEstimate {
        id,
        pos: project_1d(s, geo),
        v: s.v,
        phi: s.phi,
        y: s.y,
        road: s.road,
        aoi_ms: 0,
    }
}

/// Nearest neighbour strictly ahead of `ego_pos`; ties go to the lower id.
pub fn select_leader(neighbors: &[NeighborEstimate], ego_pos: f64) -> Option<&NeighborEstimate> {
    neighbors
        .iter()
        .filter(|n| n.pos > ego_pos)
        .min_by(|a, b| a.pos.total_cmp(&b.pos).then(a.id.cmp(&b.id)))
}

/// Nearest neighbour strictly behind `ego_pos`; ties go to the lower id.
pub fn select_follower(neighbors: &[NeighborEstimate], ego_pos: f64) -> Option<&NeighborEstimate> {
    neighbors
        .iter()
        .filter(|n| n.pos < ego_pos)
        .min_by(|a, b| b.pos.total_cmp(&a.pos).then(a.id.cmp(&b.id)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaccGains {
    /// Speed-mode gain.
    pub k1: f64,
    /// (position, velocity) gains per gap mode.
    pub gap_closing: (f64, f64),
    pub gap: (f64, f64),
    pub collision_avoidance: (f64, f64),
    /// Time headway, s.
    pub t_h: f64,
    /// Cruise speed, m/s.
    pub v_d: f64,
    /// Spacing-error band separating gap regulation from the other modes, m.
    pub mode_band: f64,
    /// Beyond this gap the leader is ignored, m.
    pub max_gap: f64,
}

impl Default for CaccGains {
    fn default() -> Self {
        Self {
            k1: 1.0,
            gap_closing: (0.45, 0.125),
            gap: (0.45, 0.05),
            collision_avoidance: (0.005, 0.05),
            t_h: 1.0,
            v_d: 20.0,
            mode_band: 2.0,
            max_gap: 100.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaccMode {
    Speed,
    GapClosing,
    Gap,
    CollisionAvoidance,
}

/// Leader relative to ego along the road.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeaderView {
    /// `x_leader - x_ego`, m.
    pub gap: f64,
    pub v: f64,
}

pub fn cacc_mode(v: f64, leader: Option<LeaderView>, g: &CaccGains) -> CaccMode {
    match leader {
        None => CaccMode::Speed,
        Some(l) if l.gap > g.max_gap => CaccMode::Speed,
        Some(l) => {
            let e = l.gap - g.t_h * v;
            if e < -g.mode_band {
                CaccMode::CollisionAvoidance
            } else if e > g.mode_band {
                CaccMode::GapClosing
            } else {
                CaccMode::Gap
            }
        }
    }
}

/// CACC acceleration command, clamped to the vehicle's limits.
pub fn cacc_accel(v: f64, a_prev: f64, leader: Option<LeaderView>, g: &CaccGains, dt: f64, p: &VehicleParams) -> (f64, CaccMode) {
    let mode = cacc_mode(v, leader, g);
    let a = match (mode, leader) {
        (CaccMode::Speed, _) | (_, None) => g.k1 * (g.v_d - v),
        (m, Some(l)) => {
            let (k2, k3) = match m {
                CaccMode::GapClosing => g.gap_closing,
                CaccMode::Gap => g.gap,
                _ => g.collision_avoidance,
            };
            let p_err = l.gap - g.t_h * v;
            let v_err = (l.v - v) - g.t_h * a_prev;
            let v_next = v + k2 * p_err + k3 * v_err;
            (v_next - v) / dt
        }
    };
    (a.clamp(p.a_min, p.a_max), mode)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    Cacc,
    Rl,
}

/// Controller in charge at station `x` for a vehicle on `road`, and the road
/// label it carries afterwards.
pub fn mode_transition(road: Road, x: f64, geo: &RoadGeometry) -> (ControlMode, Road) {
    match road {
        Road::Main => (ControlMode::Cacc, Road::Main),
        Road::Merging => (ControlMode::Cacc, Road::Merging),
        Road::Merge if x < geo.point_p() => (ControlMode::Cacc, Road::Merge),
        Road::Merge if x < 0.0 => (ControlMode::Rl, Road::Merge),
        Road::Merge => (ControlMode::Cacc, Road::Merging),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointConfig {
    pub k_near: f64,
    pub k_far: f64,
    pub d_near: f64,
    pub d_far: f64,
}

impl Default for TwoPointConfig {
    fn default() -> Self {
        Self {
            k_near: 0.2,
            k_far: 0.6,
            d_near: 5.0,
            d_far: 30.0,
        }
    }
}

/// Two-point visual steering toward the lane centred at `target_y`.
pub fn cacc_tp_steering(ego: &VehicleState, target_y: f64, tp: &TwoPointConfig, p: &VehicleParams) -> f64 {
    let bearing = |d: f64| (target_y - ego.y).atan2(d) - ego.phi;
    let delta = tp.k_near * bearing(tp.d_near) + tp.k_far * bearing(tp.d_far);
    delta.clamp(p.delta_min, p.delta_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet(id: u32, x: f64, v: f64, ts: u64) -> BeaconPacket {
        BeaconPacket {
            id,
            x,
            y: 0.0,
            v,
            theta: 0.0,
            road: Road::Main,
            ts,
        }
    }

    fn est(id: u32, pos: f64) -> NeighborEstimate {
        NeighborEstimate {
            id,
            pos,
            v: 20.0,
            phi: 0.0,
            y: 0.0,
            road: Road::Main,
            aoi_ms: 0,
        }
    }

    #[test]
    fn extrapolation_examples() {
        let geo = RoadGeometry::default();
        assert!((estimate_neighbor(&packet(1, -50.0, 20.0, 975), 1000, &geo).pos - -49.5).abs() < 1e-12);
        assert_eq!(estimate_neighbor(&packet(1, -50.0, 20.0, 1000), 1000, &geo).pos, -50.0);
        assert!((estimate_neighbor(&packet(1, -50.0, 20.0, 996), 1000, &geo).pos - -49.92).abs() < 1e-12);
    }

    #[test]
    fn buffer_keeps_newest() {
        let mut b = NeighborBuffer::new();
        b.insert(packet(7, 0.0, 1.0, 1000));
        b.insert(packet(7, 1.0, 1.0, 1020));
        b.insert(packet(7, 2.0, 1.0, 990));
        assert_eq!(b.len(), 1);
        assert_eq!(b.get(7).unwrap().ts, 1020);
    }

    #[test]
    fn beacon_bytes_round_trip() {
        let p = BeaconPacket {
            road: Road::Merging,
            theta: -0.02,
            ..packet(42, -12.5, 19.75, 123_456)
        };
        assert_eq!(BeaconPacket::from_bytes(&p.to_bytes()).unwrap(), p);
        assert!(BeaconPacket::from_bytes(&[0u8; 3]).is_err());
    }

    #[test]
    fn leader_examples() {
        let n = [est(1, -30.0), est(2, -10.0), est(3, 5.0)];
        assert_eq!(select_leader(&n, -20.0).unwrap().id, 2);
        assert!(select_leader(&n, 10.0).is_none());
        let tie = [est(9, -10.0), est(4, -10.0)];
        assert_eq!(select_leader(&tie, -20.0).unwrap().id, 4);
        assert_eq!(select_follower(&n, -20.0).unwrap().id, 1);
    }

    #[test]
    fn cacc_examples() {
        let g = CaccGains::default();
        let p = VehicleParams::default();
        let (a, m) = cacc_accel(18.0, 0.0, None, &g, 0.1, &p);
        assert_eq!((a, m), (2.0, CaccMode::Speed));
        let (a, _) = cacc_accel(20.0, 0.0, Some(LeaderView { gap: 30.0, v: 20.0 }), &g, 0.1, &p);
        assert_eq!(a, 3.0);
        let (a, m) = cacc_accel(20.0, 0.0, Some(LeaderView { gap: 20.0, v: 20.0 }), &g, 0.1, &p);
        assert_eq!((a, m), (0.0, CaccMode::Gap));
        assert_eq!(cacc_mode(20.0, Some(LeaderView { gap: 15.0, v: 20.0 }), &g), CaccMode::CollisionAvoidance);
        assert_eq!(cacc_mode(20.0, Some(LeaderView { gap: 150.0, v: 20.0 }), &g), CaccMode::Speed);
    }

    #[test]
    fn mode_transition_examples() {
        let geo = RoadGeometry::default();
        assert_eq!(mode_transition(Road::Merge, -180.0, &geo), (ControlMode::Cacc, Road::Merge));
        assert_eq!(mode_transition(Road::Merge, -100.0, &geo), (ControlMode::Rl, Road::Merge));
        assert_eq!(mode_transition(Road::Merge, 2.0, &geo), (ControlMode::Cacc, Road::Merging));
        assert_eq!(mode_transition(Road::Main, -100.0, &geo), (ControlMode::Cacc, Road::Main));
    }

    #[test]
    fn two_point_examples() {
        let p = VehicleParams::default();
        let tp = TwoPointConfig::default();
        let on = VehicleState {
            x: -100.0,
            y: 0.0,
            v: 20.0,
            phi: 0.0,
            road: Road::Merge,
        };
        assert_eq!(cacc_tp_steering(&on, 0.0, &tp, &p), 0.0);
        let off = VehicleState { y: -3.75, ..on };
        let d = cacc_tp_steering(&off, 0.0, &tp, &p);
        assert!(d > 0.0 && d <= p.delta_max);
        let strong = TwoPointConfig {
            k_near: 1.0,
            k_far: 1.0,
            ..tp
        };
        assert_eq!(cacc_tp_steering(&off, 0.0, &strong, &p), p.delta_max);
    }
}
