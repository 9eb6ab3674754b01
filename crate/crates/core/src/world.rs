//! Mobility and control world shared by the RL environment and the coupled
//! communication scenario: vehicle population, simultaneous kinematic steps,
//! hard-constraint checks and control-mode hand-over.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{
    cacc_accel, cacc_tp_steering, mode_transition, perfect_neighbor, select_leader, CaccGains, CaccMode, ControlMode, LeaderView,
    NeighborEstimate, TwoPointConfig,
};
use crate::error::{Error, Result};
use crate::road::{
    bicycle_step, detect_collision, project_1d, road_violation, Footprint, Road, RoadGeometry, VehicleParams, VehicleState,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub geo: RoadGeometry,
    pub vehicle: VehicleParams,
    pub cacc: CaccGains,
    pub two_point: TwoPointConfig,
    /// Control period, s.
    pub dt: f64,
    /// Per-lane density range, vehicles per km.
    pub density_min: f64,
    pub density_max: f64,
    pub init_speed_min: f64,
    pub init_speed_max: f64,
    /// Total ramp vehicles per episode; `None` keeps the ramp inflow running.
    pub ramp_vehicles: Option<usize>,
    /// Station where vehicles leave the modelled road, m.
    pub exit_x: f64,
    /// Episode length limit in control steps.
    pub max_steps: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let vehicle = VehicleParams::default();
        Self {
            geo: RoadGeometry::default(),
            init_speed_min: vehicle.v_min,
            init_speed_max: vehicle.v_max,
            vehicle,
            cacc: CaccGains::default(),
            two_point: TwoPointConfig::default(),
            dt: 0.1,
            density_min: 28.0,
            density_max: 35.0,
            ramp_vehicles: Some(6),
            exit_x: 100.0,
            max_steps: 600,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("control period must be positive");
        }
        if !(self.density_min > 0.0 && self.density_min <= self.density_max) {
            return bad("density range must satisfy 0 < min <= max");
        }
        if !(self.init_speed_min <= self.init_speed_max) {
            return bad("initial speed range is empty");
        }
        let g = &self.geo;
        if !(g.adjusting_length > 0.0 && g.merging_length > 0.0 && g.lane_width > 0.0) {
            return bad("road lengths and lane width must be positive");
        }
        if !(self.exit_x > 0.0) {
            return bad("exit station must lie downstream of the merge point");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeOutcome {
    Success,
    Collision,
    RoadViolation,
    Timeout,
}

/// Bookkeeping for a ramp vehicle's pass through the merging area.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MergeRecord {
    /// Control step at which the vehicle entered the merging area.
    pub entered: Option<u64>,
    pub outcome: Option<MergeOutcome>,
    pub sum_abs_a: f64,
    pub sum_abs_delta: f64,
    /// Any collision after a successful merge.
    pub collided_after_success: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Exited,
    Crashed,
}

/// One applied control step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub a: f64,
    pub delta: f64,
    /// Heading after the step.
    pub phi: f64,
    pub mode: ControlMode,
}

#[derive(Clone, Debug)]
pub struct Vehicle {
    pub id: u32,
    pub state: VehicleState,
    /// State at the start of the last step; positions between control ticks
    /// are interpolated from it.
    pub base: VehicleState,
    pub origin: Road,
    pub mode: ControlMode,
    pub a_prev: f64,
    pub delta_prev: f64,
    pub status: Status,
    pub merge: Option<MergeRecord>,
    pub log: Vec<StepLog>,
    pub cacc_mode: Option<CaccMode>,
    pub clamped_inputs: u64,
}

impl Vehicle {
    pub fn active(&self) -> bool {
        self.status == Status::Active
    }

    /// Heading before the last step.
    pub fn phi_prev(&self) -> f64 {
        self.base.phi
    }

    /// Applied (a, heading) samples during the merging-area phase.
    pub fn rl_segment(&self) -> Vec<(f64, f64)> {
        self.log.iter().filter(|l| l.mode == ControlMode::Rl).map(|l| (l.a, l.phi)).collect()
    }

    pub fn footprint(&self, p: &VehicleParams) -> Footprint {
        Footprint::from_state(&self.state, p)
    }
}

/// Something that happened to a vehicle during one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    EnteredMergingArea,
    Merged,
    Collision { other: u32 },
    RoadViolation,
    Exited,
    Spawned,
    Timeout,
}

#[derive(Clone, Debug)]
pub struct World {
    pub cfg: WorldConfig,
    pub vehicles: Vec<Vehicle>,
    pub step: u64,
    /// Per-lane spacing used for placement and inflow, m.
    pub spacing: f64,
    pub density: f64,
    ramp_spawned: usize,
    next_id: u32,
}

fn lane_center(road: Road, geo: &RoadGeometry) -> f64 {
    match road {
        Road::Merge => geo.ramp_center(),
        Road::Main | Road::Merging => 0.0,
    }
}

impl World {
    /// Draws a density, fills both roads at that spacing with random initial
    /// speeds, and keeps ramp inflow up to `ramp_vehicles`.
    pub fn new<R: Rng + ?Sized>(cfg: WorldConfig, rng: &mut R) -> Self {
        let density = if cfg.density_max > cfg.density_min {
            rng.random_range(cfg.density_min..=cfg.density_max)
        } else {
            cfg.density_min
        };
        let spacing = 1000.0 / density;
        let mut w = Self {
            cfg,
            vehicles: Vec::new(),
            step: 0,
            spacing,
            density,
            ramp_spawned: 0,
            next_id: 0,
        };
        let start = w.cfg.geo.start_x();
        let phase = rng.random_range(0.0..spacing);
        let mut x = w.cfg.exit_x - phase;
        while x >= start {
            let v = w.draw_speed(rng);
            w.spawn(Road::Main, x, v);
            x -= spacing;
        }
        // Ramp vehicles sit half a spacing out of phase with the main road
        // and stay upstream of the merging area.
        let mut x = start + ((w.cfg.geo.point_p() - start - phase - 0.5 * spacing) % spacing + spacing) % spacing;
        let mut ramp = Vec::new();
        while x < w.cfg.geo.point_p() - 1.0 {
            ramp.push(x);
            x += spacing;
        }
        let limit = w.cfg.ramp_vehicles.unwrap_or(usize::MAX);
        for &x in ramp.iter().rev().take(limit) {
            let v = w.draw_speed(rng);
            w.spawn(Road::Merge, x, v);
        }
        w.vehicles.sort_by_key(|v| v.id);
        w
    }

    fn draw_speed<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.cfg.init_speed_max > self.cfg.init_speed_min {
            rng.random_range(self.cfg.init_speed_min..=self.cfg.init_speed_max)
        } else {
            self.cfg.init_speed_min
        }
    }

    fn spawn(&mut self, road: Road, x: f64, v: f64) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        let state = VehicleState {
            x,
            y: lane_center(road, &self.cfg.geo),
            v: v.clamp(self.cfg.vehicle.v_min, self.cfg.vehicle.v_max),
            phi: 0.0,
            road,
        };
        let (mode, _) = mode_transition(road, x, &self.cfg.geo);
        let merge = (road == Road::Merge).then(MergeRecord::default);
        if road == Road::Merge {
            self.ramp_spawned += 1;
        }
        self.vehicles.push(Vehicle {
            id,
            state,
            base: state,
            origin: road,
            mode,
            a_prev: 0.0,
            delta_prev: 0.0,
            status: Status::Active,
            merge,
            log: Vec::new(),
            cacc_mode: None,
            clamped_inputs: 0,
        });
        id
    }

    pub fn active(&self) -> impl Iterator<Item = (usize, &Vehicle)> {
        self.vehicles.iter().enumerate().filter(|(_, v)| v.active())
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.vehicles.binary_search_by_key(&id, |v| v.id).ok()
    }

    /// True-state neighbour views for vehicle `i`.
    pub fn perfect_neighbors(&self, i: usize) -> Vec<NeighborEstimate> {
        self.active()
            .filter(|&(j, _)| j != i)
            .map(|(_, v)| perfect_neighbor(v.id, &v.state, &self.cfg.geo))
            .collect()
    }

    /// CACC longitudinal command with two-point lane keeping. In the merging
    /// area the steering target is the main lane.
    pub fn cacc_command(&self, i: usize, neighbors: &[NeighborEstimate]) -> (f64, f64, CaccMode) {
        let v = &self.vehicles[i];
        let ego_pos = project_1d(&v.state, &self.cfg.geo);
        let leader = select_leader(neighbors, ego_pos).map(|l| LeaderView { gap: l.pos - ego_pos, v: l.v });
        let (a, mode) = cacc_accel(v.state.v, v.a_prev, leader, &self.cfg.cacc, self.cfg.dt, &self.cfg.vehicle);
        let target = match (v.state.road, v.mode) {
            (Road::Merge, ControlMode::Cacc) => self.cfg.geo.ramp_center(),
            _ => 0.0,
        };
        let delta = cacc_tp_steering(&v.state, target, &self.cfg.two_point, &self.cfg.vehicle);
        (a, delta, mode)
    }

    /// All ramp vehicles have been spawned and none is still upstream of or
    /// inside the merging area, or the step limit is reached.
    pub fn done(&self) -> bool {
        if self.step >= self.cfg.max_steps {
            return true;
        }
        match self.cfg.ramp_vehicles {
            None => false,
            Some(limit) => {
                self.ramp_spawned >= limit
                    && self
                        .vehicles
                        .iter()
                        .filter_map(|v| v.merge.as_ref().map(|m| (v, m)))
                        .all(|(v, m)| m.outcome.is_some() || !v.active())
            }
        }
    }

    /// Applies one simultaneous kinematic step. `actions[i]` is the
    /// (acceleration, steering) input of vehicle `i`; inactive entries are
    /// ignored.
    pub fn apply(&mut self, actions: &[(f64, f64)]) -> Vec<(u32, Event)> {
        let mut events = Vec::new();
        let step = self.step;
        let p = self.cfg.vehicle.clone();
        let geo = self.cfg.geo.clone();
        for (i, v) in self.vehicles.iter_mut().enumerate() {
            if !v.active() {
                continue;
            }
            let (a, delta) = actions.get(i).copied().unwrap_or((0.0, 0.0));
            let out = bicycle_step(&v.state, a, delta, self.cfg.dt, &p);
            if out.input_clamped {
                v.clamped_inputs += 1;
            }
            let a_c = a.clamp(p.a_min, p.a_max);
            let d_c = delta.clamp(p.delta_min, p.delta_max);
            v.base = v.state;
            v.state = out.state;
            v.a_prev = a_c;
            v.delta_prev = d_c;
            let acted_mode = v.mode;
            v.log.push(StepLog {
                step,
                a: a_c,
                delta: d_c,
                phi: v.state.phi,
                mode: acted_mode,
            });
            if let Some(m) = v.merge.as_mut() {
                if acted_mode == ControlMode::Rl {
                    m.sum_abs_a += a_c.abs();
                    m.sum_abs_delta += d_c.abs();
                }
            }
        }
        self.step += 1;

        // Hard constraints on the post-step configuration.
        let active: Vec<usize> = self.active().map(|(i, _)| i).collect();
        let fps: Vec<Footprint> = active.iter().map(|&i| self.vehicles[i].footprint(&p)).collect();
        let mut crashed = vec![None::<Event>; self.vehicles.len()];
        let reach = p.length + p.width;
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let (ca, cb) = (fps[a].center, fps[b].center);
                if (ca.x - cb.x).abs() > reach || (ca.y - cb.y).abs() > reach {
                    continue;
                }
                if detect_collision(&fps[a], &fps[b]) {
                    let (ia, ib) = (active[a], active[b]);
                    crashed[ia].get_or_insert(Event::Collision { other: self.vehicles[ib].id });
                    crashed[ib].get_or_insert(Event::Collision { other: self.vehicles[ia].id });
                }
            }
            if road_violation(&fps[a], &geo) {
                crashed[active[a]].get_or_insert(Event::RoadViolation);
            }
        }

        for &i in &active {
            let v = &mut self.vehicles[i];
            let (mode, road) = mode_transition(v.state.road, v.state.x, &geo);
            if let Some(ev) = crashed[i] {
                v.status = Status::Crashed;
                if let Some(m) = v.merge.as_mut() {
                    match m.outcome {
                        None if m.entered.is_some() => {
                            m.outcome = Some(match ev {
                                Event::RoadViolation => MergeOutcome::RoadViolation,
                                _ => MergeOutcome::Collision,
                            })
                        }
                        Some(MergeOutcome::Success) => m.collided_after_success = true,
                        _ => {}
                    }
                }
                events.push((v.id, ev));
                continue;
            }
            if mode != v.mode {
                match mode {
                    ControlMode::Rl => {
                        if let Some(m) = v.merge.as_mut() {
                            m.entered = Some(self.step);
                        }
                        events.push((v.id, Event::EnteredMergingArea));
                    }
                    ControlMode::Cacc => {
                        if let Some(m) = v.merge.as_mut() {
                            if m.outcome.is_none() {
                                m.outcome = Some(MergeOutcome::Success);
                            }
                        }
                        events.push((v.id, Event::Merged));
                    }
                }
                v.mode = mode;
            }
            v.state.road = road;
            if v.state.x >= self.cfg.exit_x {
                v.status = Status::Exited;
                events.push((v.id, Event::Exited));
            }
        }

        if self.step >= self.cfg.max_steps {
            for v in self.vehicles.iter_mut() {
                if let Some(m) = v.merge.as_mut() {
                    if v.status == Status::Active && m.entered.is_some() && m.outcome.is_none() {
                        m.outcome = Some(MergeOutcome::Timeout);
                        events.push((v.id, Event::Timeout));
                    }
                }
            }
        }

        self.inflow(&mut events);
        events
    }

    fn inflow(&mut self, events: &mut Vec<(u32, Event)>) {
        let start = self.cfg.geo.start_x();
        for road in [Road::Main, Road::Merge] {
            if road == Road::Merge && self.ramp_spawned >= self.cfg.ramp_vehicles.unwrap_or(usize::MAX) {
                continue;
            }
            let y = lane_center(road, &self.cfg.geo);
            let last = self
                .active()
                .filter(|(_, v)| (v.state.y - y).abs() < 0.5 * self.cfg.geo.lane_width && v.state.x < 0.0)
                .map(|(_, v)| (v.state.x, v.state.v))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let speed = match last {
                Some((x, _)) if x < start + self.spacing => continue,
                Some((_, v)) => v,
                None => self.cfg.cacc.v_d,
            };
            let id = self.spawn(road, start, speed);
            events.push((id, Event::Spawned));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run_cacc(seed: u64) -> World {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = World::new(WorldConfig::default(), &mut rng);
        while !w.done() {
            let mut actions = vec![(0.0, 0.0); w.vehicles.len()];
            let ids: Vec<usize> = w.active().map(|(i, _)| i).collect();
            for i in ids {
                let n = w.perfect_neighbors(i);
                let (a, d, _) = w.cacc_command(i, &n);
                actions[i] = (a, d);
            }
            w.apply(&actions);
        }
        w
    }

    #[test]
    fn placement_respects_spacing_and_lanes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = World::new(WorldConfig::default(), &mut rng);
        assert!((28.0..=35.0).contains(&w.density));
        let ramp: Vec<_> = w.vehicles.iter().filter(|v| v.origin == Road::Merge).collect();
        assert!(!ramp.is_empty() && ramp.len() <= 6);
        assert!(ramp.iter().all(|v| v.state.x < w.cfg.geo.point_p() && v.state.y == -3.75));
        assert!(w.vehicles.iter().all(|v| v.state.x >= w.cfg.geo.start_x()));
    }

    #[test]
    fn modes_progress_monotonically() {
        let w = run_cacc(11);
        for v in &w.vehicles {
            let mut seq: Vec<ControlMode> = v.log.iter().map(|l| l.mode).collect();
            seq.dedup();
            match v.origin {
                Road::Main => assert!(seq.iter().all(|m| *m == ControlMode::Cacc)),
                _ => assert!(
                    [vec![ControlMode::Cacc], vec![ControlMode::Cacc, ControlMode::Rl], vec![ControlMode::Cacc, ControlMode::Rl, ControlMode::Cacc]]
                        .contains(&seq)
                        || seq == [ControlMode::Rl, ControlMode::Cacc]
                        || seq == [ControlMode::Rl]
                ),
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = run_cacc(5);
        let b = run_cacc(5);
        assert_eq!(a.vehicles.len(), b.vehicles.len());
        for (x, y) in a.vehicles.iter().zip(&b.vehicles) {
            assert_eq!(x.state, y.state);
        }
    }
}
