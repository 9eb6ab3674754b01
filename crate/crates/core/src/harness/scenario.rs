//! Coupled run: per-millisecond sidelink operation, beacons on reserved
//! resources, and controllers acting on what the beacons delivered.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{inf_f64, ControllerKind, SimConfig};
use super::metrics::{neighbor_record, objective_eval, ControlEvent, FreshnessMetrics, ObjectiveReport};
use crate::control::{estimate_neighbor, BeaconPacket, ControlMode, NeighborBuffer, NeighborEstimate};
use crate::error::{Error, Result};
use crate::grid::dbm_to_mw;
use crate::mac::sci::{decode_reservation, decode_sci, encode_sci};
use crate::mac::{MacState, SciObservation, Scheme};
use crate::phy::{adjudicate_into, delivery_time, RadioTx, Reason, SubframeReport};
use crate::rl::policy::unit_to_action;
use crate::rl::{build_state, Policy};
use crate::road::{Road, Vec2, VehicleState};
use crate::world::{Event, MergeOutcome, Status, World};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Interference radios get ids from here upwards.
pub const INTERFERENCE_ID_BASE: u32 = 1_000_000;

/// Controller of ramp vehicles inside the merging area.
#[derive(Clone, Copy, Debug)]
enum Controller<'a> {
    CaccTp,
    /// Mean action of the policy.
    Policy(&'a Policy),
}

impl Controller<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::CaccTp => "cacc_tp",
            Controller::Policy(_) => "rl",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub time_ms: u64,
    pub id: u32,
    pub road: Road,
    pub mode: ControlMode,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub phi: f64,
    pub a: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacRow {
    pub time_ms: u64,
    pub sender: u32,
    pub subchannel: u8,
    /// Counter after this transmission.
    pub rc: u32,
    pub reselected: bool,
    pub p_th_dbm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReceptionCounts {
    pub ok: u64,
    pub half_duplex: u64,
    pub collision: u64,
    pub below_sensitivity: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeCounts {
    pub agents: usize,
    pub success: usize,
    /// Successes not followed by any later collision.
    pub clean_success: usize,
    pub collision: usize,
    pub road_violation: usize,
    pub timeout: usize,
    /// Still upstream of or inside the merging area when the run ended.
    pub unfinished: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    #[serde(with = "inf_f64::vec")]
    pub thresholds: Vec<f64>,
    #[serde(with = "inf_f64::vec")]
    pub distances: Vec<f64>,
    /// `rates[threshold][distance]`; null where no sample lies within the distance.
    pub rates: Vec<Vec<Option<f64>>>,
    pub samples: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub seed: u64,
    pub scheme: Scheme,
    pub controller: String,
    pub interference_vehicles: usize,
    pub duration_s: f64,
    pub warmup_ms: u64,
    pub density_veh_per_km: f64,
    pub vehicles: usize,
    pub control_ticks: u64,
    pub aor: RateTable,
    pub peor: RateTable,
    pub peor_corrected: bool,
    pub objective: ObjectiveReport,
    pub merges: MergeCounts,
    /// Vehicles removed after a collision, any origin.
    pub collided_vehicles: usize,
    pub road_violations: usize,
    pub transmissions: u64,
    pub reselections: u64,
    pub receptions: ReceptionCounts,
}

#[derive(Clone, Debug)]
pub struct ScenarioResult {
    pub summary: Summary,
    pub events: Vec<ControlEvent>,
    pub trajectories: Vec<TrajectoryRow>,
    pub mac_log: Vec<MacRow>,
    pub metrics: FreshnessMetrics,
    /// Per ramp vehicle `(a, heading)` steps inside the merging area.
    pub merge_segments: Vec<(u32, Vec<(f64, f64)>)>,
}

struct Node {
    mac: MacState,
    buffer: NeighborBuffer,
}

struct Interferer {
    id: u32,
    /// Upstream end and length of the stretch it circulates in, m.
    lo: f64,
    len: f64,
    /// Offset within the stretch at the end of warm-up, m.
    x0: f64,
}

fn lerp(a: &VehicleState, b: &VehicleState, f: f64) -> VehicleState {
    VehicleState {
        x: a.x + (b.x - a.x) * f,
        y: a.y + (b.y - a.y) * f,
        v: a.v + (b.v - a.v) * f,
        phi: a.phi + (b.phi - a.phi) * f,
        road: b.road,
    }
}

/// Runs one coupled scenario. `policy` is required when the configuration
/// selects the learned controller and ignored otherwise.
pub fn run_scenario(cfg: &SimConfig, policy: Option<&Policy>) -> Result<ScenarioResult> {
    cfg.validate()?;
    let controller = match (cfg.controller, policy) {
        (ControllerKind::CaccTp, _) => Controller::CaccTp,
        (ControllerKind::Rl, Some(p)) => Controller::Policy(p),
        (ControllerKind::Rl, None) => return Err(Error::Config("controller = \"rl\" needs a policy checkpoint".into())),
    };
    let wcfg = cfg.world();
    let geo = wcfg.geo.clone();
    let params = wcfg.vehicle.clone();
    let grid = cfg.grid();
    let mac_cfg = cfg.mac();
    let channel = cfg.channel();
    let format = mac_cfg.scheme.sci_format();
    let sc = u32::from(grid.sc);
    let period = cfg.control_period_ms;
    let warmup = cfg.warmup_ms;
    let end = warmup + (cfg.duration_s * 1000.0).round() as u64;

    let mut world_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut world = World::new(wcfg, &mut world_rng);
    // Interference vehicles alternate between an upstream and a downstream
    // stretch of main road at the traffic spacing, each circulating within
    // its own stretch.
    let start_x = geo.start_x();
    let n_up = cfg.interference_vehicles.div_ceil(2);
    let n_down = cfg.interference_vehicles / 2;
    let interferers: Vec<Interferer> = (0..cfg.interference_vehicles)
        .map(|k| {
            let j = (k / 2) as f64;
            let (lo, len) = if k % 2 == 0 {
                (start_x - n_up as f64 * world.spacing, n_up as f64 * world.spacing)
            } else {
                (cfg.exit_x, n_down as f64 * world.spacing)
            };
            Interferer {
                id: INTERFERENCE_ID_BASE + k as u32,
                lo,
                len,
                x0: j * world.spacing + world.spacing / 2.0,
            }
        })
        .collect();
    let interferer_state = |it: &Interferer, now: u64| {
        let moved = cfg.interference_speed * now.saturating_sub(warmup) as f64 / 1000.0;
        VehicleState {
            x: it.lo + (it.x0 + moved).rem_euclid(it.len),
            y: cfg.interference_y,
            v: cfg.interference_speed,
            phi: 0.0,
            road: Road::Main,
        }
    };

    let new_node = |id: u32| Node {
        mac: MacState::new(&grid, &mac_cfg, cfg.seed, 1 + u64::from(id)),
        buffer: NeighborBuffer::new(),
    };
    let mut nodes: BTreeMap<u32, Node> = BTreeMap::new();
    for v in &world.vehicles {
        nodes.insert(v.id, new_node(v.id));
    }
    for it in &interferers {
        nodes.insert(it.id, new_node(it.id));
    }

    let mut deliveries: VecDeque<(u64, u32, BeaconPacket)> = VecDeque::new();
    let mut metrics = FreshnessMetrics::new(&cfg.aoi_thresholds_ms, &cfg.error_thresholds_m, &cfg.distances_m);
    let mut events_log = Vec::new();
    let mut trajectories = Vec::new();
    let mut mac_log = Vec::new();
    let mut receptions = ReceptionCounts::default();
    let mut transmissions = 0u64;
    let mut reselections = 0u64;
    let mut control_ticks = 0u64;
    let mut collided_vehicles = 0usize;
    let mut road_violations = 0usize;
    let mut last_tick = warmup;
    let mut report = SubframeReport::default();
    let noise_mw = dbm_to_mw(channel.noise_dbm);

    for now in 0..end {
        // Control on the packets delivered so far.
        if now >= warmup && (now - warmup) % period == 0 {
            control_ticks += 1;
            last_tick = now;
            let active: Vec<usize> = world.active().map(|(i, _)| i).collect();
            let mut actions = vec![(0.0, 0.0); world.vehicles.len()];
            for &i in &active {
                let v = &world.vehicles[i];
                let node = &nodes[&v.id];
                let mut records = Vec::new();
                for &j in &active {
                    if j == i {
                        continue;
                    }
                    let u = &world.vehicles[j];
                    records.push(neighbor_record(u.id, node.buffer.get(u.id), &v.state, &u.state, now, cfg.peor_corrected));
                }
                let ev = ControlEvent {
                    time_ms: now,
                    observer: v.id,
                    records,
                };
                metrics.push(&ev);
                events_log.push(ev);

                let neighbors: Vec<NeighborEstimate> = node
                    .buffer
                    .iter()
                    .filter(|p| p.id < INTERFERENCE_ID_BASE)
                    .map(|p| estimate_neighbor(p, now, &geo))
                    .collect();
                actions[i] = match (v.mode, controller) {
                    (ControlMode::Rl, Controller::Policy(pol)) => {
                        let s = build_state(&v.state, &neighbors, &geo, &params, cfg.sentinel_gap);
                        unit_to_action(pol.mean_unit(&s.observation(&geo, &params, cfg.sentinel_gap)), &params)
                    }
                    _ => {
                        let (a, d, _) = world.cacc_command(i, &neighbors);
                        (a, d)
                    }
                };
            }
            for &i in &active {
                let v = &world.vehicles[i];
                let (a, delta) = actions[i];
                trajectories.push(TrajectoryRow {
                    time_ms: now,
                    id: v.id,
                    road: v.state.road,
                    mode: v.mode,
                    x: v.state.x,
                    y: v.state.y,
                    v: v.state.v,
                    phi: v.state.phi,
                    a: a.clamp(params.a_min, params.a_max),
                    delta: delta.clamp(params.delta_min, params.delta_max),
                });
            }
            for (id, e) in world.apply(&actions) {
                match e {
                    Event::Spawned => {
                        nodes.insert(id, new_node(id));
                    }
                    Event::Exited | Event::Collision { .. } | Event::RoadViolation => {
                        match e {
                            Event::Collision { .. } => collided_vehicles += 1,
                            Event::RoadViolation => road_violations += 1,
                            _ => {}
                        }
                        if nodes.remove(&id).is_some() {
                            for n in nodes.values_mut() {
                                n.buffer.remove(id);
                            }
                        }
                    }
                    _ => {}
                }
            }
        }

        while deliveries.front().is_some_and(|d| d.0 == now) {
            let (_, rx, p) = deliveries.pop_front().unwrap();
            if let Some(n) = nodes.get_mut(&rx) {
                n.buffer.insert(p);
            }
        }

        // Radio positions at this millisecond.
        let moving = now >= warmup;
        let frac = if moving { (now - last_tick) as f64 / period as f64 } else { 0.0 };
        let mut ids = Vec::with_capacity(nodes.len());
        let mut states = Vec::with_capacity(nodes.len());
        for &id in nodes.keys() {
            let s = if id >= INTERFERENCE_ID_BASE {
                interferer_state(&interferers[(id - INTERFERENCE_ID_BASE) as usize], now)
            } else {
                let v = &world.vehicles[world.index_of(id).expect("node of a known vehicle")];
                if moving {
                    lerp(&v.base, &v.state, frac)
                } else {
                    v.state
                }
            };
            ids.push(id);
            states.push(s);
        }
        let positions: Vec<Vec2> = states.iter().map(|s| Vec2::new(s.x, s.y)).collect();

        let mut txs = Vec::new();
        let mut sent = Vec::new();
        for (k, (&id, node)) in nodes.iter_mut().enumerate() {
            if node.mac.ensure_reservation(now, &grid, &mac_cfg).is_some() {
                reselections += 1;
            }
            if !node.mac.due(now) {
                continue;
            }
            let d = node.mac.on_transmit_opportunity(now, &grid, &mac_cfg);
            if d.reselection.is_some() {
                reselections += 1;
            }
            transmissions += 1;
            mac_log.push(MacRow {
                time_ms: now,
                sender: id,
                subchannel: d.subchannel,
                rc: node.mac.rc,
                reselected: d.reselection.is_some(),
                p_th_dbm: node.mac.p_th_dbm,
            });
            let s = &states[k];
            let beacon = BeaconPacket {
                id,
                x: s.x,
                y: s.y,
                v: s.v,
                theta: s.phi,
                road: s.road,
                ts: now,
            };
            let word = encode_sci(&d.sci, sc, format)?;
            txs.push(RadioTx {
                sender: k,
                subchannel: d.subchannel,
                tx_power_dbm: channel.tx_power_dbm,
            });
            sent.push((word, beacon.to_bytes()));
        }

        if txs.is_empty() {
            for node in nodes.values_mut() {
                node.mac.history.record_idle(now, noise_mw);
            }
            continue;
        }
        adjudicate_into(&txs, &positions, grid.sc, &channel, &mut report);
        for o in &report.outcomes {
            match o.reason {
                Reason::Ok => receptions.ok += 1,
                Reason::HalfDuplex => receptions.half_duplex += 1,
                Reason::Collision => receptions.collision += 1,
                Reason::BelowSensitivity => receptions.below_sensitivity += 1,
            }
            if !o.decoded {
                continue;
            }
            let (word, bytes) = &sent[o.tx];
            let msg = decode_sci(*word, sc, format)?;
            let rsvp = decode_reservation(msg.resource_reservation)
                .ok_or_else(|| Error::Config(format!("undecodable reservation code {}", msg.resource_reservation)))?;
            let sender = ids[o.sender];
            let receiver = ids[o.receiver];
            let node = nodes.get_mut(&receiver).unwrap();
            node.mac.observe(
                sender as usize,
                SciObservation {
                    time: now,
                    subchannel: txs[o.tx].subchannel,
                    rsvp,
                    rc: (mac_cfg.scheme == Scheme::Enhanced).then_some(u32::from(msg.tail)),
                    rsrp_dbm: o.rsrp_dbm,
                },
            );
            deliveries.push_back((delivery_time(now), receiver, BeaconPacket::from_bytes(bytes)?));
        }
        for (k, node) in nodes.values_mut().enumerate() {
            if let Some(rssi) = &report.rssi_mw[k] {
                node.mac.history.record_listen(now, rssi);
            }
        }
    }

    let mut merges = MergeCounts::default();
    let mut segments = Vec::new();
    for v in &world.vehicles {
        let Some(m) = &v.merge else { continue };
        match m.outcome {
            Some(MergeOutcome::Success) => {
                merges.success += 1;
                if !m.collided_after_success {
                    merges.clean_success += 1;
                }
            }
            Some(MergeOutcome::Collision) => merges.collision += 1,
            Some(MergeOutcome::RoadViolation) => merges.road_violation += 1,
            Some(MergeOutcome::Timeout) => merges.timeout += 1,
            None if m.entered.is_some() || v.status == Status::Active => merges.unfinished += 1,
            None => continue,
        }
        merges.agents += 1;
        if m.entered.is_some() {
            segments.push((v.id, v.rl_segment()));
        }
    }
    let objective = objective_eval(&segments.iter().map(|s| s.1.clone()).collect::<Vec<_>>(), world.cfg.dt);
    let table = |g: &super::metrics::RateGrid| RateTable {
        thresholds: g.thresholds.clone(),
        distances: g.distances.clone(),
        rates: g.rates(),
        samples: g.total.clone(),
    };
    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        seed: cfg.seed,
        scheme: mac_cfg.scheme,
        controller: controller.name().into(),
        interference_vehicles: cfg.interference_vehicles,
        duration_s: cfg.duration_s,
        warmup_ms: warmup,
        density_veh_per_km: world.density,
        vehicles: world.vehicles.len(),
        control_ticks,
        aor: table(&metrics.aor),
        peor: table(&metrics.peor),
        peor_corrected: cfg.peor_corrected,
        objective,
        merges,
        collided_vehicles,
        road_violations,
        transmissions,
        reselections,
        receptions,
    };
    Ok(ScenarioResult {
        summary,
        events: events_log,
        trajectories,
        mac_log,
        metrics,
        merge_segments: segments,
    })
}
