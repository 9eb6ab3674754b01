//! Information-freshness metrics sampled at control ticks, and the
//! energy/comfort objective of merging trajectories.

use serde::{Deserialize, Serialize};

use super::config::inf_f64;
use crate::control::BeaconPacket;
use crate::road::VehicleState;

/// What an observer knew about one neighbour at a control tick.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub neighbor: u32,
    /// `now - ts` of the freshest usable packet; infinite before the first one.
    #[serde(with = "inf_f64")]
    pub aoi_ms: f64,
    /// True centre-to-centre distance, m.
    pub distance_m: f64,
    /// Packet position against true position; infinite without a packet.
    #[serde(with = "inf_f64")]
    pub position_error_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlEvent {
    pub time_ms: u64,
    pub observer: u32,
    pub records: Vec<NeighborRecord>,
}

/// Builds one observer's record of `neighbor` at `now`. `corrected`
/// extrapolates the packet position along its heading before comparing.
pub fn neighbor_record(
    neighbor: u32,
    packet: Option<&BeaconPacket>,
    observer_true: &VehicleState,
    neighbor_true: &VehicleState,
    now: u64,
    corrected: bool,
) -> NeighborRecord {
    let distance_m = (neighbor_true.x - observer_true.x).hypot(neighbor_true.y - observer_true.y);
    match packet {
        None => NeighborRecord {
            neighbor,
            aoi_ms: f64::INFINITY,
            distance_m,
            position_error_m: f64::INFINITY,
        },
        Some(p) => {
            let aoi = now.saturating_sub(p.ts);
            let (mut x, mut y) = (p.x, p.y);
            if corrected {
                let s = aoi as f64 / 1000.0;
                x += p.v * p.theta.cos() * s;
                y += p.v * p.theta.sin() * s;
            }
            NeighborRecord {
                neighbor,
                aoi_ms: aoi as f64,
                distance_m,
                position_error_m: (neighbor_true.x - x).hypot(neighbor_true.y - y),
            }
        }
    }
}

fn rate(events: &[ControlEvent], d: f64, over: impl Fn(&NeighborRecord) -> bool) -> Option<f64> {
    let mut num = 0u64;
    let mut den = 0u64;
    for r in events.iter().flat_map(|e| &e.records) {
        if r.distance_m <= d {
            den += 1;
            num += u64::from(over(r));
        }
    }
    (den > 0).then(|| num as f64 / den as f64)
}

/// Fraction of (observer, tick, neighbour within `d`) samples whose AoI
/// exceeds `aoi_th`. `None` when no sample lies within `d`.
pub fn aor(events: &[ControlEvent], aoi_th: f64, d: f64) -> Option<f64> {
    rate(events, d, |r| r.aoi_ms > aoi_th)
}

/// As [`aor`], with the position error against `e_th`.
pub fn peor(events: &[ControlEvent], e_th: f64, d: f64) -> Option<f64> {
    rate(events, d, |r| r.position_error_m > e_th)
}

/// Counts for every (threshold, distance) pair, accumulated one event at a
/// time so that the raw log need not be kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateGrid {
    #[serde(with = "inf_f64::vec")]
    pub thresholds: Vec<f64>,
    #[serde(with = "inf_f64::vec")]
    pub distances: Vec<f64>,
    /// `over[t][k]`: samples within `distances[k]` above `thresholds[t]`.
    pub over: Vec<Vec<u64>>,
    /// `total[k]`: samples within `distances[k]`.
    pub total: Vec<u64>,
}

impl RateGrid {
    pub fn new(thresholds: &[f64], distances: &[f64]) -> Self {
        Self {
            thresholds: thresholds.to_vec(),
            distances: distances.to_vec(),
            over: vec![vec![0; distances.len()]; thresholds.len()],
            total: vec![0; distances.len()],
        }
    }

    pub fn add(&mut self, distance: f64, value: f64) {
        for (k, &d) in self.distances.iter().enumerate() {
            if distance <= d {
                self.total[k] += 1;
                for (t, &th) in self.thresholds.iter().enumerate() {
                    if value > th {
                        self.over[t][k] += 1;
                    }
                }
            }
        }
    }

    pub fn merge(&mut self, other: &RateGrid) {
        assert_eq!(self.thresholds, other.thresholds);
        assert_eq!(self.distances, other.distances);
        for (a, b) in self.total.iter_mut().zip(&other.total) {
            *a += b;
        }
        for (ra, rb) in self.over.iter_mut().zip(&other.over) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
    }

    pub fn rate(&self, t: usize, k: usize) -> Option<f64> {
        (self.total[k] > 0).then(|| self.over[t][k] as f64 / self.total[k] as f64)
    }

    /// Rates as `[threshold][distance]`.
    pub fn rates(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.thresholds.len())
            .map(|t| (0..self.distances.len()).map(|k| self.rate(t, k)).collect())
            .collect()
    }
}

/// Streaming AOR and PEOR over the configured grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreshnessMetrics {
    pub aor: RateGrid,
    pub peor: RateGrid,
}

impl FreshnessMetrics {
    pub fn new(aoi_thresholds: &[f64], error_thresholds: &[f64], distances: &[f64]) -> Self {
        Self {
            aor: RateGrid::new(aoi_thresholds, distances),
            peor: RateGrid::new(error_thresholds, distances),
        }
    }

    pub fn push(&mut self, e: &ControlEvent) {
        for r in &e.records {
            self.aor.add(r.distance_m, r.aoi_ms);
            self.peor.add(r.distance_m, r.position_error_m);
        }
    }
}

/// Energy and comfort cost of a set of trajectories.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub total: f64,
    /// Sum of squared accelerations.
    pub consum: f64,
    /// Sum of absolute acceleration and heading rates.
    pub comfort: f64,
}

/// Objective over per-vehicle `(acceleration, heading)` step logs sampled
/// every `dt` seconds.
pub fn objective_eval(trajectories: &[Vec<(f64, f64)>], dt: f64) -> ObjectiveReport {
    let mut consum = 0.0;
    let mut comfort = 0.0;
    for tr in trajectories {
        consum += tr.iter().map(|(a, _)| a * a).sum::<f64>();
        comfort += tr
            .windows(2)
            .map(|w| ((w[1].0 - w[0].0).abs() + (w[1].1 - w[0].1).abs()) / dt)
            .sum::<f64>();
    }
    ObjectiveReport {
        total: consum + comfort,
        consum,
        comfort,
    }
}
