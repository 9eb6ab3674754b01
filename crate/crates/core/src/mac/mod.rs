//! Per-vehicle sidelink MAC: reselection counter lifecycle and the sensing
//! based resource selection shared by the standard (SB-SPS) and enhanced
//! (ESB-SPS) schemes.

pub mod sci;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{a_rssi, selection_window, GridConfig, SensingHistory, SsrAddress, SsrSet};
use sci::{encode_reservation, estimated_rc, SciFormat, SciMessage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// SB-SPS: receivers estimate the remaining reservation length.
    Standard,
    /// ESB-SPS: the SCI carries RC and the whole reservation set is checked.
    Enhanced,
}

impl Scheme {
    pub fn sci_format(self) -> SciFormat {
        match self {
            Scheme::Standard => SciFormat::Standard,
            Scheme::Enhanced => SciFormat::Proposed,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Standard => "standard",
            Scheme::Enhanced => "enhanced",
        }
    }
}

/// Resolution at which two reservation sets are considered to overlap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overlap {
    /// Same subframe on any subchannel: the two radios cannot hear each other.
    Subframe,
    /// Same subframe and subchannel.
    Ssr,
    /// Same-SSR exclusion with its own threshold escalation, then
    /// same-subframe exclusion among the survivors with a second one.
    Tiered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacConfig {
    pub scheme: Scheme,
    pub p_th_init_dbm: f64,
    pub p_th_step_db: f64,
    /// Probability of keeping the resource when RC expires.
    pub beta: f64,
    pub esb_overlap: Overlap,
    pub mcs: u8,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Enhanced,
            p_th_init_dbm: -110.0,
            p_th_step_db: 3.0,
            beta: 0.0,
            esb_overlap: Overlap::Tiered,
            mcs: 0,
        }
    }
}

/// Uniform reselection counter. For 20 ms and longer periods below 100 ms
/// the range is `[5, 15]` scaled by `100 / rsvp`; 100 ms and above use `[5, 15]`.
pub fn draw_rc<R: Rng + ?Sized>(rsvp_ms: u32, rng: &mut R) -> u32 {
    let (lo, hi) = rc_range(rsvp_ms);
    rng.random_range(lo..=hi)
}

pub fn rc_range(rsvp_ms: u32) -> (u32, u32) {
    if rsvp_ms >= 100 {
        return (5, 15);
    }
    let scale = 100.0 / f64::from(rsvp_ms.max(20));
    ((5.0 * scale).round() as u32, (15.0 * scale).round() as u32)
}

/// A decoded SCI kept in the sensing record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SciObservation {
    pub time: u64,
    pub subchannel: u8,
    pub rsvp: u32,
    /// Carried RC, proposed format only.
    pub rc: Option<u32>,
    pub rsrp_dbm: f64,
}

impl SciObservation {
    /// Reservation length assumed for this observation under `scheme`.
    pub fn projected_rc(&self, scheme: Scheme) -> u32 {
        match (scheme, self.rc) {
            (Scheme::Enhanced, Some(rc)) => rc,
            _ => estimated_rc(self.rsvp),
        }
    }
}

/// Result of one resource (re)selection.
#[derive(Clone, Debug)]
pub struct Selection {
    pub time: u64,
    pub addr: SsrAddress,
    pub rc: u32,
    /// Exclusion threshold after escalation.
    pub p_th_dbm: f64,
    /// Candidate window annotated with exclusion and A-RSSI.
    pub candidates: SsrSet,
    /// Indices into `candidates` of the ranked best subset.
    pub best: Vec<usize>,
    /// Index into `candidates` of the picked resource.
    pub chosen: usize,
}

/// Least subset size strictly exceeding 20 % of the window.
pub fn best_set_size(window: usize) -> usize {
    window / 5 + 1
}

/// Raises the exclusion threshold in steps until at least `target`
/// candidates have `worst <= threshold`, then gives up on half-duplex
/// blinding, then stops at the loudest value. Only candidates in `within`
/// count when given.
fn escalate(worst: &[f64], blind: &[bool], within: Option<&[bool]>, start: f64, mac: &MacConfig, target: usize) -> (f64, bool) {
    let pool = |i: usize| within.map_or(true, |w| w[i]);
    let loudest = (0..worst.len()).filter(|&i| pool(i)).map(|i| worst[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut p_th = start;
    let mut honor_blind = within.is_none();
    loop {
        let n = (0..worst.len())
            .filter(|&i| pool(i) && worst[i] <= p_th && !(honor_blind && blind[i]))
            .count();
        if n >= target {
            return (p_th, honor_blind);
        }
        if p_th >= loudest {
            if honor_blind {
                honor_blind = false;
                continue;
            }
            return (p_th, honor_blind);
        }
        p_th += mac.p_th_step_db;
    }
}

/// Sensing-based selection. `rc` is drawn first so that the candidate's own
/// reservation set can be checked against every projected foreign one.
pub fn select_resource<'a, R: Rng + ?Sized>(
    history: &SensingHistory,
    observations: impl IntoIterator<Item = &'a SciObservation>,
    now: u64,
    grid: &GridConfig,
    mac: &MacConfig,
    rng: &mut R,
) -> Selection {
    let rc = draw_rc(grid.rsvp, rng);
    let rsvp = u64::from(grid.rsvp);
    let sc = usize::from(grid.sc);
    let mut candidates = selection_window(now, grid);
    let m = candidates.len();
    let base = now + u64::from(grid.t1);
    let horizon = (grid.t2 - grid.t1 + 1) as usize + (rc as usize - 1) * grid.rsvp as usize;
    let overlap = match mac.scheme {
        Scheme::Standard => Overlap::Ssr,
        Scheme::Enhanced => mac.esb_overlap,
    };

    // Loudest projected foreign reservation per (subframe, subchannel) and per subframe.
    let mut busy = vec![f64::NEG_INFINITY; horizon * sc];
    let mut busy_sf = vec![f64::NEG_INFINITY; horizon];
    let oldest = now.saturating_sub(u64::from(grid.sensing_len));
    for obs in observations {
        if obs.time < oldest || obs.time >= now + 1 || !obs.rsrp_dbm.is_finite() {
            continue;
        }
        let period = u64::from(obs.rsvp.max(1));
        for k in 0..u64::from(obs.projected_rc(mac.scheme)) {
            let t = obs.time + k * period;
            if t < base {
                continue;
            }
            let off = (t - base) as usize;
            if off >= horizon {
                break;
            }
            busy_sf[off] = busy_sf[off].max(obs.rsrp_dbm);
            if let Some(c) = busy.get_mut(off * sc + usize::from(obs.subchannel)) {
                *c = c.max(obs.rsrp_dbm);
            }
        }
    }

    let blind_depth = estimated_rc(grid.rsvp) as u64;
    let mut worst_ssr = Vec::with_capacity(m);
    let mut worst_sf = Vec::with_capacity(m);
    let mut blind = Vec::with_capacity(m);
    for e in &candidates.entries {
        let off = (e.time - base) as usize;
        let ch = usize::from(e.addr.subchannel());
        let offs = (0..rc as usize).map(|i| off + i * grid.rsvp as usize);
        worst_ssr.push(offs.clone().map(|o| busy[o * sc + ch]).fold(f64::NEG_INFINITY, f64::max));
        worst_sf.push(offs.map(|o| busy_sf[o]).fold(f64::NEG_INFINITY, f64::max));
        blind.push((1..=blind_depth).any(|k| e.time >= k * rsvp && history.transmitted_at(e.time - k * rsvp)));
    }

    let target = best_set_size(m);
    let primary = if overlap == Overlap::Subframe { &worst_sf } else { &worst_ssr };
    let (p_th, honor_blind) = escalate(primary, &blind, None, mac.p_th_init_dbm, mac, target);
    let mut keep: Vec<bool> = (0..m).map(|i| primary[i] <= p_th && !(honor_blind && blind[i])).collect();
    if overlap == Overlap::Tiered {
        let (p_sf, _) = escalate(&worst_sf, &blind, Some(&keep), p_th, mac, target);
        for (i, k) in keep.iter_mut().enumerate() {
            *k &= worst_sf[i] <= p_sf;
        }
    }

    let mut order = Vec::with_capacity(m);
    for (i, e) in candidates.entries.iter_mut().enumerate() {
        e.excluded = !keep[i];
        if !e.excluded {
            e.a_rssi_dbm = a_rssi(e.addr, now, history, grid);
            order.push(i);
        }
    }
    // Unsensed resources first, then ascending A-RSSI; the window is already
    // in (time, subchannel) order and the sort is stable.
    order.sort_by(|&a, &b| {
        let ka = candidates.entries[a].a_rssi_dbm.unwrap_or(f64::NEG_INFINITY);
        let kb = candidates.entries[b].a_rssi_dbm.unwrap_or(f64::NEG_INFINITY);
        ka.total_cmp(&kb)
    });
    order.truncate(target);
    let chosen = order[rng.random_range(0..order.len())];
    let entry = &candidates.entries[chosen];
    Selection {
        time: entry.time,
        addr: entry.addr,
        rc,
        p_th_dbm: p_th,
        best: order,
        chosen,
        candidates,
    }
}

pub fn sbsps_select<'a, R: Rng + ?Sized>(
    history: &SensingHistory,
    observations: impl IntoIterator<Item = &'a SciObservation>,
    now: u64,
    grid: &GridConfig,
    mac: &MacConfig,
    rng: &mut R,
) -> Selection {
    let cfg = MacConfig {
        scheme: Scheme::Standard,
        ..mac.clone()
    };
    select_resource(history, observations, now, grid, &cfg, rng)
}

pub fn esbsps_select<'a, R: Rng + ?Sized>(
    history: &SensingHistory,
    observations: impl IntoIterator<Item = &'a SciObservation>,
    now: u64,
    grid: &GridConfig,
    mac: &MacConfig,
    rng: &mut R,
) -> Selection {
    let cfg = MacConfig {
        scheme: Scheme::Enhanced,
        ..mac.clone()
    };
    select_resource(history, observations, now, grid, &cfg, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub next_tx: u64,
    pub subchannel: u8,
}

/// What the MAC does at one transmit opportunity.
#[derive(Clone, Debug)]
pub struct TxDecision {
    pub subchannel: u8,
    pub sci: SciMessage,
    /// Set when RC expired and a new resource was selected.
    pub reselection: Option<Selection>,
}

#[derive(Clone, Debug)]
pub struct MacState {
    pub rc: u32,
    pub reservation: Option<Reservation>,
    pub history: SensingHistory,
    /// Latest decoded SCI per sender.
    pub observations: BTreeMap<usize, SciObservation>,
    pub p_th_dbm: f64,
    rng: ChaCha8Rng,
}

impl MacState {
    pub fn new(grid: &GridConfig, mac: &MacConfig, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rc: 0,
            reservation: None,
            history: SensingHistory::new(grid.sensing_len, grid.sc),
            observations: BTreeMap::new(),
            p_th_dbm: mac.p_th_init_dbm,
            rng,
        }
    }

    /// True when the current reservation falls on `now`.
    pub fn due(&self, now: u64) -> bool {
        self.reservation.is_some_and(|r| r.next_tx == now)
    }

    pub fn observe(&mut self, sender: usize, obs: SciObservation) {
        self.observations.insert(sender, obs);
    }

    /// Runs a selection triggered at `now` and adopts its result.
    pub fn reselect(&mut self, now: u64, grid: &GridConfig, mac: &MacConfig) -> Selection {
        let oldest = now.saturating_sub(u64::from(grid.sensing_len));
        self.observations.retain(|_, o| o.time >= oldest);
        let sel = select_resource(&self.history, self.observations.values(), now, grid, mac, &mut self.rng);
        self.rc = sel.rc;
        self.p_th_dbm = sel.p_th_dbm;
        self.reservation = Some(Reservation {
            next_tx: sel.time,
            subchannel: sel.addr.subchannel(),
        });
        sel
    }

    /// Selects a first resource if the vehicle holds none.
    pub fn ensure_reservation(&mut self, now: u64, grid: &GridConfig, mac: &MacConfig) -> Option<Selection> {
        self.reservation.is_none().then(|| self.reselect(now, grid, mac))
    }

    /// Transmits on the current reservation at `now` (which must be due),
    /// consumes one unit of RC and, when it runs out, either keeps the
    /// resource with probability `beta` or reselects.
    pub fn on_transmit_opportunity(&mut self, now: u64, grid: &GridConfig, mac: &MacConfig) -> TxDecision {
        let res = self.reservation.expect("transmit opportunity without a reservation");
        debug_assert_eq!(res.next_tx, now);
        let tail = match mac.scheme {
            Scheme::Enhanced => self.rc.min(255) as u16,
            Scheme::Standard => 0,
        };
        let sci = SciMessage {
            resource_reservation: encode_reservation(grid.rsvp).unwrap_or(0),
            frequency_resource_location: u16::from(res.subchannel),
            mcs: mac.mcs,
            transmission_format: 0,
            reserved: 0,
            tail,
        };
        self.history.record_transmit(now);
        self.rc = self.rc.saturating_sub(1);
        let mut reselection = None;
        if self.rc == 0 {
            let keep = self.rng.random::<f64>() < mac.beta;
            if keep {
                self.rc = draw_rc(grid.rsvp, &mut self.rng);
                self.reservation = Some(Reservation {
                    next_tx: now + u64::from(grid.rsvp),
                    ..res
                });
            } else {
                reselection = Some(self.reselect(now, grid, mac));
            }
        } else {
            self.reservation = Some(Reservation {
                next_tx: now + u64::from(grid.rsvp),
                ..res
            });
        }
        TxDecision {
            subchannel: res.subchannel,
            sci,
            reselection,
        }
    }
}
