//! Per-subframe radio adjudication: log-distance path loss, SINR capture,
//! half-duplex blocking, and the RSSI/RSRP measurements fed back to the MAC.

use serde::{Deserialize, Serialize};

use crate::grid::{dbm_to_mw, mw_to_dbm};
use crate::road::Vec2;

/// Application-layer delivery delay after a successful decode, ms.
pub const DELIVERY_LATENCY_MS: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Path loss at the reference distance, dB.
    pub pl0_db: f64,
    pub exponent: f64,
    /// Reference distance, m.
    pub d0: f64,
    pub noise_dbm: f64,
    pub sinr_threshold_db: f64,
    pub sensitivity_dbm: f64,
    pub tx_power_dbm: f64,
    /// Standard deviation of the per-link shadowing term, dB. 0 disables it.
    pub shadowing_sigma_db: f64,
    pub shadowing_seed: u64,
    /// Every transmission reaches every other node, including through
    /// half-duplex and collisions. Measurements are still computed.
    pub lossless: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            pl0_db: 47.0,
            exponent: 2.5,
            d0: 1.0,
            noise_dbm: -95.0,
            sinr_threshold_db: 2.0,
            sensitivity_dbm: -90.5,
            tx_power_dbm: 23.0,
            shadowing_sigma_db: 0.0,
            shadowing_seed: 0,
            lossless: false,
        }
    }
}

/// Deterministic log-distance path loss, dB. Distances below `d0` are clamped.
pub fn path_loss(tx: Vec2, rx: Vec2, cfg: &ChannelConfig) -> f64 {
    let d = (tx.x - rx.x).hypot(tx.y - rx.y);
    cfg.pl0_db + 10.0 * cfg.exponent * (d.max(cfg.d0) / cfg.d0).log10()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Static, reciprocal shadowing for the link between nodes `a` and `b`.
pub fn link_shadowing(a: usize, b: usize, cfg: &ChannelConfig) -> f64 {
    if cfg.shadowing_sigma_db == 0.0 {
        return 0.0;
    }
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let h1 = splitmix(cfg.shadowing_seed ^ splitmix(lo as u64) ^ splitmix(hi as u64).rotate_left(17));
    let h2 = splitmix(h1);
    // Box-Muller on two uniforms in (0, 1].
    let u1 = ((h1 >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let u2 = (h2 >> 11) as f64 / (1u64 << 53) as f64;
    cfg.shadowing_sigma_db * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Received power in dBm from node `a` at `pa` to node `b` at `pb`.
pub fn rx_power_dbm(a: usize, pa: Vec2, b: usize, pb: Vec2, tx_power_dbm: f64, cfg: &ChannelConfig) -> f64 {
    tx_power_dbm - path_loss(pa, pb, cfg) - link_shadowing(a, b, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Ok,
    HalfDuplex,
    Collision,
    BelowSensitivity,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Ok => "ok",
            Reason::HalfDuplex => "half_duplex",
            Reason::Collision => "collision",
            Reason::BelowSensitivity => "below_sensitivity",
        }
    }
}

/// One radio emission within the adjudicated subframe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadioTx {
    /// Index of the sender in the node slice.
    pub sender: usize,
    pub subchannel: u8,
    pub tx_power_dbm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReceptionOutcome {
    pub receiver: usize,
    /// Index into the transmission slice.
    pub tx: usize,
    pub sender: usize,
    pub decoded: bool,
    pub rsrp_dbm: f64,
    /// Total energy on the transmission's SSR at the receiver, noise included.
    pub rssi_dbm: f64,
    pub reason: Reason,
}

/// Outcome of one subframe. `rssi_mw[node]` holds per-subchannel energy for
/// listening nodes and is `None` for nodes that transmitted.
#[derive(Clone, Debug, Default)]
pub struct SubframeReport {
    pub outcomes: Vec<ReceptionOutcome>,
    pub rssi_mw: Vec<Option<Vec<f64>>>,
}

/// Resolves every (transmission, receiver) pair of one subframe. `nodes`
/// holds the position of every radio; `txs` must reference distinct senders.
pub fn adjudicate_subframe(txs: &[RadioTx], nodes: &[Vec2], sc: u8, cfg: &ChannelConfig) -> SubframeReport {
    let mut report = SubframeReport::default();
    adjudicate_into(txs, nodes, sc, cfg, &mut report);
    report
}

/// As [`adjudicate_subframe`], reusing the buffers of `out`.
pub fn adjudicate_into(txs: &[RadioTx], nodes: &[Vec2], sc: u8, cfg: &ChannelConfig, out: &mut SubframeReport) {
    let sc = usize::from(sc.max(1));
    out.outcomes.clear();
    out.rssi_mw.resize(nodes.len(), None);
    let noise_mw = dbm_to_mw(cfg.noise_dbm);
    let sinr_th = dbm_to_mw(cfg.sinr_threshold_db);
    let mut transmitting = vec![false; nodes.len()];
    for tx in txs {
        transmitting[tx.sender] = true;
    }
    let mut p_mw = vec![0.0; txs.len()];
    for (rx, &pos) in nodes.iter().enumerate() {
        let mut per_ch = vec![noise_mw; sc];
        for (k, tx) in txs.iter().enumerate() {
            p_mw[k] = if tx.sender == rx {
                0.0
            } else {
                dbm_to_mw(rx_power_dbm(tx.sender, nodes[tx.sender], rx, pos, tx.tx_power_dbm, cfg))
            };
            per_ch[usize::from(tx.subchannel) % sc] += p_mw[k];
        }
        for (k, tx) in txs.iter().enumerate() {
            if tx.sender == rx {
                continue;
            }
            let ch = usize::from(tx.subchannel) % sc;
            let total = per_ch[ch];
            let rsrp_dbm = mw_to_dbm(p_mw[k]);
            let sinr = p_mw[k] / (total - p_mw[k]);
            let reason = if transmitting[rx] {
                Reason::HalfDuplex
            } else if rsrp_dbm < cfg.sensitivity_dbm {
                Reason::BelowSensitivity
            } else if sinr < sinr_th {
                if total - p_mw[k] > noise_mw * (1.0 + 1e-12) {
                    Reason::Collision
                } else {
                    Reason::BelowSensitivity
                }
            } else {
                Reason::Ok
            };
            let decoded = cfg.lossless || reason == Reason::Ok;
            out.outcomes.push(ReceptionOutcome {
                receiver: rx,
                tx: k,
                sender: tx.sender,
                decoded,
                rsrp_dbm,
                rssi_dbm: mw_to_dbm(total),
                reason: if decoded { Reason::Ok } else { reason },
            });
        }
        out.rssi_mw[rx] = if transmitting[rx] { None } else { Some(per_ch) };
    }
}

/// Time at which a packet decoded at `now` becomes visible to the controller.
pub fn delivery_time(now: u64) -> u64 {
    now + DELIVERY_LATENCY_MS
}
