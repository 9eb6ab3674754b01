//! Sidelink time/frequency resource grid.
//!
//! Time is tracked by the simulator as an unbounded millisecond counter; on
//! the air it wraps into the system frame number cycle of 1024 frames of ten
//! 1 ms subframes. An [`SsrAddress`] names one single-subframe resource (SSR):
//! a (frame, subframe, subchannel) cell of that cycle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FRAMES_PER_CYCLE: u32 = 1024;
pub const SUBFRAMES_PER_FRAME: u32 = 10;
/// Subframes in one SFN cycle.
pub const CYCLE_SUBFRAMES: u32 = FRAMES_PER_CYCLE * SUBFRAMES_PER_FRAME;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SsrAddress {
    frame: u16,
    subframe: u8,
    subchannel: u8,
}

impl SsrAddress {
    pub fn new(frame: u16, subframe: u8, subchannel: u8, sc: u8) -> Result<Self> {
        if u32::from(frame) >= FRAMES_PER_CYCLE {
            return Err(Error::Address(format!("frame {frame} outside [0, 1023]")));
        }
        if u32::from(subframe) >= SUBFRAMES_PER_FRAME {
            return Err(Error::Address(format!("subframe {subframe} outside [0, 9]")));
        }
        if subchannel >= sc {
            return Err(Error::Address(format!(
                "subchannel {subchannel} outside [0, {}]",
                sc.saturating_sub(1)
            )));
        }
        Ok(Self {
            frame,
            subframe,
            subchannel,
        })
    }

    /// Inverse of [`SsrAddress::absolute_subframe`]; `abs` is reduced modulo the SFN cycle.
    pub fn from_absolute(abs: u32, subchannel: u8) -> Self {
        let abs = abs % CYCLE_SUBFRAMES;
        Self {
            frame: (abs / SUBFRAMES_PER_FRAME) as u16,
            subframe: (abs % SUBFRAMES_PER_FRAME) as u8,
            subchannel,
        }
    }

    /// Address of simulation time `t_ms` on `subchannel`.
    pub fn at_time(t_ms: u64, subchannel: u8) -> Self {
        Self::from_absolute((t_ms % u64::from(CYCLE_SUBFRAMES)) as u32, subchannel)
    }

    pub fn frame(&self) -> u16 {
        self.frame
    }

    pub fn subframe(&self) -> u8 {
        self.subframe
    }

    pub fn subchannel(&self) -> u8 {
        self.subchannel
    }

    pub fn absolute_subframe(&self) -> u32 {
        u32::from(self.frame) * SUBFRAMES_PER_FRAME + u32::from(self.subframe)
    }
}

pub fn absolute_subframe(addr: SsrAddress) -> u32 {
    addr.absolute_subframe()
}

/// The `i`-th SSR reserved from `addr` with reservation period `rsvp_ms`:
/// the absolute subframe advances by `i * rsvp_ms` (mod the SFN cycle) and the
/// subchannel is kept.
pub fn co_map(addr: SsrAddress, i: u32, rsvp_ms: u32) -> SsrAddress {
    let step = (u64::from(i) * u64::from(rsvp_ms)) % u64::from(CYCLE_SUBFRAMES);
    let abs = (u64::from(addr.absolute_subframe()) + step) % u64::from(CYCLE_SUBFRAMES);
    SsrAddress::from_absolute(abs as u32, addr.subchannel)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Subchannel count.
    pub sc: u8,
    /// Resource reservation period, ms.
    pub rsvp: u32,
    /// Selection window offsets, subframes after the trigger.
    pub t1: u32,
    pub t2: u32,
    /// Sensing window length, ms.
    pub sensing_len: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            sc: 3,
            rsvp: 20,
            t1: 4,
            t2: 20,
            sensing_len: 1000,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sc == 0 {
            return Err(Error::Config("subchannel count must be >= 1".into()));
        }
        if self.rsvp == 0 {
            return Err(Error::Config("reservation period must be > 0".into()));
        }
        if !(20..=100).contains(&self.t2) {
            return Err(Error::Config(format!("T2 = {} outside [20, 100]", self.t2)));
        }
        if self.t1 > self.t2 {
            return Err(Error::Config(format!("T1 = {} exceeds T2 = {}", self.t1, self.t2)));
        }
        if self.sensing_len == 0 {
            return Err(Error::Config("sensing window must be > 0 ms".into()));
        }
        Ok(())
    }

    /// Number of SSRs in every selection window.
    pub fn window_size(&self) -> usize {
        (self.t2 - self.t1 + 1) as usize * usize::from(self.sc)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsrEntry {
    pub addr: SsrAddress,
    /// Simulation time of the subframe, ms.
    pub time: u64,
    pub a_rssi_dbm: Option<f64>,
    pub excluded: bool,
}

/// Candidate resources of one selection, ordered by (time, subchannel).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SsrSet {
    pub entries: Vec<SsrEntry>,
}

impl SsrSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SsrEntry> {
        self.entries.iter()
    }
}

/// All SSRs with time in `[now + T1, now + T2]` across every subchannel.
pub fn selection_window(now: u64, cfg: &GridConfig) -> SsrSet {
    let mut entries = Vec::with_capacity(cfg.window_size());
    for t in now + u64::from(cfg.t1)..=now + u64::from(cfg.t2) {
        for ch in 0..cfg.sc {
            entries.push(SsrEntry {
                addr: SsrAddress::at_time(t, ch),
                time: t,
                a_rssi_dbm: None,
                excluded: false,
            });
        }
    }
    SsrSet { entries }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Per-vehicle record of what the radio measured over the last
/// `sensing_len` milliseconds: RSSI per subchannel for subframes it listened
/// to, and the subframes in which it transmitted (half-duplex blind spots).
#[derive(Clone, Debug)]
pub struct SensingHistory {
    len: usize,
    sc: usize,
    stamp: Vec<u64>,
    transmitted: Vec<bool>,
    rssi_mw: Vec<f64>,
}

impl SensingHistory {
    pub fn new(sensing_len: u32, sc: u8) -> Self {
        let len = sensing_len.max(1) as usize;
        let sc = usize::from(sc.max(1));
        Self {
            len,
            sc,
            stamp: vec![u64::MAX; len],
            transmitted: vec![false; len],
            rssi_mw: vec![f64::NAN; len * sc],
        }
    }

    fn slot(&self, t: u64) -> usize {
        (t % self.len as u64) as usize
    }

    /// Stores one listened subframe; `rssi_mw[ch]` is the total received
    /// energy (noise included) on subchannel `ch`.
    pub fn record_listen(&mut self, t: u64, rssi_mw: &[f64]) {
        let s = self.slot(t);
        self.stamp[s] = t;
        self.transmitted[s] = false;
        for ch in 0..self.sc {
            self.rssi_mw[s * self.sc + ch] = rssi_mw.get(ch).copied().unwrap_or(f64::NAN);
        }
    }

    pub fn record_idle(&mut self, t: u64, noise_mw: f64) {
        let s = self.slot(t);
        self.stamp[s] = t;
        self.transmitted[s] = false;
        self.rssi_mw[s * self.sc..(s + 1) * self.sc].fill(noise_mw);
    }

    pub fn record_transmit(&mut self, t: u64) {
        let s = self.slot(t);
        self.stamp[s] = t;
        self.transmitted[s] = true;
        self.rssi_mw[s * self.sc..(s + 1) * self.sc].fill(f64::NAN);
    }

    pub fn rssi_mw(&self, t: u64, ch: u8) -> Option<f64> {
        let s = self.slot(t);
        if self.stamp[s] != t || usize::from(ch) >= self.sc {
            return None;
        }
        let v = self.rssi_mw[s * self.sc + usize::from(ch)];
        (!v.is_nan()).then_some(v)
    }

    pub fn transmitted_at(&self, t: u64) -> bool {
        let s = self.slot(t);
        self.stamp[s] == t && self.transmitted[s]
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Average RSSI of the sensed SSRs that map onto `addr` under some CO
/// iterate, averaged in linear power and reported in dBm. `None` when the
/// sensing window `[now - sensing_len, now - 1]` holds no such sample.
pub fn a_rssi(addr: SsrAddress, now: u64, history: &SensingHistory, cfg: &GridConfig) -> Option<f64> {
    // r maps onto addr for some i iff r ≡ addr (mod gcd(rsvp, cycle)).
    let cycle = u64::from(CYCLE_SUBFRAMES);
    let step = gcd(u64::from(cfg.rsvp), cycle);
    let lo = now.saturating_sub(u64::from(cfg.sensing_len));
    if now == 0 {
        return None;
    }
    let target = u64::from(addr.absolute_subframe()) % step;
    let first = lo + (target + step - (lo % cycle) % step) % step;
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut t = first;
    while t < now {
        if let Some(mw) = history.rssi_mw(t, addr.subchannel()) {
            sum += mw;
            n += 1;
        }
        t += step;
    }
    (n > 0).then(|| mw_to_dbm(sum / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(f: u16, s: u8, c: u8) -> SsrAddress {
        SsrAddress::new(f, s, c, 3).unwrap()
    }

    #[test]
    fn absolute_subframe_examples() {
        assert_eq!(addr(0, 0, 0).absolute_subframe(), 0);
        assert_eq!(addr(1023, 9, 2).absolute_subframe(), 10239);
        assert_eq!(addr(2, 5, 1).absolute_subframe(), 25);
        let a = addr(777, 3, 2);
        assert_eq!(SsrAddress::from_absolute(a.absolute_subframe(), 2), a);
    }

    #[test]
    fn address_validation() {
        assert!(SsrAddress::new(1024, 0, 0, 3).is_err());
        assert!(SsrAddress::new(0, 10, 0, 3).is_err());
        assert!(SsrAddress::new(0, 0, 3, 3).is_err());
    }

    #[test]
    fn co_map_examples() {
        assert_eq!(co_map(addr(0, 0, 1), 1, 20), addr(2, 0, 1));
        assert_eq!(co_map(addr(1023, 5, 0), 1, 20), addr(1, 5, 0));
        assert_eq!(co_map(addr(0, 0, 2), 0, 20), addr(0, 0, 2));
    }

    #[test]
    fn window_examples() {
        let cfg = GridConfig::default();
        let w = selection_window(1000, &cfg);
        assert_eq!(w.len(), 51);
        assert_eq!(w.entries.first().unwrap().time, 1004);
        assert_eq!(w.entries.last().unwrap().time, 1020);

        let cfg1 = GridConfig {
            sc: 1,
            t1: 4,
            t2: 4,
            ..GridConfig::default()
        };
        assert_eq!(selection_window(0, &cfg1).len(), 1);
    }

    #[test]
    fn window_wraps_the_sfn_cycle() {
        let cfg = GridConfig::default();
        let w = selection_window(10235, &cfg);
        assert_eq!(w.len(), 51);
        // Oracle: enumerate offsets with modular arithmetic.
        let mut expected = Vec::new();
        for off in 4..=20u32 {
            for ch in 0..3 {
                expected.push(((10235 + off) % 10240, ch));
            }
        }
        let got: Vec<_> = w
            .iter()
            .map(|e| (e.addr.absolute_subframe(), e.addr.subchannel()))
            .collect();
        assert_eq!(got, expected);
        assert_eq!(w.entries.last().unwrap().addr.absolute_subframe(), 15);
    }

    #[test]
    fn config_validation() {
        assert!(GridConfig::default().validate().is_ok());
        assert!(GridConfig { t2: 19, ..Default::default() }.validate().is_err());
        assert!(GridConfig { t2: 101, ..Default::default() }.validate().is_err());
        assert!(GridConfig { sc: 0, ..Default::default() }.validate().is_err());
        assert!(GridConfig { rsvp: 0, ..Default::default() }.validate().is_err());
    }

    fn history_with(now: u64, f: impl Fn(u64) -> Option<f64>) -> SensingHistory {
        let mut h = SensingHistory::new(1000, 3);
        for t in now - 1000..now {
            match f(t) {
                Some(dbm) => h.record_idle(t, dbm_to_mw(dbm)),
                None => h.record_transmit(t),
            }
        }
        h
    }

    #[test]
    fn a_rssi_constant_history() {
        let cfg = GridConfig::default();
        let now = 5000;
        let h = history_with(now, |_| Some(-90.0));
        let target = SsrAddress::at_time(now + 7, 1);
        let v = a_rssi(target, now, &h, &cfg).unwrap();
        assert!((v + 90.0).abs() < 1e-9);
    }

    #[test]
    fn a_rssi_linear_average() {
        let cfg = GridConfig::default();
        let now = 5000;
        // Alternate congruent samples between -90 and -80 dBm.
        let h = history_with(now, |t| Some(if (t / 20) % 2 == 0 { -90.0 } else { -80.0 }));
        let target = SsrAddress::at_time(now + 7, 0);
        let v = a_rssi(target, now, &h, &cfg).unwrap();
        let expected = mw_to_dbm((1e-9 + 1e-8) / 2.0);
        assert!((v - expected).abs() < 1e-9);
        assert!((v + 82.596).abs() < 1e-3);
    }

    #[test]
    fn a_rssi_without_samples() {
        let cfg = GridConfig::default();
        let h = SensingHistory::new(1000, 3);
        assert_eq!(a_rssi(SsrAddress::at_time(2000, 0), 1990, &h, &cfg), None);
        let blind = history_with(3000, |_| None);
        assert_eq!(a_rssi(SsrAddress::at_time(3010, 0), 3000, &blind, &cfg), None);
    }
}
