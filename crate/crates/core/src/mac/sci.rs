//! Sidelink control information, 32 bits, most significant bit first:
//!
//! | field                       | bits            |
//! |-----------------------------|-----------------|
//! | resource reservation        | 4               |
//! | frequency resource location | ceil(log2(SC(SC+1)/2)) |
//! | MCS                         | 5               |
//! | transmission format         | 1               |
//! | reserved                    | 14 - frl        |
//! | RC (proposed) / priority + retransmission (standard) | 8 |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SciFormat {
    Standard,
    Proposed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SciMessage {
    pub resource_reservation: u8,
    pub frequency_resource_location: u16,
    pub mcs: u8,
    pub transmission_format: u8,
    pub reserved: u16,
    /// RC in the proposed format, priority and retransmission bits in the standard one.
    pub tail: u16,
}

/// Width of the frequency-resource-location field for `sc` subchannels.
pub fn frl_bits(sc: u32) -> Result<u32> {
    if sc == 0 {
        return Err(Error::SciSubchannels(sc));
    }
    let combos = u64::from(sc) * (u64::from(sc) + 1) / 2;
    let bits = 64 - (combos - 1).leading_zeros();
    if bits > 14 {
        return Err(Error::SciSubchannels(sc));
    }
    Ok(bits)
}

fn widths(sc: u32) -> Result<[(&'static str, u32); 6]> {
    let frl = frl_bits(sc)?;
    Ok([
        ("resource_reservation", 4),
        ("frequency_resource_location", frl),
        ("mcs", 5),
        ("transmission_format", 1),
        ("reserved", 14 - frl),
        ("tail", 8),
    ])
}

/// Total SCI width in bits for `sc` subchannels.
pub fn sci_width(sc: u32) -> Result<u32> {
    Ok(widths(sc)?.iter().map(|(_, w)| w).sum())
}

pub fn encode_sci(msg: &SciMessage, sc: u32, format: SciFormat) -> Result<u32> {
    let tail_name = match format {
        SciFormat::Proposed => "rc",
        SciFormat::Standard => "priority_retx",
    };
    let values = [
        u64::from(msg.resource_reservation),
        u64::from(msg.frequency_resource_location),
        u64::from(msg.mcs),
        u64::from(msg.transmission_format),
        u64::from(msg.reserved),
        u64::from(msg.tail),
    ];
    let mut word = 0u32;
    for ((name, bits), value) in widths(sc)?.into_iter().zip(values) {
        if value >> bits != 0 {
            let field = if name == "tail" { tail_name } else { name };
            return Err(Error::SciOverflow { field, value, bits });
        }
        word = if bits == 0 { word } else { (word << bits) | value as u32 };
    }
    Ok(word)
}

pub fn decode_sci(word: u32, sc: u32, _format: SciFormat) -> Result<SciMessage> {
    let mut fields = [0u32; 6];
    let mut shift = 32;
    for (slot, (_, bits)) in fields.iter_mut().zip(widths(sc)?) {
        shift -= bits;
        *slot = if bits == 0 { 0 } else { (word >> shift) & ((1u32 << bits) - 1) };
    }
    Ok(SciMessage {
        resource_reservation: fields[0] as u8,
        frequency_resource_location: fields[1] as u16,
        mcs: fields[2] as u8,
        transmission_format: fields[3] as u8,
        reserved: fields[4] as u16,
        tail: fields[5] as u16,
    })
}

/// Reservation-period code: 100·k ms → k, 50 ms → 0b1011, 20 ms → 0b1100.
pub fn encode_reservation(rsvp_ms: u32) -> Result<u8> {
    match rsvp_ms {
        20 => Ok(0b1100),
        50 => Ok(0b1011),
        p if p % 100 == 0 && (1..=10).contains(&(p / 100)) => Ok((p / 100) as u8),
        p => Err(Error::Config(format!("reservation period {p} ms has no SCI code"))),
    }
}

pub fn decode_reservation(code: u8) -> Option<u32> {
    match code {
        0b1100 => Some(20),
        0b1011 => Some(50),
        k @ 1..=10 => Some(u32::from(k) * 100),
        _ => None,
    }
}

/// Reselection counter a receiver assumes when the SCI does not carry one.
pub fn estimated_rc(rsvp_ms: u32) -> u32 {
    100u32.div_ceil(rsvp_ms.max(1))
}
