//! Sidelink-coupled simulation of highway on-ramp merging.

pub mod control;
pub mod error;
pub mod grid;
pub mod harness;
pub mod mac;
pub mod phy;
pub mod rl;
pub mod road;
pub mod world;

pub use error::{Error, Result};
