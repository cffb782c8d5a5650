//! Multi-hop TDMA MAC over LoRa.
//!
//! [`phy`] computes airtime, [`timebase`] models drifting node clocks,
//! [`protocol`] holds the MAC state machine, [`engine`] runs it in a
//! discrete-event simulator and [`planner`] sizes a deployment analytically.

pub mod engine;
pub mod phy;
pub mod planner;
pub mod protocol;
pub mod timebase;
