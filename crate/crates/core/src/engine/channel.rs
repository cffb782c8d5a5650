//! Shared-medium model: one frame on air per sender, no capture, per-link
//! Bernoulli packet errors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::{NodeId, OnAir};

use super::scenario::Link;

/// A frame on air, in global seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub sender: NodeId,
    pub frame: OnAir,
    pub channel: u8,
    pub start: f64,
    pub end: f64,
    /// Sender's tick at which the first symbol left the antenna.
    pub sender_tick: u64,
}

impl Transmission {
    pub fn airtime(&self) -> f64 {
        self.end - self.start
    }

    pub fn overlaps(&self, other: &Transmission) -> bool {
        self.channel == other.channel && self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Delivery {
    Received,
    Collision,
    PacketError,
    /// The listener was not receiving for the whole frame.
    OutsideWindow,
}

impl Delivery {
    pub fn as_str(self) -> &'static str {
        match self {
            Delivery::Received => "received",
            Delivery::Collision => "collision",
            Delivery::PacketError => "packet_error",
            Delivery::OutsideWindow => "outside_window",
        }
    }
}

/// Fate of `tx` at one listener.
///
/// `covered` says whether the listener was receiving from the first to the
/// last symbol. `interferers` are the other transmissions the listener can
/// hear; any overlap on the same channel destroys both frames. The RNG is only
/// drawn for lossy links, so PER-free runs consume no randomness here.
pub fn deliver<'a, R: Rng>(
    tx: &Transmission,
    link: &Link,
    covered: bool,
    interferers: impl IntoIterator<Item = &'a Transmission>,
    rng: &mut R,
) -> Delivery {
    if !covered {
        return Delivery::OutsideWindow;
    }
    if interferers.into_iter().any(|u| !std::ptr::eq(u, tx) && u.overlaps(tx)) {
        return Delivery::Collision;
    }
    if link.per > 0.0 && rng.gen::<f64>() < link.per {
        return Delivery::PacketError;
    }
    Delivery::Received
}
