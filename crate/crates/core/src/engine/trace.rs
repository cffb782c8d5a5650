use serde::{Deserialize, Serialize};

use crate::phy::RadioState;
use crate::protocol::{Mode, NodeId, PacketKind};
use crate::timebase::VirtualClock;

use super::channel::Transmission;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioInterval {
    pub node: NodeId,
    pub state: RadioState,
    pub start: f64,
    pub end: f64,
}

impl RadioInterval {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    /// Part of the interval inside `[from, to]`.
    pub fn overlap(&self, from: f64, to: f64) -> f64 {
        (self.end.min(to) - self.start.max(from)).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEventKind {
    Tx,
    Rx,
    Collision,
    PacketError,
    Drop,
    Deliver,
    Gateway,
    BeaconRx,
    BeaconMiss,
    Desync,
    JoinStart,
    JoinTimeout,
    Joined,
    Admitted,
    JoinRejected,
    TxConflict,
    Error,
}

impl TraceEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceEventKind::Tx => "tx",
            TraceEventKind::Rx => "rx",
            TraceEventKind::Collision => "collision",
            TraceEventKind::PacketError => "packet_error",
            TraceEventKind::Drop => "drop",
            TraceEventKind::Deliver => "deliver",
            TraceEventKind::Gateway => "gateway",
            TraceEventKind::BeaconRx => "beacon_rx",
            TraceEventKind::BeaconMiss => "beacon_miss",
            TraceEventKind::Desync => "desync",
            TraceEventKind::JoinStart => "join_start",
            TraceEventKind::JoinTimeout => "join_timeout",
            TraceEventKind::Joined => "joined",
            TraceEventKind::Admitted => "admitted",
            TraceEventKind::JoinRejected => "join_rejected",
            TraceEventKind::TxConflict => "tx_conflict",
            TraceEventKind::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketEvent {
    pub time: f64,
    pub node: NodeId,
    pub kind: TraceEventKind,
    pub packet: Option<PacketKind>,
    pub peer: Option<NodeId>,
    pub origin: Option<NodeId>,
    pub seq: Option<u8>,
    pub detail: String,
}

impl PacketEvent {
    pub fn new(time: f64, node: NodeId, kind: TraceEventKind) -> Self {
        Self {
            time,
            node,
            kind,
            packet: None,
            peer: None,
            origin: None,
            seq: None,
            detail: String::new(),
        }
    }
}

/// Snapshot of a node's clock whenever it changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockSample {
    pub node: NodeId,
    pub time: f64,
    pub clock: VirtualClock,
    pub parent: Option<NodeId>,
    /// Taken right after re-anchoring on the parent's beacon.
    pub resync: bool,
    pub synchronized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub node: NodeId,
    pub frame: u64,
    pub time: f64,
    pub uplink: usize,
    pub downlink: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppRun {
    pub node: NodeId,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub node: NodeId,
    pub mode: Mode,
    pub parent: Option<NodeId>,
}

/// Everything a run produced, in global seconds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub nodes: Vec<NodeId>,
    pub relay: NodeId,
    pub end: f64,
    pub frame_seconds: f64,
    pub ticks_per_frame: u64,
    pub channels: u8,
    pub radio: Vec<RadioInterval>,
    pub events: Vec<PacketEvent>,
    pub transmissions: Vec<Transmission>,
    pub clocks: Vec<ClockSample>,
    pub queues: Vec<QueueSample>,
    pub app_runs: Vec<AppRun>,
    pub final_states: Vec<FinalState>,
}

impl SimulationTrace {
    pub fn radio_of(&self, node: NodeId) -> impl Iterator<Item = &RadioInterval> {
        self.radio.iter().filter(move |r| r.node == node)
    }

    pub fn events_of(&self, node: NodeId, kind: TraceEventKind) -> impl Iterator<Item = &PacketEvent> {
        self.events
            .iter()
            .filter(move |e| e.node == node && e.kind == kind)
    }

    pub fn final_state(&self, node: NodeId) -> Option<&FinalState> {
        self.final_states.iter().find(|s| s.node == node)
    }

    /// Time of the first `joined` event per node; the relay counts as joined at 0.
    pub fn join_time(&self, node: NodeId) -> Option<f64> {
        if node == self.relay {
            return Some(0.0);
        }
        self.events_of(node, TraceEventKind::Joined).next().map(|e| e.time)
    }

    /// Relay frame index containing global time `t`.
    pub fn relay_frame_at(&self, t: f64) -> u64 {
        self.clocks
            .iter()
            .rev()
            .find(|c| c.node == self.relay && c.time <= t)
            .map(|c| (c.clock.reading_at(t).max(0.0) as u64) / self.ticks_per_frame)
            .unwrap_or(0)
    }

    /// Global start of relay frame `frame`.
    pub fn relay_frame_start(&self, frame: u64) -> f64 {
        let tick = frame * self.ticks_per_frame;
        self.clocks
            .iter()
            .rev()
            .find(|c| c.node == self.relay && c.clock.tick_counter <= tick)
            .map(|c| c.clock.instant_of(tick as f64))
            .unwrap_or(frame as f64 * self.frame_seconds)
    }
}
