use serde::{Deserialize, Serialize};

use crate::phy::RadioState;
use crate::planner::PowerProfile;
use crate::protocol::{Mode, NodeId};

use super::trace::{ClockSample, SimulationTrace, TraceEventKind};

/// One synchronisation error sample, `epsilon = t_a - t_b` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncSample {
    pub frame: u64,
    pub time: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncRow {
    pub frame: u64,
    pub parent: NodeId,
    pub child: NodeId,
    pub epsilon: f64,
}

fn latest_clock(trace: &SimulationTrace, node: NodeId, at: f64) -> Option<&ClockSample> {
    trace
        .clocks
        .iter()
        .rev()
        .find(|c| c.node == node && c.time <= at)
}

fn epsilon_against(trace: &SimulationTrace, a: NodeId, b: &ClockSample) -> Option<f64> {
    let reference = latest_clock(trace, a, b.time).filter(|c| c.synchronized)?;
    let tick = b.clock.tick_counter as f64;
    Some(reference.clock.instant_of(tick) - b.clock.epoch_global)
}

/// Error between `a` and `b` at every resynchronisation of `b`: the instant
/// of `b`'s freshly latched reference tick on `a`'s clock minus the same
/// tick on `b`'s clock.
pub fn measure_sync_error(trace: &SimulationTrace, a: NodeId, b: NodeId) -> Vec<SyncSample> {
    trace
        .clocks
        .iter()
        .filter(|c| c.node == b && c.resync && c.synchronized)
        .filter_map(|c| {
            epsilon_against(trace, a, c).map(|epsilon| SyncSample {
                frame: c.clock.tick_counter / trace.ticks_per_frame,
                time: c.time,
                epsilon,
            })
        })
        .collect()
}

/// Every parent-child sample in time order.
pub fn sync_rows(trace: &SimulationTrace) -> Vec<SyncRow> {
    trace
        .clocks
        .iter()
        .filter(|c| c.resync && c.synchronized)
        .filter_map(|c| {
            let parent = c.parent?;
            epsilon_against(trace, parent, c).map(|epsilon| SyncRow {
                frame: c.clock.tick_counter / trace.ticks_per_frame,
                parent,
                child: c.node,
                epsilon,
            })
        })
        .collect()
}

pub fn max_abs(samples: impl IntoIterator<Item = f64>) -> Option<f64> {
    samples.into_iter().map(f64::abs).reduce(f64::max)
}

/// Transmit seconds of `node` within `[from, to]`, split into mesh and LoRaWAN airtime.
pub fn transmit_time(trace: &SimulationTrace, node: NodeId, from: f64, to: f64, channel: Option<u8>) -> (f64, f64) {
    let mut mesh = 0.0;
    let mut lorawan = 0.0;
    for t in trace.transmissions.iter().filter(|t| t.sender == node) {
        if channel.is_some_and(|c| c != t.channel) {
            continue;
        }
        let overlap = (t.end.min(to) - t.start.max(from)).max(0.0);
        if t.frame.is_lorawan() {
            lorawan += overlap;
        } else {
            mesh += overlap;
        }
    }
    (mesh, lorawan)
}

/// Share of `[from, to]` that `node` spends transmitting on `channel`
/// (every channel when `None`).
pub fn measure_duty_cycle(trace: &SimulationTrace, node: NodeId, from: f64, to: f64, channel: Option<u8>) -> f64 {
    if to <= from {
        return 0.0;
    }
    let (mesh, lorawan) = transmit_time(trace, node, from, to, channel);
    (mesh + lorawan) / (to - from)
}

/// Seconds per radio state within `[from, to]`, ordered sleep, receive, transmit.
pub fn state_time(trace: &SimulationTrace, node: NodeId, from: f64, to: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for r in trace.radio_of(node) {
        let i = match r.state {
            RadioState::Sleep => 0,
            RadioState::Receive => 1,
            RadioState::Transmit => 2,
        };
        out[i] += r.overlap(from, to);
    }
    out
}

/// Time-averaged power over `[from, to]`, application runs included.
pub fn measure_avg_power(trace: &SimulationTrace, node: NodeId, profile: &PowerProfile, from: f64, to: f64) -> f64 {
    if to <= from {
        return profile.p_sleep;
    }
    let [sleep, rx, tx] = state_time(trace, node, from, to);
    let runs = trace
        .app_runs
        .iter()
        .filter(|a| a.node == node && a.time >= from && a.time < to)
        .count() as f64;
    let energy = sleep * profile.p_sleep
        + rx * profile.p_rx
        + tx * profile.p_tx
        + runs * (profile.p_app - profile.p_sleep) * profile.tau_app;
    energy / (to - from)
}

/// Latest first-join instant over all nodes, or `None` if someone never joined.
pub fn all_joined_at(trace: &SimulationTrace) -> Option<f64> {
    trace
        .nodes
        .iter()
        .map(|n| trace.join_time(*n))
        .try_fold(0.0, |acc: f64, t| t.map(|t| acc.max(t)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node: NodeId,
    pub mode: Mode,
    pub parent: Option<NodeId>,
    /// Highest per-channel duty cycle over the run.
    pub duty_cycle: f64,
    pub mesh_tx_s: f64,
    pub lorawan_tx_s: f64,
    pub rx_s: f64,
    pub avg_power_w: f64,
    pub drops: usize,
    pub beacon_misses: usize,
    pub desyncs: usize,
    /// Largest `|epsilon|` against the parent, seconds.
    pub max_sync_error: Option<f64>,
}

pub fn summarize(trace: &SimulationTrace, profile: &PowerProfile) -> Vec<NodeSummary> {
    let rows = sync_rows(trace);
    trace
        .nodes
        .iter()
        .map(|&node| {
            let fin = trace.final_state(node);
            let duty_cycle = (0..trace.channels)
                .map(|c| measure_duty_cycle(trace, node, 0.0, trace.end, Some(c)))
                .fold(0.0, f64::max);
            let (mesh, lorawan) = transmit_time(trace, node, 0.0, trace.end, None);
            let count = |k| trace.events_of(node, k).count();
            NodeSummary {
                node,
                mode: fin.map_or(Mode::Unjoined, |f| f.mode),
                parent: fin.and_then(|f| f.parent),
                duty_cycle,
                mesh_tx_s: mesh,
                lorawan_tx_s: lorawan,
                rx_s: state_time(trace, node, 0.0, trace.end)[1],
                avg_power_w: measure_avg_power(trace, node, profile, 0.0, trace.end),
                drops: count(TraceEventKind::Drop),
                beacon_misses: count(TraceEventKind::BeaconMiss),
                desyncs: count(TraceEventKind::Desync),
                max_sync_error: max_abs(rows.iter().filter(|r| r.child == node).map(|r| r.epsilon)),
            }
        })
        .collect()
}
