//! CSV artifacts of a run. Floats use fixed precision so output is stable.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::planner::PowerProfile;

use super::metrics::{summarize, sync_rows};
use super::trace::SimulationTrace;

pub const RADIO_STATES_CSV: &str = "radio_states.csv";
pub const PACKETS_CSV: &str = "packets.csv";
pub const SYNC_CSV: &str = "sync.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_radio_states<W: Write>(trace: &SimulationTrace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "state", "start_s", "end_s"])?;
    for r in &trace.radio {
        w.write_record([
            r.node.to_string(),
            r.state.as_str().to_string(),
            format!("{:.9}", r.start),
            format!("{:.9}", r.end),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_packets<W: Write>(trace: &SimulationTrace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_s", "node", "event", "packet", "peer", "origin", "seq", "detail"])?;
    for e in &trace.events {
        w.write_record([
            format!("{:.9}", e.time),
            e.node.to_string(),
            e.kind.as_str().to_string(),
            opt(e.packet.map(|p| p.as_str())),
            opt(e.peer),
            opt(e.origin),
            opt(e.seq),
            e.detail.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sync<W: Write>(trace: &SimulationTrace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frame", "parent", "child", "epsilon_us"])?;
    for r in sync_rows(trace) {
        w.write_record([
            r.frame.to_string(),
            r.parent.to_string(),
            r.child.to_string(),
            format!("{:.3}", r.epsilon * 1e6),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(trace: &SimulationTrace, profile: &PowerProfile, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "node",
        "mode",
        "parent",
        "duty_cycle_pct",
        "mesh_tx_s",
        "lorawan_tx_s",
        "rx_s",
        "avg_power_mw",
        "drops",
        "beacon_misses",
        "desyncs",
        "max_sync_error_us",
    ])?;
    for s in summarize(trace, profile) {
        w.write_record([
            s.node.to_string(),
            s.mode.as_str().to_string(),
            opt(s.parent),
            format!("{:.5}", s.duty_cycle * 100.0),
            format!("{:.6}", s.mesh_tx_s),
            format!("{:.6}", s.lorawan_tx_s),
            format!("{:.6}", s.rx_s),
            format!("{:.6}", s.avg_power_w * 1e3),
            s.drops.to_string(),
            s.beacon_misses.to_string(),
            s.desyncs.to_string(),
            opt(s.max_sync_error.map(|e| format!("{:.3}", e * 1e6))),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the four CSV files into `dir`, creating it if needed.
pub fn write_all(trace: &SimulationTrace, profile: &PowerProfile, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let open = |name: &str| fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
    write_radio_states(trace, open(RADIO_STATES_CSV)?)?;
    write_packets(trace, open(PACKETS_CSV)?)?;
    write_sync(trace, open(SYNC_CSV)?)?;
    write_summary(trace, profile, open(SUMMARY_CSV)?)?;
    Ok(())
}
