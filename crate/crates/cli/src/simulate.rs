use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use lorahop::engine::metrics::max_abs;
use lorahop::engine::{export, measure_sync_error, run as simulate, summarize, sync_rows, Scenario, SimulationTrace};

use crate::error::CliError;
use crate::scenario_file;

pub const SUMMARY_TXT: &str = "summary.txt";

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    /// Output directory for the CSV artifacts and the summary.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub frames: Option<u64>,
    /// Dotted-key override such as `timing.t_guard=0.002` or `links.0.per=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

pub fn load(args: &SimulateArgs) -> Result<Scenario, CliError> {
    let mut sc = scenario_file::load(&args.scenario, &args.overrides)?;
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    if let Some(frames) = args.frames {
        sc.frames = frames;
    }
    Ok(sc)
}

fn us(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |e| format!("{:.3}", e * 1e6))
}

pub fn report(sc: &Scenario, trace: &SimulationTrace) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} nodes, {} frames of {:.4} s, seed {}",
        sc.nodes.len(),
        sc.frames,
        sc.frame_seconds(),
        sc.seed
    );
    let _ = writeln!(
        out,
        "\n{:>4} {:<15} {:>6} {:>9} {:>10} {:>6} {:>7}",
        "node", "mode", "parent", "duty %", "power mW", "drops", "desync"
    );
    for s in summarize(trace, &sc.power) {
        let parent = s.parent.map_or_else(|| "-".to_string(), |p| p.to_string());
        let _ = writeln!(
            out,
            "{:>4} {:<15} {:>6} {:>9.4} {:>10.4} {:>6} {:>7}",
            s.node,
            s.mode.as_str(),
            parent,
            s.duty_cycle * 100.0,
            s.avg_power_w * 1e3,
            s.drops,
            s.desyncs
        );
    }

    let mut pairs: BTreeMap<_, Vec<f64>> = BTreeMap::new();
    for r in sync_rows(trace) {
        pairs.entry((r.parent, r.child)).or_default().push(r.epsilon);
    }
    let _ = writeln!(out, "\n{:>6} {:>5} {:>8} {:>14}", "parent", "child", "samples", "max |eps| us");
    for ((parent, child), eps) in &pairs {
        let _ = writeln!(out, "{:>6} {:>5} {:>8} {:>14}", parent, child, eps.len(), us(max_abs(eps.iter().copied())));
    }

    let _ = writeln!(out, "\n{:>5} {:>5} {:>14}", "relay", "node", "max |eps| us");
    for node in trace.nodes.iter().filter(|n| **n != trace.relay) {
        let eps = measure_sync_error(trace, trace.relay, *node).into_iter().map(|s| s.epsilon);
        let _ = writeln!(out, "{:>5} {:>5} {:>14}", trace.relay, node, us(max_abs(eps)));
    }
    out
}

pub fn run(args: &SimulateArgs) -> Result<String, CliError> {
    let sc = load(args)?;
    let trace = simulate(&sc)?;
    let text = report(&sc, &trace);
    export::write_all(&trace, &sc.power, &args.out).map_err(|e| CliError::io(&args.out, e))?;
    let summary = args.out.join(SUMMARY_TXT);
    fs::write(&summary, &text).map_err(|e| CliError::io(summary, e))?;
    Ok(text)
}
