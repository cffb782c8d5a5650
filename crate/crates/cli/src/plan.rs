use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use lorahop::engine::{Scenario, ScheduleParams};
use lorahop::phy::{lorawan_time_on_air, time_on_air, RadioParams};
use lorahop::planner::{plan_network, Airtimes, NetworkPlan, PlanRequest, PowerProfile};
use lorahop::protocol::packet::{ACK_BYTES, BEACON_BYTES, HEADER_BYTES};

use crate::error::CliError;
use crate::scenario_file;

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Takes nodes, k, channels, payload, radio, power and drift from a scenario file.
    #[arg(long, conflicts_with_all = ["nodes", "payload", "sf", "channels", "drift_ppm"])]
    pub scenario: Option<PathBuf>,
    /// Overrides applied to --scenario.
    #[arg(long = "set", value_name = "KEY=VALUE", requires = "scenario")]
    pub overrides: Vec<String>,
    /// Number of nodes, relay included.
    #[arg(long, required_unless_present = "scenario")]
    pub nodes: Option<u32>,
    /// Target application period in seconds.
    #[arg(long, required_unless_present_any = ["k", "scenario"])]
    pub t_app: Option<f64>,
    /// Forces the frames per application period; N stays at --max-n.
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long, default_value_t = 90)]
    pub max_n: u32,
    /// Duty-cycle ceiling in percent.
    #[arg(long, default_value_t = 1.0)]
    pub duty_limit: f64,
    #[arg(long)]
    pub channels: Option<u32>,
    /// Application payload in bytes.
    #[arg(long)]
    pub payload: Option<usize>,
    #[arg(long)]
    pub sf: Option<u8>,
    /// Worst-case relative drift between neighbours, ppm.
    #[arg(long)]
    pub drift_ppm: Option<f64>,
    /// Descendants of the relay; defaults to every other node.
    #[arg(long)]
    pub m0: Option<u32>,
    /// Also writes the plan as CSV.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
}

struct Inputs {
    nodes: u32,
    k: Option<u32>,
    max_n: u32,
    slot_seconds: f64,
    channels: u32,
    payload: usize,
    radio: RadioParams,
    drift_ppm: f64,
    profile: PowerProfile,
}

fn inputs(args: &PlanArgs) -> Result<Inputs, CliError> {
    let defaults = ScheduleParams::default();
    let default_slot = f64::from(defaults.ticks_per_slot) / f64::from(defaults.tick_rate_hz);
    let Some(path) = &args.scenario else {
        return Ok(Inputs {
            nodes: args.nodes.expect("clap requires --nodes"),
            k: args.k,
            max_n: args.max_n,
            slot_seconds: default_slot,
            channels: args.channels.unwrap_or(1),
            payload: args.payload.unwrap_or(24),
            radio: RadioParams::with_sf(args.sf.unwrap_or(9)),
            drift_ppm: args.drift_ppm.unwrap_or(10.0),
            profile: PowerProfile::default(),
        });
    };
    let sc: Scenario = scenario_file::load(path, &args.overrides)?;
    let drifts = sc.nodes.iter().map(|n| n.drift_ppm);
    let spread = drifts.clone().fold(f64::MIN, f64::max) - drifts.fold(f64::MAX, f64::min);
    Ok(Inputs {
        nodes: sc.nodes.len() as u32,
        k: args.k.or(args.t_app.is_none().then_some(sc.k)),
        max_n: u32::from(sc.schedule.slots_per_frame),
        slot_seconds: sc.slot_seconds(),
        channels: u32::from(sc.channels),
        payload: sc.app_payload_bytes,
        radio: sc.radio,
        drift_ppm: spread.max(0.0),
        profile: sc.power,
    })
}

pub fn build_request(args: &PlanArgs) -> Result<PlanRequest, CliError> {
    let inp = inputs(args)?;
    if inp.nodes == 0 || inp.channels == 0 {
        return Err(CliError::Usage("nodes and channels must be at least 1".into()));
    }
    if !(args.duty_limit > 0.0 && args.duty_limit <= 100.0) {
        return Err(CliError::Usage(format!("--duty-limit {} is not a percentage in (0, 100]", args.duty_limit)));
    }
    let secs = |bytes: usize| time_on_air(bytes, &inp.radio).map(|a| a.as_secs());
    Ok(PlanRequest {
        nodes: inp.nodes,
        t_app_target: args.t_app.unwrap_or(0.0),
        forced_k: inp.k,
        max_n: inp.max_n,
        slot_seconds: inp.slot_seconds,
        channels: inp.channels,
        duty_limit: args.duty_limit / 100.0,
        relay_m0: args.m0,
        relative_drift_ppm: inp.drift_ppm,
        profile: inp.profile,
        airtimes: Airtimes {
            t_ack: secs(ACK_BYTES)?,
            t_data: secs(HEADER_BYTES + inp.payload)?,
            t_bcn: secs(BEACON_BYTES)?,
        },
        relay_t_data: lorawan_time_on_air(inp.payload, &inp.radio)?.as_secs(),
    })
}

pub fn render(plan: &NetworkPlan) -> String {
    let mut out = String::new();
    let rows: [(&str, String); 9] = [
        ("nodes", plan.nodes.to_string()),
        ("k", plan.k.to_string()),
        ("slots per frame", plan.n_slots.to_string()),
        ("slot", format!("{:.6} s", plan.slot_seconds)),
        ("frame", format!("{:.4} s", plan.frame_seconds)),
        ("T_app", format!("{:.4} s", plan.t_app)),
        ("channels", plan.channels.to_string()),
        ("mean power", format!("{:.4} mW", plan.mean_power * 1e3)),
        ("capacity (k >= n)", if plan.capacity_ok { "ok" } else { "violated" }.to_string()),
    ];
    for (name, value) in rows {
        let _ = writeln!(out, "{name:<18} {value}");
    }
    let _ = writeln!(out, "\n{:<10} {:>6} {:>10}", "node", "m_i", "duty %");
    let _ = writeln!(out, "{:<10} {:>6} {:>10.4}", "relay", plan.relay_m0, plan.relay_duty * 100.0);
    for (m, duty) in &plan.duty_by_m {
        let _ = writeln!(out, "{:<10} {:>6} {:>10.4}", "non-relay", m, duty * 100.0);
    }
    let _ = write!(out, "{:<10} {:>6} {:>10.4}", "limit", "", plan.duty_limit * 100.0);
    out
}

fn write_csv(plan: &NetworkPlan, path: &PathBuf) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::io(path, e);
    let mut w = csv::Writer::from_writer(fs::File::create(path).map_err(io)?);
    let mut rows = vec![
        ["role", "m_i", "duty_pct", "k", "n_slots", "t_app_s", "mean_power_mw", "capacity_ok"].map(String::from)
    ];
    let shared = |m: u32, duty: f64, role: &str| {
        [
            role.to_string(),
            m.to_string(),
            format!("{:.6}", duty * 100.0),
            plan.k.to_string(),
            plan.n_slots.to_string(),
            format!("{:.6}", plan.t_app),
            format!("{:.6}", plan.mean_power * 1e3),
            plan.capacity_ok.to_string(),
        ]
    };
    rows.push(shared(plan.relay_m0, plan.relay_duty, "relay"));
    rows.extend(plan.duty_by_m.iter().map(|(m, d)| shared(*m, *d, "node")));
    for row in rows {
        w.write_record(&row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

/// Returns the report and, when infeasible, the binding constraint.
pub fn run(args: &PlanArgs) -> Result<(String, Option<CliError>), CliError> {
    let plan = plan_network(&build_request(args)?)?;
    if let Some(path) = &args.csv {
        write_csv(&plan, path)?;
    }
    Ok((render(&plan), plan.check().err().map(CliError::from)))
}
