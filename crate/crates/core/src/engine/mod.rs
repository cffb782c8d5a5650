//! Discrete-event simulator driving the MAC state machines over a shared
//! channel, plus the measurements taken on its traces.

pub mod channel;
pub mod export;
pub mod metrics;
mod scenario;
mod sim;
pub mod trace;

pub use channel::{deliver, Delivery, Transmission};
pub use metrics::{
    all_joined_at, measure_avg_power, measure_duty_cycle, measure_sync_error, summarize,
    sync_rows, NodeSummary, SyncRow, SyncSample,
};
pub use scenario::{
    Link, LinkSpec, NodeSpec, Scenario, ScenarioError, ScheduleParams, TimingParams,
};
pub use sim::run;
pub use trace::{SimulationTrace, TraceEventKind};
