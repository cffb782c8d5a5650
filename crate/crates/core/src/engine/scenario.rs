use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::{PhyError, RadioParams};
use crate::planner::{PlanError, PowerProfile};
use crate::protocol::packet::MAX_APP_PAYLOAD;
use crate::protocol::{build_schedule, MacConfig, NodeId, ScheduleError, SlotTiming};
use crate::timebase::{GuardConfig, DEFAULT_TICK_RATE_HZ, MAX_DRIFT_PPM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("relay {0} is not listed among the nodes")]
    MissingRelay(NodeId),
    #[error("node id {0} is reserved for broadcast")]
    ReservedId(NodeId),
    #[error("node {0} is listed twice")]
    DuplicateNode(NodeId),
    #[error("link {a}-{b} references an unknown node")]
    UnknownLinkEnd { a: NodeId, b: NodeId },
    #[error("link {a}-{b}: packet error rate {per} is outside [0, 1]")]
    BadPer { a: NodeId, b: NodeId, per: f64 },
    #[error("nodes {0:?} cannot reach the relay over bidirectional links")]
    Disconnected(Vec<u8>),
    #[error("node {node}: drift {ppm} ppm exceeds {MAX_DRIFT_PPM} ppm")]
    Drift { node: NodeId, ppm: f64 },
    #[error("{0} nodes do not fit the schedule's max_nodes = {1}")]
    TooManyNodes(usize, u16),
    #[error("{field} must be at least 1")]
    Zero { field: &'static str },
    #[error("app_payload_bytes = {0} exceeds {MAX_APP_PAYLOAD}")]
    Payload(usize),
    #[error("timing.{field} = {value} is invalid")]
    Timing { field: &'static str, value: f64 },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Power(#[from] PlanError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleParams {
    /// `M`: beacon/uplink/downlink triples in a frame, relay included.
    pub max_nodes: u16,
    /// `N`.
    pub slots_per_frame: u16,
    pub ticks_per_slot: u32,
    pub tick_rate_hz: u32,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            max_nodes: 29,
            slots_per_frame: 90,
            ticks_per_slot: 21_281,
            tick_rate_hz: DEFAULT_TICK_RATE_HZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingParams {
    pub t_offset: f64,
    /// Guard window for beacons and data exchanges, seconds.
    pub t_guard: f64,
    pub widen_factor: f64,
    pub max_misses: u32,
    pub join_backoffs: Vec<f64>,
    pub join_timeout_frames: u64,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            t_offset: 0.030,
            t_guard: 0.010,
            widen_factor: 2.0,
            max_misses: 4,
            join_backoffs: vec![0.0, 0.13, 0.26, 0.39],
            join_timeout_frames: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    #[serde(default)]
    pub drift_ppm: f64,
}

fn default_rssi() -> f64 {
    -80.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    #[serde(default)]
    pub per: f64,
    #[serde(default = "default_rssi")]
    pub rssi_dbm: f64,
    /// Also add the reverse link `b -> a` with the same figures.
    #[serde(default = "default_true")]
    pub bidirectional: bool,
}

impl LinkSpec {
    pub fn new(a: u8, b: u8) -> Self {
        Self {
            a: NodeId(a),
            b: NodeId(b),
            per: 0.0,
            rssi_dbm: default_rssi(),
            bidirectional: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub per: f64,
    pub rssi_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub network_id: u8,
    pub relay: NodeId,
    pub seed: u64,
    pub frames: u64,
    /// `k`: frames per application period.
    pub k: u32,
    /// `c`: channels rotated frame by frame.
    pub channels: u8,
    pub app_payload_bytes: usize,
    pub queue_capacity: usize,
    /// Frames during which synchronised nodes accept joiners; unlimited when absent.
    pub admission_frames: Option<u64>,
    /// Relay sends one downlink packet to every known node every this many
    /// frames; 0 disables downlink traffic.
    pub downlink_period_frames: u64,
    pub uplink_enabled: bool,
    /// Half-width of a uniform per-frame perturbation of each oscillator.
    pub drift_jitter_ppm: f64,
    pub schedule: ScheduleParams,
    pub radio: RadioParams,
    pub timing: TimingParams,
    pub power: PowerProfile,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::star(&[0.0, 20.0, -20.0, 10.0])
    }
}

impl Scenario {
    fn bare(drifts: &[f64]) -> Self {
        Self {
            network_id: 1,
            relay: NodeId(0),
            seed: 1,
            frames: 100,
            k: 4,
            channels: 1,
            app_payload_bytes: 24,
            queue_capacity: 64,
            admission_frames: None,
            downlink_period_frames: 0,
            uplink_enabled: true,
            drift_jitter_ppm: 0.0,
            schedule: ScheduleParams::default(),
            radio: RadioParams::default(),
            timing: TimingParams::default(),
            power: PowerProfile::default(),
            nodes: drifts
                .iter()
                .enumerate()
                .map(|(i, d)| NodeSpec {
                    id: NodeId(i as u8),
                    drift_ppm: *d,
                })
                .collect(),
            links: Vec::new(),
        }
    }

    /// Relay 0 plus one child per remaining drift, every child linked to the relay.
    pub fn star(drifts: &[f64]) -> Self {
        let mut s = Self::bare(drifts);
        s.links = (1..drifts.len()).map(|i| LinkSpec::new(0, i as u8)).collect();
        s
    }

    /// Chain `0 - 1 - 2 - ...` rooted at the relay.
    pub fn line(drifts: &[f64]) -> Self {
        let mut s = Self::bare(drifts);
        s.links = (1..drifts.len())
            .map(|i| LinkSpec::new(i as u8 - 1, i as u8))
            .collect();
        s
    }

    pub fn ticks_per_frame(&self) -> u64 {
        u64::from(self.schedule.slots_per_frame) * u64::from(self.schedule.ticks_per_slot)
    }

    pub fn slot_seconds(&self) -> f64 {
        f64::from(self.schedule.ticks_per_slot) / f64::from(self.schedule.tick_rate_hz)
    }

    pub fn frame_seconds(&self) -> f64 {
        self.slot_seconds() * f64::from(self.schedule.slots_per_frame)
    }

    /// Directed link table.
    pub fn link_table(&self) -> BTreeMap<(NodeId, NodeId), Link> {
        let mut out = BTreeMap::new();
        for l in &self.links {
            let link = Link {
                per: l.per,
                rssi_dbm: l.rssi_dbm,
            };
            out.insert((l.a, l.b), link);
            if l.bidirectional {
                out.insert((l.b, l.a), link);
            }
        }
        out
    }

    pub fn mac_config(&self) -> Result<MacConfig, ScenarioError> {
        let schedule = build_schedule(
            self.schedule.max_nodes,
            self.schedule.slots_per_frame,
            self.schedule.ticks_per_slot,
        )?;
        let timing = SlotTiming::derive(&self.radio, self.timing.t_offset, self.timing.t_guard)?;
        timing.validate(self.slot_seconds())?;
        Ok(MacConfig {
            network_id: self.network_id,
            schedule,
            timing,
            guard: GuardConfig {
                base_guard: self.timing.t_guard,
                widen_factor: self.timing.widen_factor,
                max_misses: self.timing.max_misses,
            },
            radio: self.radio,
            tick_rate_hz: self.schedule.tick_rate_hz,
            queue_capacity: self.queue_capacity,
            join_backoffs: self.timing.join_backoffs.clone(),
            join_timeout_frames: self.timing.join_timeout_frames,
        })
    }

    /// Checks every invariant the simulator relies on and returns the MAC
    /// configuration derived from the scenario.
    pub fn validate(&self) -> Result<MacConfig, ScenarioError> {
        self.radio.validate()?;
        self.power.validate()?;
        for (field, v) in [("k", u64::from(self.k)), ("channels", u64::from(self.channels)), ("queue_capacity", self.queue_capacity as u64)] {
            if v == 0 {
                return Err(ScenarioError::Zero { field });
            }
        }
        if self.schedule.tick_rate_hz == 0 {
            return Err(ScenarioError::Zero { field: "tick_rate_hz" });
        }
        if self.app_payload_bytes > MAX_APP_PAYLOAD {
            return Err(ScenarioError::Payload(self.app_payload_bytes));
        }
        let t = &self.timing;
        let checks = [
            ("widen_factor", t.widen_factor, t.widen_factor >= 1.0),
            ("max_misses", f64::from(t.max_misses), t.max_misses >= 1),
            ("join_timeout_frames", t.join_timeout_frames as f64, t.join_timeout_frames >= 1),
            ("drift_jitter_ppm", self.drift_jitter_ppm, self.drift_jitter_ppm >= 0.0),
        ];
        for (field, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(ScenarioError::Timing { field, value });
            }
        }
        if let Some(b) = t.join_backoffs.iter().find(|b| !(**b >= 0.0)) {
            return Err(ScenarioError::Timing {
                field: "join_backoffs",
                value: *b,
            });
        }
        let cfg = self.mac_config()?;

        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if n.id == NodeId::BROADCAST {
                return Err(ScenarioError::ReservedId(n.id));
            }
            if !ids.insert(n.id) {
                return Err(ScenarioError::DuplicateNode(n.id));
            }
            if !n.drift_ppm.is_finite() || n.drift_ppm.abs() + self.drift_jitter_ppm > MAX_DRIFT_PPM {
                return Err(ScenarioError::Drift {
                    node: n.id,
                    ppm: n.drift_ppm,
                });
            }
        }
        if !ids.contains(&self.relay) {
            return Err(ScenarioError::MissingRelay(self.relay));
        }
        if self.nodes.len() > usize::from(self.schedule.max_nodes) {
            return Err(ScenarioError::TooManyNodes(self.nodes.len(), self.schedule.max_nodes));
        }
        for l in &self.links {
            if !ids.contains(&l.a) || !ids.contains(&l.b) {
                return Err(ScenarioError::UnknownLinkEnd { a: l.a, b: l.b });
            }
            if !(0.0..=1.0).contains(&l.per) {
                return Err(ScenarioError::BadPer {
                    a: l.a,
                    b: l.b,
                    per: l.per,
                });
            }
        }
        let unreachable = self.unreachable_nodes();
        if !unreachable.is_empty() {
            return Err(ScenarioError::Disconnected(unreachable.iter().map(|n| n.0).collect()));
        }
        Ok(cfg)
    }

    /// Nodes without a path of two-way links to the relay.
    pub fn unreachable_nodes(&self) -> Vec<NodeId> {
        let table = self.link_table();
        let mut seen = BTreeSet::from([self.relay]);
        let mut frontier = VecDeque::from([self.relay]);
        while let Some(u) = frontier.pop_front() {
            for n in &self.nodes {
                let v = n.id;
                if !seen.contains(&v) && table.contains_key(&(u, v)) && table.contains_key(&(v, u)) {
                    seen.insert(v);
                    frontier.push_back(v);
                }
            }
        }
        self.nodes.iter().map(|n| n.id).filter(|id| !seen.contains(id)).collect()
    }
}
