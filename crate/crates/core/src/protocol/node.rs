use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::packet::{
    decode_join_accept, encode_join_accept, MacPacket, PacketKind, SlotTriple, SEQ_MODULUS,
};
use super::schedule::{FrameSchedule, SlotKind, SlotTiming};
use super::NodeId;
use crate::phy::{lorawan_time_on_air, time_on_air, Airtime, PhyError, RadioParams};
use crate::timebase::{BeaconCase, GuardConfig, VirtualClock};

/// Network-wide MAC parameters shared by every node.
#[derive(Debug, Clone, PartialEq)]
pub struct MacConfig {
    pub network_id: u8,
    pub schedule: FrameSchedule,
    pub timing: SlotTiming,
    pub guard: GuardConfig,
    pub radio: RadioParams,
    pub tick_rate_hz: u32,
    pub queue_capacity: usize,
    /// Candidate JoinRequest start offsets inside the join slot, in seconds
    /// after `t_offset + t_guard/2`.
    pub join_backoffs: Vec<f64>,
    /// Frames a joining node waits for its JoinAccept before starting over.
    pub join_timeout_frames: u64,
}

impl MacConfig {
    pub fn slot_seconds(&self) -> f64 {
        self.schedule.slot_seconds(self.tick_rate_hz)
    }

    /// Widest beacon window that still fits between the slot start and the
    /// nominal beacon start.
    pub fn guard_cap(&self) -> f64 {
        2.0 * self.timing.t_offset
    }

    pub fn join_listen_close(&self) -> f64 {
        let last = self.join_backoffs.iter().copied().fold(0.0, f64::max);
        self.timing.t_offset + self.timing.t_guard + last
    }

    pub fn frame_of_tick(&self, tick: u64) -> u64 {
        tick / self.schedule.ticks_per_frame()
    }

    pub fn slot_of_tick(&self, tick: u64) -> u16 {
        ((tick % self.schedule.ticks_per_frame()) / u64::from(self.schedule.ticks_per_slot)) as u16
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Unjoined,
    Joining,
    Synchronized,
    Desynchronized,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unjoined => "unjoined",
            Mode::Joining => "joining",
            Mode::Synchronized => "synchronized",
            Mode::Desynchronized => "desynchronized",
        }
    }
}

/// What a slot means to one particular node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotRole {
    BeaconTx(NodeId),
    BeaconRx(NodeId),
    LoRaWanUplink,
    UplinkExchange(NodeId),
    DownlinkExchange(NodeId),
    JoinContention,
    Idle,
}

/// A frame handed to the radio.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OnAir {
    Mac(MacPacket),
    /// Uplink to the LoRaWAN gateway carrying a collected packet's payload.
    LoRaWan(MacPacket),
}

impl OnAir {
    pub fn packet(&self) -> &MacPacket {
        match self {
            OnAir::Mac(p) | OnAir::LoRaWan(p) => p,
        }
    }

    pub fn is_lorawan(&self) -> bool {
        matches!(self, OnAir::LoRaWan(_))
    }

    pub fn size(&self) -> usize {
        match self {
            OnAir::Mac(p) => p.on_air_len(),
            OnAir::LoRaWan(p) => p.payload.len() + crate::phy::LORAWAN_OVERHEAD_BYTES,
        }
    }

    pub fn airtime(&self, radio: &RadioParams) -> Result<Airtime, PhyError> {
        match self {
            OnAir::Mac(p) => time_on_air(p.on_air_len(), radio),
            OnAir::LoRaWan(p) => lorawan_time_on_air(p.payload.len(), radio),
        }
    }
}

/// What an open reception window is waiting for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expect {
    ParentBeacon(NodeId),
    Data(NodeId),
    Ack { from: NodeId, seq: u8 },
    Downlink(NodeId),
    JoinRequests,
    /// Continuous listening while not synchronised.
    Anything,
}

/// Radio activity inside a slot. Offsets are local seconds from the slot
/// start; `close` is the latest instant a frame may start and still be caught.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RadioAction {
    Transmit { offset: f64, frame: OnAir },
    Listen { open: f64, close: f64, expect: Expect },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPlan {
    pub role: SlotRole,
    pub actions: Vec<RadioAction>,
    pub events: Vec<NodeEvent>,
}

impl SlotPlan {
    fn sleep(role: SlotRole) -> Self {
        Self {
            role,
            actions: Vec::new(),
            events: Vec::new(),
        }
    }

    fn act(role: SlotRole, action: RadioAction) -> Self {
        Self {
            role,
            actions: vec![action],
            events: Vec::new(),
        }
    }
}

/// Per-slot facts the node cannot derive from its own state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotContext {
    pub frame: u64,
    pub slot: u16,
    /// Synchronised nodes listen for joiners (and carry JoinAccepts down).
    pub admission_open: bool,
    /// Downlink application traffic may be pending.
    pub downlink_listen: bool,
}

/// Reception metadata supplied by the channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxMeta {
    /// Global instant the first symbol arrived.
    pub start: f64,
    pub end: f64,
    /// Sender's local tick at which it started transmitting.
    pub sender_tick: u64,
    pub rssi_dbm: f64,
    pub expect: Expect,
}

/// A reply to send `delay` local seconds after the reception ended.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub delay: f64,
    pub packet: MacPacket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeEvent {
    BeaconReceived { parent: NodeId, case: BeaconCase, offset: f64 },
    BeaconMissed { parent: NodeId, misses: u32 },
    Desynchronized,
    JoinStarted { parent: NodeId },
    JoinTimedOut,
    Joined { parent: NodeId, slots: SlotTriple },
    Admitted { node: NodeId, slots: SlotTriple },
    JoinRejected { node: NodeId },
    Dropped { kind: PacketKind, origin: NodeId },
    Delivered { origin: NodeId },
    ToGateway { origin: NodeId },
    Acked { to: NodeId, seq: u8 },
    AppSample,
    ProtocolError(String),
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct RxOutcome {
    pub responses: Vec<Response>,
    pub events: Vec<NodeEvent>,
    /// The clock was re-anchored; timers derived from it are stale.
    pub resynced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeardBeacon {
    pub sender: NodeId,
    pub rssi_dbm: f64,
    pub frame: u64,
    pub start: f64,
    pub sender_tick: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JoinError {
    #[error("no beacon heard during the listen period")]
    NoBeacons,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinPlan {
    pub parent: NodeId,
    pub request: MacPacket,
    /// Start offset within the join slot, local seconds from the slot start.
    pub offset: f64,
}

/// Strongest candidate wins; ties go to the lowest sender id.
pub fn choose_parent(heard: &[(NodeId, f64)]) -> Option<NodeId> {
    heard
        .iter()
        .copied()
        .max_by(|(a_id, a_rssi), (b_id, b_rssi)| {
            a_rssi.total_cmp(b_rssi).then_with(|| b_id.cmp(a_id))
        })
        .map(|(id, _)| id)
}

/// Relay-side slot bookkeeping. Triples are never reclaimed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotAllocator {
    by_node: BTreeMap<NodeId, u16>,
    used: BTreeSet<u16>,
}

impl SlotAllocator {
    fn with_relay(relay: NodeId) -> Self {
        let mut a = Self::default();
        a.by_node.insert(relay, 0);
        a.used.insert(0);
        a
    }

    pub fn index_of(&self, node: NodeId) -> Option<u16> {
        self.by_node.get(&node).copied()
    }

    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.by_node.keys().copied()
    }

    /// Keeps an existing triple when its beacon still follows the parent's,
    /// otherwise hands out the lowest free one.
    fn admit(&mut self, node: NodeId, parent: NodeId, max_nodes: u16) -> Option<u16> {
        let parent_index = self.index_of(parent)?;
        if let Some(existing) = self.index_of(node) {
            if existing > parent_index {
                return Some(existing);
            }
        }
        let free = (parent_index + 1..max_nodes).find(|i| !self.used.contains(i))?;
        self.used.insert(free);
        self.by_node.insert(node, free);
        Some(free)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Awaiting {
    to: NodeId,
    seq: u8,
    dir: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct JoinAttempt {
    parent: NodeId,
    frame: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub node_id: NodeId,
    pub is_relay: bool,
    pub mode: Mode,
    pub parent_id: Option<NodeId>,
    pub children: BTreeMap<NodeId, SlotTriple>,
    pub assigned_slots: Option<SlotTriple>,
    pub uplink_queue: VecDeque<MacPacket>,
    /// Entries are `(next hop, packet)`.
    pub downlink_queue: VecDeque<(NodeId, MacPacket)>,
    pub consecutive_beacon_misses: u32,
    pub clock: VirtualClock,
    /// The clock has been anchored on some beacon since the last desync.
    pub anchored: bool,
    parent_beacon_slot: Option<u16>,
    routes: BTreeMap<NodeId, NodeId>,
    candidates: Vec<HeardBeacon>,
    attempt: Option<JoinAttempt>,
    awaiting: Option<Awaiting>,
    last_rx_seq: BTreeMap<NodeId, (PacketKind, u8)>,
    next_seq: u8,
    allocator: Option<SlotAllocator>,
}

impl NodeState {
    pub fn relay(node_id: NodeId, clock: VirtualClock, cfg: &MacConfig) -> Self {
        let mut s = Self::unjoined(node_id, clock);
        s.is_relay = true;
        s.mode = Mode::Synchronized;
        s.anchored = true;
        s.assigned_slots = Some(cfg.schedule.triple(0));
        s.allocator = Some(SlotAllocator::with_relay(node_id));
        s
    }

    pub fn unjoined(node_id: NodeId, clock: VirtualClock) -> Self {
        Self {
            node_id,
            is_relay: false,
            mode: Mode::Unjoined,
            parent_id: None,
            children: BTreeMap::new(),
            assigned_slots: None,
            uplink_queue: VecDeque::new(),
            downlink_queue: VecDeque::new(),
            consecutive_beacon_misses: 0,
            clock,
            anchored: false,
            parent_beacon_slot: None,
            routes: BTreeMap::new(),
            candidates: Vec::new(),
            attempt: None,
            awaiting: None,
            last_rx_seq: BTreeMap::new(),
            next_seq: 0,
            allocator: None,
        }
    }

    pub fn allocator(&self) -> Option<&SlotAllocator> {
        self.allocator.as_ref()
    }

    /// Nodes reachable downward through this one.
    pub fn known_destinations(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.routes.keys().copied()
    }

    pub fn parent_beacon_slot(&self) -> Option<u16> {
        self.parent_beacon_slot
    }

    /// Radio stays in receive between planned actions.
    pub fn listens_continuously(&self) -> bool {
        self.mode != Mode::Synchronized
    }

    fn take_seq(&mut self) -> u8 {
        let s = self.next_seq;
        self.next_seq = (self.next_seq + 1) % SEQ_MODULUS;
        s
    }

    pub fn role_in_slot(&self, slot: u16, cfg: &MacConfig) -> SlotRole {
        let me = self.node_id;
        let own = self.assigned_slots.filter(|_| self.mode == Mode::Synchronized);
        let child_with = |pick: fn(&SlotTriple) -> u16| {
            self.children
                .iter()
                .find(|(_, t)| pick(t) == slot)
                .map(|(c, _)| *c)
        };
        match cfg.schedule.kind(slot) {
            SlotKind::Join => SlotRole::JoinContention,
            _ if own.is_none() => SlotRole::Idle,
            SlotKind::Beacon(_) if own.map(|t| t.beacon) == Some(slot) => SlotRole::BeaconTx(me),
            SlotKind::Beacon(_) => match (self.parent_id, self.parent_beacon_slot) {
                (Some(p), Some(ps)) if ps == slot => SlotRole::BeaconRx(p),
                _ => SlotRole::Idle,
            },
            SlotKind::LoRaWan if self.is_relay => SlotRole::LoRaWanUplink,
            SlotKind::Uplink(_) if !self.is_relay && own.map(|t| t.uplink) == Some(slot) => {
                SlotRole::UplinkExchange(me)
            }
            SlotKind::Uplink(_) => child_with(|t| t.uplink)
                .map(SlotRole::UplinkExchange)
                .unwrap_or(SlotRole::Idle),
            SlotKind::Downlink(_) if !self.is_relay && own.map(|t| t.downlink) == Some(slot) => {
                SlotRole::DownlinkExchange(me)
            }
            SlotKind::Downlink(_) => child_with(|t| t.downlink)
                .map(SlotRole::DownlinkExchange)
                .unwrap_or(SlotRole::Idle),
            SlotKind::LoRaWan | SlotKind::Idle => SlotRole::Idle,
        }
    }

    /// Beacon window width after the current run of misses.
    pub fn beacon_guard(&self, cfg: &MacConfig) -> f64 {
        cfg.guard
            .effective_guard(self.consecutive_beacon_misses, cfg.guard_cap())
    }

    pub fn on_slot_start<R: Rng>(
        &mut self,
        ctx: SlotContext,
        cfg: &MacConfig,
        rng: &mut R,
    ) -> SlotPlan {
        let role = self.role_in_slot(ctx.slot, cfg);
        let t = &cfg.timing;
        let data_at = t.t_offset + t.t_guard / 2.0;
        match role {
            SlotRole::BeaconTx(_) => SlotPlan::act(
                role,
                RadioAction::Transmit {
                    offset: t.t_offset,
                    frame: OnAir::Mac(MacPacket::beacon(cfg.network_id, self.node_id, ctx.frame as u8)),
                },
            ),
            SlotRole::BeaconRx(parent) => {
                let half = self.beacon_guard(cfg) / 2.0;
                SlotPlan::act(
                    role,
                    RadioAction::Listen {
                        open: t.t_offset - half,
                        close: t.t_offset + half,
                        expect: Expect::ParentBeacon(parent),
                    },
                )
            }
            SlotRole::LoRaWanUplink => match self.uplink_queue.front() {
                Some(p) => SlotPlan::act(
                    role,
                    RadioAction::Transmit {
                        offset: t.t_offset,
                        frame: OnAir::LoRaWan(p.clone()),
                    },
                ),
                None => SlotPlan::sleep(role),
            },
            SlotRole::UplinkExchange(owner) if owner == self.node_id => {
                match self.forwarding_step() {
                    Some(p) => {
                        self.awaiting = Some(Awaiting {
                            to: p.dest_id,
                            seq: p.seq,
                            dir: Direction::Up,
                        });
                        SlotPlan::act(
                            role,
                            RadioAction::Transmit {
                                offset: data_at,
                                frame: OnAir::Mac(p),
                            },
                        )
                    }
                    None => SlotPlan::sleep(role),
                }
            }
            SlotRole::UplinkExchange(child) => SlotPlan::act(
                role,
                RadioAction::Listen {
                    open: t.t_offset,
                    close: t.t_offset + t.t_guard,
                    expect: Expect::Data(child),
                },
            ),
            SlotRole::DownlinkExchange(owner) if owner == self.node_id => {
                if ctx.admission_open || ctx.downlink_listen {
                    let parent = self.parent_id.unwrap_or(NodeId::BROADCAST);
                    SlotPlan::act(
                        role,
                        RadioAction::Listen {
                            open: t.t_offset,
                            close: t.t_offset + t.t_guard,
                            expect: Expect::Downlink(parent),
                        },
                    )
                } else {
                    SlotPlan::sleep(role)
                }
            }
            SlotRole::DownlinkExchange(child) => {
                let entry = self
                    .downlink_queue
                    .iter()
                    .find(|(hop, _)| *hop == child)
                    .map(|(_, p)| p.clone());
                match entry {
                    Some(mut p) => {
                        p.sender_id = self.node_id;
                        self.awaiting = Some(Awaiting {
                            to: child,
                            seq: p.seq,
                            dir: Direction::Down,
                        });
                        SlotPlan::act(
                            role,
                            RadioAction::Transmit {
                                offset: data_at,
                                frame: OnAir::Mac(p),
                            },
                        )
                    }
                    None => SlotPlan::sleep(role),
                }
            }
            SlotRole::JoinContention => self.join_slot_plan(ctx, cfg, rng),
            SlotRole::Idle => SlotPlan::sleep(role),
        }
    }

    fn join_slot_plan<R: Rng>(&mut self, ctx: SlotContext, cfg: &MacConfig, rng: &mut R) -> SlotPlan {
        let role = SlotRole::JoinContention;
        match self.mode {
            Mode::Synchronized if ctx.admission_open => SlotPlan::act(
                role,
                RadioAction::Listen {
                    open: cfg.timing.t_offset,
                    close: cfg.join_listen_close(),
                    expect: Expect::JoinRequests,
                },
            ),
            Mode::Synchronized => SlotPlan::sleep(role),
            Mode::Joining => {
                let expired = self
                    .attempt
                    .is_none_or(|a| ctx.frame >= a.frame + cfg.join_timeout_frames);
                if expired {
                    self.mode = Mode::Unjoined;
                    self.attempt = None;
                    self.parent_id = None;
                    let mut plan = self.try_join(ctx, cfg, rng);
                    plan.events.insert(0, NodeEvent::JoinTimedOut);
                    plan
                } else {
                    SlotPlan::sleep(role)
                }
            }
            Mode::Unjoined | Mode::Desynchronized => self.try_join(ctx, cfg, rng),
        }
    }

    fn try_join<R: Rng>(&mut self, ctx: SlotContext, cfg: &MacConfig, rng: &mut R) -> SlotPlan {
        match self.join_procedure(ctx.frame, cfg, rng) {
            Ok(plan) => SlotPlan {
                role: SlotRole::JoinContention,
                actions: vec![RadioAction::Transmit {
                    offset: plan.offset,
                    frame: OnAir::Mac(plan.request),
                }],
                events: vec![NodeEvent::JoinStarted { parent: plan.parent }],
            },
            Err(JoinError::NoBeacons) => SlotPlan::sleep(SlotRole::JoinContention),
        }
    }

    /// Picks a parent among the beacons heard this frame, aligns on its
    /// beacon and prepares a JoinRequest at a random backoff.
    pub fn join_procedure<R: Rng>(
        &mut self,
        frame: u64,
        cfg: &MacConfig,
        rng: &mut R,
    ) -> Result<JoinPlan, JoinError> {
        let heard: Vec<(NodeId, f64)> = self
            .candidates
            .iter()
            .filter(|c| c.frame == frame)
            .map(|c| (c.sender, c.rssi_dbm))
            .collect();
        let parent = choose_parent(&heard).ok_or(JoinError::NoBeacons)?;
        let beacon = self
            .candidates
            .iter()
            .rev()
            .find(|c| c.frame == frame && c.sender == parent)
            .copied()
            .ok_or(JoinError::NoBeacons)?;
        self.clock = self.clock.resync(beacon.start, beacon.sender_tick);
        self.parent_beacon_slot = Some(cfg.slot_of_tick(beacon.sender_tick));
        self.parent_id = Some(parent);
        self.mode = Mode::Joining;
        self.attempt = Some(JoinAttempt { parent, frame });
        self.candidates.clear();
        let backoff = if cfg.join_backoffs.is_empty() {
            0.0
        } else {
            cfg.join_backoffs[rng.gen_range(0..cfg.join_backoffs.len())]
        };
        let request = MacPacket {
            kind: PacketKind::JoinRequest,
            network_id: cfg.network_id,
            sender_id: self.node_id,
            dest_id: parent,
            origin_id: self.node_id,
            seq: self.take_seq(),
            payload: vec![parent.0],
        };
        Ok(JoinPlan {
            parent,
            request,
            offset: cfg.timing.t_offset + cfg.timing.t_guard / 2.0 + backoff,
        })
    }

    /// Head of the uplink queue, addressed to the current parent.
    pub fn forwarding_step(&self) -> Option<MacPacket> {
        if self.mode != Mode::Synchronized || self.is_relay {
            return None;
        }
        let parent = self.parent_id?;
        self.uplink_queue.front().map(|p| MacPacket {
            sender_id: self.node_id,
            dest_id: parent,
            ..p.clone()
        })
    }

    fn push_uplink(&mut self, mut packet: MacPacket, cfg: &MacConfig) -> Option<NodeEvent> {
        if self.uplink_queue.len() >= cfg.queue_capacity {
            return Some(NodeEvent::Dropped {
                kind: packet.kind,
                origin: packet.origin_id,
            });
        }
        packet.seq = self.take_seq();
        packet.sender_id = self.node_id;
        packet.dest_id = self.parent_id.unwrap_or(NodeId::BROADCAST);
        self.uplink_queue.push_back(packet);
        None
    }

    fn push_downlink(&mut self, hop: NodeId, mut packet: MacPacket, cfg: &MacConfig) -> Option<NodeEvent> {
        if self.downlink_queue.len() >= cfg.queue_capacity {
            return Some(NodeEvent::Dropped {
                kind: packet.kind,
                origin: packet.origin_id,
            });
        }
        packet.seq = self.take_seq();
        packet.sender_id = self.node_id;
        self.downlink_queue.push_back((hop, packet));
        None
    }

    /// Runs the sensing application and queues its sample when `payload_bytes` is set.
    pub fn generate_sample(&mut self, payload_bytes: Option<usize>, cfg: &MacConfig) -> Vec<NodeEvent> {
        let mut events = vec![NodeEvent::AppSample];
        if let Some(len) = payload_bytes {
            let packet = MacPacket {
                kind: PacketKind::UpData,
                network_id: cfg.network_id,
                sender_id: self.node_id,
                dest_id: NodeId::BROADCAST,
                origin_id: self.node_id,
                seq: 0,
                payload: vec![0; len],
            };
            events.extend(self.push_uplink(packet, cfg));
        }
        events
    }

    /// Queues application data from the relay toward `dest`.
    pub fn enqueue_downlink(&mut self, dest: NodeId, payload: Vec<u8>, cfg: &MacConfig) -> Vec<NodeEvent> {
        let Some(hop) = self.routes.get(&dest).copied() else {
            return vec![NodeEvent::ProtocolError(format!("no route to {dest}"))];
        };
        let packet = MacPacket {
            kind: PacketKind::DownData,
            network_id: cfg.network_id,
            sender_id: self.node_id,
            dest_id: dest,
            origin_id: self.node_id,
            seq: 0,
            payload,
        };
        self.push_downlink(hop, packet, cfg).into_iter().collect()
    }

    /// Follow-up after a transmission completes: the acknowledgment window,
    /// as offsets relative to the end of the transmission.
    pub fn on_tx_done(&mut self, frame: &OnAir, cfg: &MacConfig) -> (Option<RadioAction>, Vec<NodeEvent>) {
        let t = &cfg.timing;
        match frame {
            OnAir::LoRaWan(p) => {
                self.uplink_queue.pop_front();
                (None, vec![NodeEvent::ToGateway { origin: p.origin_id }])
            }
            OnAir::Mac(p) => {
                let exchange = matches!(p.kind, PacketKind::UpData | PacketKind::DownData | PacketKind::JoinAccept)
                    || (p.kind == PacketKind::JoinRequest && p.origin_id != self.node_id);
                match self.awaiting {
                    Some(a) if exchange && a.seq == p.seq => (
                        Some(RadioAction::Listen {
                            open: t.t_offset - t.t_guard / 2.0,
                            close: t.t_offset + t.t_guard / 2.0,
                            expect: Expect::Ack { from: a.to, seq: a.seq },
                        }),
                        Vec::new(),
                    ),
                    _ => (None, Vec::new()),
                }
            }
        }
    }

    /// A reception window closed without its expected frame.
    pub fn on_window_closed(&mut self, expect: Expect, cfg: &MacConfig) -> Vec<NodeEvent> {
        match expect {
            Expect::ParentBeacon(parent) if self.mode == Mode::Synchronized => {
                self.consecutive_beacon_misses += 1;
                let misses = self.consecutive_beacon_misses;
                let mut events = vec![NodeEvent::BeaconMissed { parent, misses }];
                if misses >= cfg.guard.max_misses {
                    self.desynchronize();
                    events.push(NodeEvent::Desynchronized);
                }
                events
            }
            Expect::Ack { .. } => {
                self.awaiting = None;
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    fn desynchronize(&mut self) {
        self.mode = Mode::Desynchronized;
        self.anchored = false;
        self.parent_id = None;
        self.parent_beacon_slot = None;
        self.consecutive_beacon_misses = 0;
        self.awaiting = None;
        self.attempt = None;
        self.candidates.clear();
    }

    fn is_duplicate(&mut self, packet: &MacPacket) -> bool {
        let key = (packet.kind, packet.seq);
        self.last_rx_seq.insert(packet.sender_id, key) == Some(key)
    }

    fn ack_for(&self, packet: &MacPacket, cfg: &MacConfig) -> Response {
        Response {
            delay: cfg.timing.t_offset,
            packet: MacPacket::ack(cfg.network_id, self.node_id, packet.sender_id, packet.seq),
        }
    }

    pub fn handle_rx(&mut self, packet: &MacPacket, rx: &RxMeta, cfg: &MacConfig) -> RxOutcome {
        let mut out = RxOutcome::default();
        if packet.kind != PacketKind::Ack && packet.network_id != cfg.network_id {
            return out;
        }
        match packet.kind {
            PacketKind::Beacon => self.rx_beacon(packet, rx, cfg, &mut out),
            PacketKind::Ack => self.rx_ack(packet, &mut out),
            PacketKind::UpData | PacketKind::JoinRequest => self.rx_upward(packet, rx, cfg, &mut out),
            PacketKind::JoinAccept | PacketKind::DownData => self.rx_downward(packet, cfg, &mut out),
        }
        out
    }

    fn rx_beacon(&mut self, packet: &MacPacket, rx: &RxMeta, cfg: &MacConfig, out: &mut RxOutcome) {
        let sender = packet.sender_id;
        match self.mode {
            Mode::Synchronized if Some(sender) == self.parent_id && !self.is_relay => {
                let expected = self.clock.instant_of(rx.sender_tick as f64);
                let offset = rx.start - expected;
                let case = BeaconCase::classify(offset, self.beacon_guard(cfg) / 2.0, self.clock.local_tick_duration());
                self.clock = self.clock.resync(rx.start, rx.sender_tick);
                self.parent_beacon_slot = Some(cfg.slot_of_tick(rx.sender_tick));
                self.consecutive_beacon_misses = 0;
                out.resynced = true;
                out.events.push(NodeEvent::BeaconReceived {
                    parent: sender,
                    case,
                    offset,
                });
            }
            Mode::Joining if Some(sender) == self.parent_id => {
                self.clock = self.clock.resync(rx.start, rx.sender_tick);
                self.parent_beacon_slot = Some(cfg.slot_of_tick(rx.sender_tick));
                out.resynced = true;
            }
            Mode::Unjoined | Mode::Desynchronized => {
                self.candidates.push(HeardBeacon {
                    sender,
                    rssi_dbm: rx.rssi_dbm,
                    frame: cfg.frame_of_tick(rx.sender_tick),
                    start: rx.start,
                    sender_tick: rx.sender_tick,
                });
                if !self.anchored {
                    self.clock = self.clock.resync(rx.start, rx.sender_tick);
                    self.anchored = true;
                    out.resynced = true;
                }
            }
            _ => {}
        }
    }

    fn rx_ack(&mut self, packet: &MacPacket, out: &mut RxOutcome) {
        let Some(a) = self.awaiting else { return };
        if a.to != packet.sender_id || a.seq != packet.seq {
            return;
        }
        self.awaiting = None;
        match a.dir {
            Direction::Up => {
                if self.uplink_queue.front().map(|p| p.seq) == Some(a.seq) {
                    self.uplink_queue.pop_front();
                }
            }
            Direction::Down => {
                if let Some(pos) = self
                    .downlink_queue
                    .iter()
                    .position(|(hop, p)| *hop == a.to && p.seq == a.seq)
                {
                    self.downlink_queue.remove(pos);
                }
            }
        }
        out.events.push(NodeEvent::Acked { to: a.to, seq: a.seq });
    }

    fn rx_upward(&mut self, packet: &MacPacket, rx: &RxMeta, cfg: &MacConfig, out: &mut RxOutcome) {
        if self.mode != Mode::Synchronized || packet.dest_id != self.node_id {
            return;
        }
        let direct_join = matches!(rx.expect, Expect::JoinRequests);
        if !direct_join {
            out.responses.push(self.ack_for(packet, cfg));
            if self.is_duplicate(packet) {
                return;
            }
        }
        self.routes.insert(packet.origin_id, packet.sender_id);
        match packet.kind {
            PacketKind::UpData => out.events.extend(self.push_uplink(packet.clone(), cfg)),
            PacketKind::JoinRequest if self.is_relay => self.admit(packet, cfg, out),
            PacketKind::JoinRequest => out.events.extend(self.push_uplink(packet.clone(), cfg)),
            _ => {}
        }
    }

    fn admit(&mut self, request: &MacPacket, cfg: &MacConfig, out: &mut RxOutcome) {
        let joiner = request.origin_id;
        let Some(&parent_byte) = request.payload.first() else {
            out.events.push(NodeEvent::ProtocolError("JoinRequest without parent".into()));
            return;
        };
        let parent = NodeId(parent_byte);
        let max_nodes = cfg.schedule.max_nodes;
        let Some(index) = self.allocator.as_mut().and_then(|a| a.admit(joiner, parent, max_nodes)) else {
            out.events.push(NodeEvent::JoinRejected { node: joiner });
            return;
        };
        let slots = cfg.schedule.triple(index);
        if parent == self.node_id {
            self.children.insert(joiner, slots);
        }
        let accept = MacPacket {
            kind: PacketKind::JoinAccept,
            network_id: cfg.network_id,
            sender_id: self.node_id,
            dest_id: joiner,
            origin_id: self.node_id,
            seq: 0,
            payload: encode_join_accept(slots, parent),
        };
        let hop = self.routes.get(&joiner).copied().unwrap_or(joiner);
        out.events.push(NodeEvent::Admitted { node: joiner, slots });
        out.events.extend(self.push_downlink(hop, accept, cfg));
    }

    fn rx_downward(&mut self, packet: &MacPacket, cfg: &MacConfig, out: &mut RxOutcome) {
        let addressed_to_me = packet.dest_id == self.node_id;
        if packet.kind == PacketKind::JoinAccept && addressed_to_me {
            if self.mode == Mode::Joining && Some(packet.sender_id) == self.parent_id {
                let Some((slots, parent)) = decode_join_accept(&packet.payload) else {
                    out.events.push(NodeEvent::ProtocolError("malformed JoinAccept".into()));
                    return;
                };
                out.responses.push(self.ack_for(packet, cfg));
                self.is_duplicate(packet);
                self.assigned_slots = Some(slots);
                self.parent_id = Some(parent);
                self.mode = Mode::Synchronized;
                self.consecutive_beacon_misses = 0;
                self.attempt = None;
                out.events.push(NodeEvent::Joined { parent, slots });
            } else if self.mode == Mode::Synchronized && Some(packet.sender_id) == self.parent_id {
                // retransmission after a lost ack
                out.responses.push(self.ack_for(packet, cfg));
            }
            return;
        }
        if self.mode != Mode::Synchronized || Some(packet.sender_id) != self.parent_id {
            return;
        }
        out.responses.push(self.ack_for(packet, cfg));
        if self.is_duplicate(packet) {
            return;
        }
        match packet.kind {
            PacketKind::DownData if addressed_to_me => {
                out.events.push(NodeEvent::Delivered { origin: packet.origin_id })
            }
            PacketKind::JoinAccept => {
                let Some((slots, parent)) = decode_join_accept(&packet.payload) else {
                    out.events.push(NodeEvent::ProtocolError("malformed JoinAccept".into()));
                    return;
                };
                let joiner = packet.dest_id;
                if parent == self.node_id {
                    self.children.insert(joiner, slots);
                    self.routes.insert(joiner, joiner);
                }
                self.forward_down(packet, cfg, out);
            }
            _ => self.forward_down(packet, cfg, out),
        }
    }

    fn forward_down(&mut self, packet: &MacPacket, cfg: &MacConfig, out: &mut RxOutcome) {
        match self.routes.get(&packet.dest_id).copied() {
            Some(hop) => out.events.extend(self.push_downlink(hop, packet.clone(), cfg)),
            None => out
                .events
                .push(NodeEvent::ProtocolError(format!("no route to {}", packet.dest_id))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::schedule::build_schedule;
    use crate::timebase::DEFAULT_TICK_RATE_HZ;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(max_nodes: u16) -> MacConfig {
        let radio = RadioParams::default();
        MacConfig {
            network_id: 1,
            schedule: build_schedule(max_nodes, 90, 21_281).unwrap(),
            timing: SlotTiming::derive(&radio, 0.030, 0.010).unwrap(),
            guard: GuardConfig::default(),
            radio,
            tick_rate_hz: DEFAULT_TICK_RATE_HZ,
            queue_capacity: 64,
            join_backoffs: vec![0.0, 0.13, 0.26, 0.39],
            join_timeout_frames: 8,
        }
    }

    fn clock() -> VirtualClock {
        VirtualClock::new(DEFAULT_TICK_RATE_HZ, 0.0).unwrap()
    }

    fn ctx(slot: u16) -> SlotContext {
        SlotContext {
            frame: 3,
            slot,
            admission_open: true,
            downlink_listen: false,
        }
    }

    fn rx(expect: Expect) -> RxMeta {
        RxMeta {
            start: 1.0,
            end: 1.1,
            sender_tick: 0,
            rssi_dbm: -60.0,
            expect,
        }
    }

    fn synced_child(cfg: &MacConfig, id: u8, parent: u8, index: u16) -> NodeState {
        let mut n = NodeState::unjoined(NodeId(id), clock());
        n.mode = Mode::Synchronized;
        n.anchored = true;
        n.parent_id = Some(NodeId(parent));
        n.parent_beacon_slot = Some(0);
        n.assigned_slots = Some(cfg.schedule.triple(index));
        n
    }

    fn up_data(from: u8, to: u8, seq: u8, len: usize) -> MacPacket {
        MacPacket {
            kind: PacketKind::UpData,
            network_id: 1,
            sender_id: NodeId(from),
            dest_id: NodeId(to),
            origin_id: NodeId(from),
            seq,
            payload: vec![0; len],
        }
    }

    #[test]
    fn parent_choice() {
        assert_eq!(choose_parent(&[(NodeId(0), -60.0)]), Some(NodeId(0)));
        assert_eq!(choose_parent(&[(NodeId(1), -70.0), (NodeId(2), -55.0)]), Some(NodeId(2)));
        assert_eq!(choose_parent(&[(NodeId(2), -60.0), (NodeId(1), -60.0)]), Some(NodeId(1)));
        assert_eq!(choose_parent(&[]), None);
    }

    #[test]
    fn relay_beacon_slot_transmits_after_offset() {
        let c = cfg(29);
        let mut relay = NodeState::relay(NodeId(0), clock(), &c);
        let plan = relay.on_slot_start(ctx(0), &c, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(plan.role, SlotRole::BeaconTx(NodeId(0)));
        let RadioAction::Transmit { offset, frame } = &plan.actions[0] else { panic!() };
        assert_eq!(*offset, 0.030);
        assert_abs_diff_eq!(frame.airtime(&c.radio).unwrap().as_millis(), 103.424, epsilon = 1e-9);
    }

    #[test]
    fn child_beacon_window_is_centred() {
        let c = cfg(29);
        let mut child = synced_child(&c, 1, 0, 1);
        let plan = child.on_slot_start(ctx(0), &c, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(plan.role, SlotRole::BeaconRx(NodeId(0)));
        let [RadioAction::Listen { open, close, expect }] = plan.actions.as_slice() else { panic!() };
        assert_abs_diff_eq!(*open, 0.025, epsilon = 1e-12);
        assert_abs_diff_eq!(*close, 0.035, epsilon = 1e-12);
        assert_eq!(*expect, Expect::ParentBeacon(NodeId(0)));
    }

    #[test]
    fn leaf_sleeps_through_foreign_uplink() {
        let c = cfg(29);
        let mut leaf = synced_child(&c, 2, 0, 2);
        let other_uplink = c.schedule.triple(1).uplink;
        let plan = leaf.on_slot_start(ctx(other_uplink), &c, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(plan.role, SlotRole::Idle);
        assert!(plan.actions.is_empty());
    }

    #[test]
    fn join_accept_synchronizes() {
        let c = cfg(29);
        let mut n = NodeState::unjoined(NodeId(5), clock());
        n.mode = Mode::Joining;
        n.parent_id = Some(NodeId(0));
        let slots = c.schedule.triple(1);
        assert_eq!(slots, SlotTriple { beacon: 1, uplink: 31, downlink: 60 });
        let accept = MacPacket {
            kind: PacketKind::JoinAccept,
            network_id: 1,
            sender_id: NodeId(0),
            dest_id: NodeId(5),
            origin_id: NodeId(0),
            seq: 2,
            payload: encode_join_accept(slots, NodeId(0)),
        };
        let out = n.handle_rx(&accept, &rx(Expect::Anything), &c);
        assert_eq!(n.mode, Mode::Synchronized);
        assert_eq!(n.assigned_slots, Some(slots));
        assert_eq!(out.responses.len(), 1);
        assert_eq!(out.responses[0].packet.kind, PacketKind::Ack);
    }

    #[test]
    fn late_beacon_resyncs_child() {
        let c = cfg(29);
        let mut child = synced_child(&c, 1, 0, 1);
        let tick = c.schedule.ticks_per_frame() + 983;
        let nominal = child.clock.ticks_to_global(tick).unwrap();
        let meta = RxMeta {
            start: nominal + 1.169e-3,
            end: nominal + 1.169e-3 + 0.103424,
            sender_tick: tick,
            rssi_dbm: -60.0,
            expect: Expect::ParentBeacon(NodeId(0)),
        };
        let out = child.handle_rx(&MacPacket::beacon(1, NodeId(0), 1), &meta, &c);
        assert!(out.resynced);
        assert!(matches!(out.events[0], NodeEvent::BeaconReceived { case: BeaconCase::B, .. }));
        let residual = child.clock.ticks_to_global(tick).unwrap() - meta.start;
        assert!((0.0..30.52e-6).contains(&residual));
    }

    #[test]
    fn foreign_network_is_ignored() {
        let c = cfg(29);
        let mut child = synced_child(&c, 1, 0, 1);
        let before = child.clone();
        let out = child.handle_rx(&MacPacket::beacon(9, NodeId(0), 1), &rx(Expect::ParentBeacon(NodeId(0))), &c);
        assert_eq!(out, RxOutcome::default());
        assert_eq!(child, before);
    }

    #[test]
    fn forwarding_is_fifo_and_one_per_slot() {
        let c = cfg(29);
        let mut n = synced_child(&c, 1, 0, 1);
        assert_eq!(n.forwarding_step(), None);
        n.uplink_queue.push_back(up_data(2, 1, 0, 24));
        n.uplink_queue.push_back(up_data(1, 0, 1, 24));
        let head = n.forwarding_step().unwrap();
        assert_eq!(head.origin_id, NodeId(2));
        assert_eq!(head.dest_id, NodeId(0));
        let own = synced_child(&c, 3, 0, 3).generate_sample(Some(24), &c);
        assert_eq!(own, vec![NodeEvent::AppSample]);
        let mut solo = synced_child(&c, 3, 0, 3);
        solo.generate_sample(Some(24), &c);
        let airtime = OnAir::Mac(solo.forwarding_step().unwrap()).airtime(&c.radio).unwrap();
        assert_abs_diff_eq!(airtime.as_millis(), 226.304, epsilon = 1e-9);
    }

    #[test]
    fn uplink_data_is_acked_and_queued() {
        let c = cfg(29);
        let mut parent = synced_child(&c, 1, 0, 1);
        let out = parent.handle_rx(&up_data(2, 1, 7, 24), &rx(Expect::Data(NodeId(2))), &c);
        assert_eq!(out.responses[0].packet, MacPacket::ack(1, NodeId(1), NodeId(2), 7));
        assert_eq!(parent.uplink_queue.len(), 1);
        // duplicate after a lost ack is acked but not queued again
        let again = parent.handle_rx(&up_data(2, 1, 7, 24), &rx(Expect::Data(NodeId(2))), &c);
        assert_eq!(again.responses.len(), 1);
        assert_eq!(parent.uplink_queue.len(), 1);
    }

    #[test]
    fn ack_pops_head() {
        let c = cfg(29);
        let mut n = synced_child(&c, 1, 0, 1);
        n.generate_sample(Some(24), &c);
        let slot = n.assigned_slots.unwrap().uplink;
        let plan = n.on_slot_start(ctx(slot), &c, &mut ChaCha8Rng::seed_from_u64(1));
        let RadioAction::Transmit { frame, .. } = &plan.actions[0] else { panic!() };
        let (follow, _) = n.on_tx_done(frame, &c);
        assert!(matches!(follow, Some(RadioAction::Listen { expect: Expect::Ack { .. }, .. })));
        let seq = frame.packet().seq;
        n.handle_rx(&MacPacket::ack(1, NodeId(0), NodeId(1), seq), &rx(Expect::Ack { from: NodeId(0), seq }), &c);
        assert!(n.uplink_queue.is_empty());
    }

    #[test]
    fn queue_overflow_drops_newest() {
        let mut c = cfg(29);
        c.queue_capacity = 2;
        let mut n = synced_child(&c, 1, 0, 1);
        n.generate_sample(Some(4), &c);
        n.generate_sample(Some(5), &c);
        let events = n.generate_sample(Some(6), &c);
        assert!(events.contains(&NodeEvent::Dropped { kind: PacketKind::UpData, origin: NodeId(1) }));
        assert_eq!(n.uplink_queue.len(), 2);
        assert_eq!(n.uplink_queue.back().unwrap().payload.len(), 5);
    }

    #[test]
    fn relay_admits_lowest_free_triple() {
        let c = cfg(29);
        let mut relay = NodeState::relay(NodeId(0), clock(), &c);
        let req = |id: u8| MacPacket {
            kind: PacketKind::JoinRequest,
            network_id: 1,
            sender_id: NodeId(id),
            dest_id: NodeId(0),
            origin_id: NodeId(id),
            seq: 0,
            payload: vec![0],
        };
        let out = relay.handle_rx(&req(4), &rx(Expect::JoinRequests), &c);
        assert!(out.responses.is_empty());
        assert!(out.events.contains(&NodeEvent::Admitted { node: NodeId(4), slots: c.schedule.triple(1) }));
        relay.handle_rx(&req(7), &rx(Expect::JoinRequests), &c);
        assert_eq!(relay.children[&NodeId(7)], c.schedule.triple(2));
        // a repeated request keeps the same triple
        relay.handle_rx(&req(4), &rx(Expect::JoinRequests), &c);
        assert_eq!(relay.children[&NodeId(4)], c.schedule.triple(1));
        assert_eq!(relay.downlink_queue.len(), 3);
        let d = c.schedule.triple(1).downlink;
        let plan = relay.on_slot_start(ctx(d), &c, &mut ChaCha8Rng::seed_from_u64(1));
        let RadioAction::Transmit { frame, .. } = &plan.actions[0] else { panic!() };
        assert_eq!(frame.packet().kind, PacketKind::JoinAccept);
        assert_eq!(frame.packet().dest_id, NodeId(4));
    }

    #[test]
    fn join_without_beacons_keeps_listening() {
        let c = cfg(29);
        let mut n = NodeState::unjoined(NodeId(3), clock());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(n.join_procedure(0, &c, &mut rng), Err(JoinError::NoBeacons));
        assert_eq!(n.mode, Mode::Unjoined);
    }

    #[test]
    fn join_picks_strongest_and_backs_off() {
        let c = cfg(29);
        let mut n = NodeState::unjoined(NodeId(3), clock());
        for (sender, rssi, start) in [(1u8, -70.0, 0.5), (2, -55.0, 1.2)] {
            let meta = RxMeta { start, end: start + 0.1, sender_tick: 983, rssi_dbm: rssi, expect: Expect::Anything };
            n.handle_rx(&MacPacket::beacon(1, NodeId(sender), 0), &meta, &c);
        }
        let plan = n.join_procedure(0, &c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(plan.parent, NodeId(2));
        assert_eq!(n.mode, Mode::Joining);
        assert_eq!(plan.request.payload, vec![2]);
        let base = c.timing.t_offset + c.timing.t_guard / 2.0;
        assert!(c.join_backoffs.iter().any(|b| (plan.offset - base - b).abs() < 1e-12));
    }

    #[test]
    fn misses_widen_then_desynchronize() {
        let c = cfg(29);
        let mut child = synced_child(&c, 1, 0, 1);
        for expected in 1..c.guard.max_misses {
            let events = child.on_window_closed(Expect::ParentBeacon(NodeId(0)), &c);
            assert_eq!(events, vec![NodeEvent::BeaconMissed { parent: NodeId(0), misses: expected }]);
        }
        assert!(child.beacon_guard(&c) > c.guard.base_guard);
        let events = child.on_window_closed(Expect::ParentBeacon(NodeId(0)), &c);
        assert!(events.contains(&NodeEvent::Desynchronized));
        assert_eq!(child.mode, Mode::Desynchronized);
        assert!(child.listens_continuously());
    }
}
