use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::phy::RadioState;
use crate::protocol::{
    Expect, MacConfig, MacPacket, Mode, NodeEvent, NodeId, NodeState, OnAir, PacketKind,
    RadioAction, RxMeta, SlotContext,
};
use crate::timebase::VirtualClock;

use super::channel::{deliver, Delivery, Transmission};
use super::scenario::{Link, Scenario, ScenarioError};
use super::trace::{
    AppRun, ClockSample, FinalState, PacketEvent, QueueSample, RadioInterval, SimulationTrace,
    TraceEventKind,
};

/// Interferers older than this many seconds cannot overlap a new frame.
const MAX_AIRTIME_LOOKBACK: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
enum Action {
    SlotStart { slot: u64 },
    TxStart { frame: OnAir, tick: u64 },
    TxEnd { tx: usize },
    WindowOpen { window: u64 },
    WindowDeadline { window: u64 },
}

impl Action {
    /// Tie-break at equal timestamps: frames end before windows open, slot
    /// timers fire before the transmissions they schedule, and deadlines come
    /// last so a frame starting on the closing tick is still caught.
    fn priority(&self) -> u8 {
        match self {
            Action::TxEnd { .. } => 0,
            Action::WindowOpen { .. } => 1,
            Action::SlotStart { .. } => 2,
            Action::TxStart { .. } => 3,
            Action::WindowDeadline { .. } => 4,
        }
    }
}

#[derive(Debug, Clone)]
struct Event {
    ns: u64,
    priority: u8,
    node: usize,
    seq: u64,
    time: f64,
    /// Timer generation; `None` survives resynchronisation.
    epoch: Option<u64>,
    action: Action,
}

impl Event {
    fn key(&self) -> (u64, u8, usize, u64) {
        (self.ns, self.priority, self.node, self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Debug, Clone, Copy)]
struct Window {
    id: u64,
    expect: Expect,
    channel: u8,
    deadline_passed: bool,
}

#[derive(Debug, Clone, Copy)]
struct Lock {
    tx: usize,
}

struct NodeRt {
    id: NodeId,
    state: NodeState,
    base_drift: f64,
    epoch: u64,
    transmitting: Option<usize>,
    locked: Option<Lock>,
    window: Option<Window>,
    pending: BTreeMap<u64, (Expect, u8)>,
    radio: RadioState,
    since: f64,
    last_interval: Option<usize>,
}

struct Sim<'a> {
    sc: &'a Scenario,
    cfg: MacConfig,
    links: BTreeMap<(NodeId, NodeId), Link>,
    nodes: Vec<NodeRt>,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    next_window: u64,
    rng: ChaCha8Rng,
    now: f64,
    end: f64,
    trace: SimulationTrace,
}

/// Runs a scenario to completion. Identical scenarios give identical traces.
pub fn run(scenario: &Scenario) -> Result<SimulationTrace, ScenarioError> {
    let cfg = scenario.validate()?;
    let mut sim = Sim::new(scenario, cfg)?;
    sim.run();
    Ok(sim.finish())
}

fn satisfies(expect: Expect, packet: &MacPacket) -> bool {
    match expect {
        Expect::ParentBeacon(p) => packet.kind == PacketKind::Beacon && packet.sender_id == p,
        Expect::Data(c) => {
            packet.sender_id == c && matches!(packet.kind, PacketKind::UpData | PacketKind::JoinRequest)
        }
        Expect::Ack { from, seq } => packet.kind == PacketKind::Ack && packet.sender_id == from && packet.seq == seq,
        Expect::Downlink(p) => packet.sender_id == p,
        Expect::JoinRequests | Expect::Anything => false,
    }
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario, cfg: MacConfig) -> Result<Self, ScenarioError> {
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        let rate = sc.schedule.tick_rate_hz;
        let tick = 1.0 / f64::from(rate);
        let mut nodes = Vec::with_capacity(sc.nodes.len());
        for spec in &sc.nodes {
            let state = if spec.id == sc.relay {
                let clock = VirtualClock::anchored(rate, spec.drift_ppm, 0, 0.0)
                    .map_err(|_| ScenarioError::Drift { node: spec.id, ppm: spec.drift_ppm })?;
                NodeState::relay(spec.id, clock, &cfg)
            } else {
                let phase = rng.gen_range(0.0..tick);
                let clock = VirtualClock::anchored(rate, spec.drift_ppm, 0, phase)
                    .map_err(|_| ScenarioError::Drift { node: spec.id, ppm: spec.drift_ppm })?;
                NodeState::unjoined(spec.id, clock)
            };
            nodes.push(NodeRt {
                id: spec.id,
                state,
                base_drift: spec.drift_ppm,
                epoch: 0,
                transmitting: None,
                locked: None,
                window: None,
                pending: BTreeMap::new(),
                radio: RadioState::Sleep,
                since: 0.0,
                last_interval: None,
            });
        }
        let relay_idx = nodes.iter().position(|n| n.id == sc.relay).ok_or(ScenarioError::MissingRelay(sc.relay))?;
        let end = nodes[relay_idx]
            .state
            .clock
            .instant_of((sc.frames * sc.ticks_per_frame()) as f64);
        let trace = SimulationTrace {
            nodes: nodes.iter().map(|n| n.id).collect(),
            relay: sc.relay,
            end,
            frame_seconds: sc.frame_seconds(),
            ticks_per_frame: sc.ticks_per_frame(),
            channels: sc.channels,
            ..SimulationTrace::default()
        };
        let mut sim = Sim {
            sc,
            cfg,
            links: sc.link_table(),
            nodes,
            queue: BinaryHeap::new(),
            seq: 0,
            next_window: 0,
            rng,
            now: 0.0,
            end,
            trace,
        };
        for i in 0..sim.nodes.len() {
            sim.sample_clock(i, false);
            sim.update_radio(i);
        }
        sim.schedule(relay_idx, 0.0, Some(0), Action::SlotStart { slot: 0 });
        Ok(sim)
    }

    fn schedule(&mut self, node: usize, time: f64, epoch: Option<u64>, action: Action) {
        let time = time.max(self.now);
        self.seq += 1;
        self.queue.push(Reverse(Event {
            ns: (time * 1e9).round() as u64,
            priority: action.priority(),
            node,
            seq: self.seq,
            time,
            epoch,
            action,
        }));
    }

    fn run(&mut self) {
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.time > self.end {
                break;
            }
            if ev.epoch.is_some_and(|e| e != self.nodes[ev.node].epoch) {
                continue;
            }
            self.now = ev.time;
            match ev.action {
                Action::SlotStart { slot } => self.on_slot_start(ev.node, slot),
                Action::TxStart { frame, tick } => self.on_tx_start(ev.node, frame, tick),
                Action::TxEnd { tx } => self.on_tx_end(tx),
                Action::WindowOpen { window } => self.on_window_open(ev.node, window),
                Action::WindowDeadline { window } => self.on_window_deadline(ev.node, window),
            }
        }
        self.now = self.end;
    }

    fn finish(mut self) -> SimulationTrace {
        for i in 0..self.nodes.len() {
            let state = self.nodes[i].radio;
            self.close_interval(i, state);
        }
        self.trace.radio.sort_by(|a, b| {
            a.node.cmp(&b.node).then(a.start.total_cmp(&b.start))
        });
        self.trace.final_states = self
            .nodes
            .iter()
            .map(|n| FinalState {
                node: n.id,
                mode: n.state.mode,
                parent: n.state.parent_id,
            })
            .collect();
        self.trace
    }

    fn rate(&self) -> f64 {
        f64::from(self.cfg.tick_rate_hz)
    }

    fn tps(&self) -> u64 {
        u64::from(self.cfg.schedule.ticks_per_slot)
    }

    fn channel_of_tick(&self, tick: u64) -> u8 {
        ((tick / self.cfg.schedule.ticks_per_frame()) % u64::from(self.sc.channels)) as u8
    }

    fn admission_open(&self, frame: u64) -> bool {
        self.sc.admission_frames.is_none_or(|a| frame < a)
    }

    fn radio_state(n: &NodeRt) -> RadioState {
        if n.transmitting.is_some() {
            RadioState::Transmit
        } else if n.locked.is_some() || n.window.is_some() || n.state.listens_continuously() {
            RadioState::Receive
        } else {
            RadioState::Sleep
        }
    }

    fn close_interval(&mut self, i: usize, state: RadioState) {
        let now = self.now;
        let n = &mut self.nodes[i];
        if now <= n.since {
            return;
        }
        match n.last_interval {
            Some(k) if self.trace.radio[k].state == state && self.trace.radio[k].end == n.since => {
                self.trace.radio[k].end = now;
            }
            _ => {
                n.last_interval = Some(self.trace.radio.len());
                self.trace.radio.push(RadioInterval {
                    node: n.id,
                    state,
                    start: n.since,
                    end: now,
                });
            }
        }
        n.since = now;
    }

    fn update_radio(&mut self, i: usize) {
        let next = Self::radio_state(&self.nodes[i]);
        let current = self.nodes[i].radio;
        if next != current {
            self.close_interval(i, current);
            let n = &mut self.nodes[i];
            n.radio = next;
            n.since = self.now;
        }
    }

    fn sample_clock(&mut self, i: usize, resync: bool) {
        let n = &self.nodes[i];
        self.trace.clocks.push(ClockSample {
            node: n.id,
            time: self.now,
            clock: n.state.clock,
            parent: n.state.parent_id,
            resync,
            synchronized: n.state.mode == Mode::Synchronized,
        });
    }

    /// Drops every timer of node `i` and, while anchored, restarts its slot
    /// timer from the current clock.
    fn bump_epoch(&mut self, i: usize, reschedule: bool) {
        let tps = self.tps();
        let n = &mut self.nodes[i];
        n.epoch += 1;
        n.window = None;
        n.pending.clear();
        if reschedule && n.state.anchored {
            let reading = n.state.clock.reading_at(self.now).max(0.0) as u64;
            let slot = reading / tps + 1;
            let at = n.state.clock.instant_of((slot * tps) as f64);
            let epoch = n.epoch;
            self.schedule(i, at, Some(epoch), Action::SlotStart { slot });
        }
    }

    fn add_window(&mut self, i: usize, open_tick: f64, close_tick: f64, expect: Expect, channel: u8) {
        let clock = self.nodes[i].state.clock;
        let id = self.next_window;
        self.next_window += 1;
        let epoch = self.nodes[i].epoch;
        self.nodes[i].pending.insert(id, (expect, channel));
        self.schedule(i, clock.instant_of(open_tick.max(0.0)), Some(epoch), Action::WindowOpen { window: id });
        self.schedule(i, clock.instant_of(close_tick), Some(epoch), Action::WindowDeadline { window: id });
    }

    fn record(&mut self, i: usize, events: Vec<NodeEvent>) {
        let node = self.nodes[i].id;
        for e in events {
            let mut ev = PacketEvent::new(self.now, node, TraceEventKind::Error);
            match e {
                NodeEvent::BeaconReceived { parent, case, offset } => {
                    ev.kind = TraceEventKind::BeaconRx;
                    ev.peer = Some(parent);
                    ev.packet = Some(PacketKind::Beacon);
                    ev.detail = format!("case={case:?} offset_us={:.3}", offset * 1e6);
                }
                NodeEvent::BeaconMissed { parent, misses } => {
                    ev.kind = TraceEventKind::BeaconMiss;
                    ev.peer = Some(parent);
                    ev.packet = Some(PacketKind::Beacon);
                    ev.detail = format!("misses={misses}");
                }
                NodeEvent::Desynchronized => ev.kind = TraceEventKind::Desync,
                NodeEvent::JoinStarted { parent } => {
                    ev.kind = TraceEventKind::JoinStart;
                    ev.peer = Some(parent);
                }
                NodeEvent::JoinTimedOut => ev.kind = TraceEventKind::JoinTimeout,
                NodeEvent::Joined { parent, slots } => {
                    ev.kind = TraceEventKind::Joined;
                    ev.peer = Some(parent);
                    ev.detail = format!("slots={}/{}/{}", slots.beacon, slots.uplink, slots.downlink);
                }
                NodeEvent::Admitted { node, slots } => {
                    ev.kind = TraceEventKind::Admitted;
                    ev.peer = Some(node);
                    ev.detail = format!("slots={}/{}/{}", slots.beacon, slots.uplink, slots.downlink);
                }
                NodeEvent::JoinRejected { node } => {
                    ev.kind = TraceEventKind::JoinRejected;
                    ev.peer = Some(node);
                }
                NodeEvent::Dropped { kind, origin } => {
                    ev.kind = TraceEventKind::Drop;
                    ev.packet = Some(kind);
                    ev.origin = Some(origin);
                    ev.detail = "queue_full".into();
                }
                NodeEvent::Delivered { origin } => {
                    ev.kind = TraceEventKind::Deliver;
                    ev.packet = Some(PacketKind::DownData);
                    ev.origin = Some(origin);
                }
                NodeEvent::ToGateway { origin } => {
                    ev.kind = TraceEventKind::Gateway;
                    ev.origin = Some(origin);
                }
                NodeEvent::Acked { .. } | NodeEvent::AppSample => continue,
                NodeEvent::ProtocolError(msg) => ev.detail = msg,
            }
            self.trace.events.push(ev);
        }
    }

    fn packet_event(&mut self, node: NodeId, kind: TraceEventKind, tx: &Transmission, peer: NodeId, detail: &str) {
        let p = tx.frame.packet();
        self.trace.events.push(PacketEvent {
            time: self.now,
            node,
            kind,
            packet: Some(p.kind),
            peer: Some(peer),
            origin: Some(p.origin_id),
            seq: Some(p.seq),
            detail: detail.to_string(),
        });
    }

    fn on_frame_start(&mut self, i: usize, slot: u64, frame: u64) {
        let sc = self.sc;
        if sc.drift_jitter_ppm > 0.0 {
            let j = sc.drift_jitter_ppm;
            let drift = self.nodes[i].base_drift + self.rng.gen_range(-j..=j);
            let tick = slot * self.tps();
            let n = &mut self.nodes[i];
            n.state.clock = n.state.clock.with_drift_from(tick, drift);
            self.sample_clock(i, false);
        }
        let n = &self.nodes[i];
        self.trace.queues.push(QueueSample {
            node: n.id,
            frame,
            time: self.now,
            uplink: n.state.uplink_queue.len(),
            downlink: n.state.downlink_queue.len(),
        });
        let k = u64::from(sc.k);
        if n.state.mode == Mode::Synchronized && frame % k == u64::from(n.id.0) % k {
            self.trace.app_runs.push(AppRun { node: n.id, time: self.now });
            let payload = sc.uplink_enabled.then_some(sc.app_payload_bytes);
            let events = self.nodes[i].state.generate_sample(payload, &self.cfg);
            self.record(i, events);
        }
        let period = sc.downlink_period_frames;
        if self.nodes[i].state.is_relay && period > 0 && frame > 0 && frame.is_multiple_of(period) {
            let dests: Vec<NodeId> = self.nodes[i].state.known_destinations().collect();
            for d in dests {
                let events = self.nodes[i]
                    .state
                    .enqueue_downlink(d, vec![0; sc.app_payload_bytes], &self.cfg);
                self.record(i, events);
            }
        }
    }

    fn on_slot_start(&mut self, i: usize, slot_number: u64) {
        if !self.nodes[i].state.anchored {
            return;
        }
        let n_slots = u64::from(self.cfg.schedule.slots_per_frame);
        let frame = slot_number / n_slots;
        let slot = (slot_number % n_slots) as u16;
        if slot == 0 {
            self.on_frame_start(i, slot_number, frame);
        }
        let ctx = SlotContext {
            frame,
            slot,
            admission_open: self.admission_open(frame),
            downlink_listen: self.sc.downlink_period_frames > 0,
        };
        let before = self.nodes[i].state.clock;
        let plan = self.nodes[i].state.on_slot_start(ctx, &self.cfg, &mut self.rng);
        if self.nodes[i].state.clock != before {
            self.sample_clock(i, false);
        }
        self.record(i, plan.events);

        let rate = self.rate();
        let tps = self.tps();
        let slot_tick = slot_number * tps;
        let channel = self.channel_of_tick(slot_tick);
        let clock = self.nodes[i].state.clock;
        let epoch = self.nodes[i].epoch;
        for action in plan.actions {
            match action {
                RadioAction::Transmit { offset, frame } => {
                    let tick = slot_tick + (offset * rate).round() as u64;
                    self.schedule(i, clock.instant_of(tick as f64), Some(epoch), Action::TxStart { frame, tick });
                }
                RadioAction::Listen { open, close, expect } => {
                    let open_tick = slot_tick as f64 + (open * rate).floor() - 1.0;
                    let close_tick = slot_tick as f64 + (close * rate).ceil() + 1.0;
                    self.add_window(i, open_tick, close_tick, expect, channel);
                }
            }
        }
        let next = slot_number + 1;
        self.schedule(i, clock.instant_of((next * tps) as f64), Some(epoch), Action::SlotStart { slot: next });
        self.update_radio(i);
    }

    fn can_lock(&self, j: usize, channel: u8) -> bool {
        let n = &self.nodes[j];
        if n.transmitting.is_some() || n.locked.is_some() {
            return false;
        }
        match n.window {
            Some(w) => w.channel == channel,
            None => n.state.listens_continuously(),
        }
    }

    fn on_tx_start(&mut self, i: usize, frame: OnAir, tick: u64) {
        let node = self.nodes[i].id;
        if self.nodes[i].transmitting.is_some() {
            let mut ev = PacketEvent::new(self.now, node, TraceEventKind::TxConflict);
            ev.packet = Some(frame.packet().kind);
            self.trace.events.push(ev);
            return;
        }
        if let Some(lock) = self.nodes[i].locked.take() {
            let lost = self.trace.transmissions[lock.tx].clone();
            self.packet_event(node, TraceEventKind::Collision, &lost, lost.sender, "half_duplex");
            self.after_reception(i, None);
        }
        let airtime = match frame.airtime(&self.cfg.radio) {
            Ok(a) => a.as_secs(),
            Err(e) => {
                let mut ev = PacketEvent::new(self.now, node, TraceEventKind::Error);
                ev.detail = e.to_string();
                self.trace.events.push(ev);
                return;
            }
        };
        let tx = Transmission {
            sender: node,
            channel: self.channel_of_tick(tick),
            start: self.now,
            end: self.now + airtime,
            sender_tick: tick,
            frame,
        };
        let idx = self.trace.transmissions.len();
        let peer = tx.frame.packet().dest_id;
        self.packet_event(node, TraceEventKind::Tx, &tx, peer, if tx.frame.is_lorawan() { "lorawan" } else { "" });
        let end = tx.end;
        let lorawan = tx.frame.is_lorawan();
        let channel = tx.channel;
        self.trace.transmissions.push(tx);
        self.nodes[i].transmitting = Some(idx);
        self.schedule(i, end, None, Action::TxEnd { tx: idx });
        self.update_radio(i);
        if lorawan {
            return;
        }
        for j in 0..self.nodes.len() {
            if j != i && self.links.contains_key(&(node, self.nodes[j].id)) && self.can_lock(j, channel) {
                self.nodes[j].locked = Some(Lock { tx: idx });
                self.update_radio(j);
            }
        }
    }

    fn on_tx_end(&mut self, txi: usize) {
        let tx = self.trace.transmissions[txi].clone();
        let Some(i) = self.nodes.iter().position(|n| n.id == tx.sender) else { return };
        if self.nodes[i].transmitting == Some(txi) {
            self.nodes[i].transmitting = None;
        }
        let (follow, events) = self.nodes[i].state.on_tx_done(&tx.frame, &self.cfg);
        self.record(i, events);
        if let Some(RadioAction::Listen { open, close, expect }) = follow {
            let rate = self.rate();
            let edge = self.nodes[i].state.clock.next_edge(self.now).0 as f64;
            let open_tick = edge + (open * rate).floor() - 1.0;
            let close_tick = edge + (close * rate).ceil() + 1.0;
            self.add_window(i, open_tick, close_tick, expect, tx.channel);
        }
        self.update_radio(i);
        for j in 0..self.nodes.len() {
            if self.nodes[j].locked.is_some_and(|l| l.tx == txi) {
                self.complete_rx(j, txi);
            }
        }
    }

    fn complete_rx(&mut self, j: usize, txi: usize) {
        self.nodes[j].locked = None;
        let tx = self.trace.transmissions[txi].clone();
        let me = self.nodes[j].id;
        let Some(link) = self.links.get(&(tx.sender, me)).copied() else { return };
        let cutoff = tx.start - MAX_AIRTIME_LOOKBACK;
        let links = &self.links;
        let interferers = self
            .trace
            .transmissions
            .iter()
            .enumerate()
            .rev()
            .take_while(|(_, u)| u.start >= cutoff)
            .filter(|(k, u)| *k != txi && !u.frame.is_lorawan() && u.sender != me && links.contains_key(&(u.sender, me)))
            .map(|(_, u)| u);
        let outcome = deliver(&tx, &link, true, interferers, &mut self.rng);
        if outcome != Delivery::Received {
            let kind = if outcome == Delivery::Collision {
                TraceEventKind::Collision
            } else {
                TraceEventKind::PacketError
            };
            self.packet_event(me, kind, &tx, tx.sender, outcome.as_str());
            self.after_reception(j, None);
            return;
        }
        self.packet_event(me, TraceEventKind::Rx, &tx, tx.sender, "");
        let packet = tx.frame.packet();
        let expect = self.nodes[j].window.map_or(Expect::Anything, |w| w.expect);
        let meta = RxMeta {
            start: tx.start,
            end: tx.end,
            sender_tick: tx.sender_tick,
            rssi_dbm: link.rssi_dbm,
            expect,
        };
        let acked_before = matches!(expect, Expect::Ack { .. });
        let out = self.nodes[j].state.handle_rx(packet, &meta, &self.cfg);
        let acked = acked_before && out.events.iter().any(|e| matches!(e, NodeEvent::Acked { .. }));
        let resynced_on_parent = out.events.iter().any(|e| matches!(e, NodeEvent::BeaconReceived { .. }));
        let joined = out.events.iter().any(|e| matches!(e, NodeEvent::Joined { .. }));
        self.record(j, out.events);

        let rate = self.rate();
        for r in out.responses {
            let clock = self.nodes[j].state.clock;
            let tick = clock.next_edge(self.now).0 + (r.delay * rate).round() as u64;
            self.schedule(j, clock.instant_of(tick as f64), None, Action::TxStart { frame: OnAir::Mac(r.packet), tick });
        }
        if out.resynced {
            self.sample_clock(j, resynced_on_parent);
            self.bump_epoch(j, true);
        } else if joined {
            self.sample_clock(j, false);
        }
        let satisfied = acked || satisfies(expect, packet);
        self.after_reception(j, Some(satisfied));
    }

    /// Window bookkeeping once a locked reception is over. `satisfied` is
    /// `None` when the frame was lost.
    fn after_reception(&mut self, j: usize, satisfied: Option<bool>) {
        if let Some(w) = self.nodes[j].window {
            if satisfied == Some(true) {
                self.nodes[j].window = None;
            } else if w.deadline_passed {
                self.nodes[j].window = None;
                self.close_window(j, w.expect);
            }
        }
        self.update_radio(j);
    }

    fn close_window(&mut self, j: usize, expect: Expect) {
        let events = self.nodes[j].state.on_window_closed(expect, &self.cfg);
        let desync = events.contains(&NodeEvent::Desynchronized);
        self.record(j, events);
        if desync {
            self.sample_clock(j, false);
            self.bump_epoch(j, false);
        }
    }

    fn on_window_open(&mut self, j: usize, id: u64) {
        let Some((expect, channel)) = self.nodes[j].pending.remove(&id) else { return };
        if let Some(old) = self.nodes[j].window.take() {
            self.close_window(j, old.expect);
        }
        self.nodes[j].window = Some(Window {
            id,
            expect,
            channel,
            deadline_passed: false,
        });
        self.update_radio(j);
    }

    fn on_window_deadline(&mut self, j: usize, id: u64) {
        let Some(w) = self.nodes[j].window.filter(|w| w.id == id) else { return };
        if self.nodes[j].locked.is_some() {
            self.nodes[j].window = Some(Window {
                deadline_passed: true,
                ..w
            });
            return;
        }
        self.nodes[j].window = None;
        self.close_window(j, w.expect);
        self.update_radio(j);
    }
}
