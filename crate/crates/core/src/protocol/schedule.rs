//! Frame layout and slot anatomy.
//!
//! A frame of `N` slots is laid out as
//! `[M beacon][LoRaWAN][M uplink][M downlink][join][idle...]`. Triple `i`
//! groups beacon slot `i`, uplink slot `M+1+i` and downlink slot `2M+1+i`;
//! triple 0 belongs to the relay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::packet::{SlotTriple, ACK_BYTES, BEACON_BYTES, MAX_FRAME_BYTES};
use crate::phy::{time_on_air, PhyError, RadioParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("{slots} slots cannot host {max_nodes} nodes: need at least 3*M+2 = {needed}")]
    TooFewSlots {
        slots: u16,
        max_nodes: u16,
        needed: u32,
    },
    #[error("max_nodes must be at least 1")]
    NoNodes,
    #[error("ticks_per_slot must be positive")]
    EmptySlot,
    #[error("slot of {slot_s:.6} s cannot hold offset+guard+data+offset+ack = {needed_s:.6} s")]
    SlotTooShort { slot_s: f64, needed_s: f64 },
    #[error("slot timing values must be positive")]
    NonPositiveTiming,
    #[error(transparent)]
    Phy(#[from] PhyError),
}

/// What a slot index is reserved for, independent of any node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKind {
    Beacon(u16),
    LoRaWan,
    Uplink(u16),
    Downlink(u16),
    Join,
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSchedule {
    pub slots_per_frame: u16,
    pub ticks_per_slot: u32,
    pub max_nodes: u16,
    layout: Vec<SlotKind>,
}

impl FrameSchedule {
    pub fn kind(&self, slot: u16) -> SlotKind {
        self.layout
            .get(usize::from(slot))
            .copied()
            .unwrap_or(SlotKind::Idle)
    }

    pub fn layout(&self) -> &[SlotKind] {
        &self.layout
    }

    pub fn ticks_per_frame(&self) -> u64 {
        u64::from(self.slots_per_frame) * u64::from(self.ticks_per_slot)
    }

    pub fn triple(&self, index: u16) -> SlotTriple {
        let m = self.max_nodes;
        SlotTriple {
            beacon: index,
            uplink: m + 1 + index,
            downlink: 2 * m + 1 + index,
        }
    }

    pub fn lorawan_slot(&self) -> u16 {
        self.max_nodes
    }

    pub fn join_slot(&self) -> u16 {
        3 * self.max_nodes + 1
    }

    pub fn idle_slots(&self) -> usize {
        self.layout.iter().filter(|k| **k == SlotKind::Idle).count()
    }

    pub fn slot_seconds(&self, tick_rate_hz: u32) -> f64 {
        f64::from(self.ticks_per_slot) / f64::from(tick_rate_hz)
    }
}

pub fn build_schedule(
    max_nodes: u16,
    slots_per_frame: u16,
    ticks_per_slot: u32,
) -> Result<FrameSchedule, ScheduleError> {
    if max_nodes == 0 {
        return Err(ScheduleError::NoNodes);
    }
    if ticks_per_slot == 0 {
        return Err(ScheduleError::EmptySlot);
    }
    let needed = 3 * u32::from(max_nodes) + 2;
    if u32::from(slots_per_frame) < needed {
        return Err(ScheduleError::TooFewSlots {
            slots: slots_per_frame,
            max_nodes,
            needed,
        });
    }
    let m = max_nodes;
    let mut layout = Vec::with_capacity(usize::from(slots_per_frame));
    layout.extend((0..m).map(SlotKind::Beacon));
    layout.push(SlotKind::LoRaWan);
    layout.extend((0..m).map(SlotKind::Uplink));
    layout.extend((0..m).map(SlotKind::Downlink));
    layout.push(SlotKind::Join);
    layout.resize(usize::from(slots_per_frame), SlotKind::Idle);
    Ok(FrameSchedule {
        slots_per_frame,
        ticks_per_slot,
        max_nodes,
        layout,
    })
}

/// Frame duration `N * ticks_per_slot / tick_rate`.
pub fn frame_time(schedule: &FrameSchedule, tick_rate_hz: u32) -> f64 {
    schedule.ticks_per_frame() as f64 / f64::from(tick_rate_hz)
}

/// Sub-slot timing, in nominal seconds.
///
/// A data slot is `[offset][guard/2 | data | guard/2][offset][ack]`; a beacon
/// slot is `[offset][beacon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotTiming {
    pub t_offset: f64,
    pub t_guard: f64,
    pub t_data_max: f64,
    pub t_ack: f64,
    pub t_bcn: f64,
}

impl SlotTiming {
    /// Derives airtime-based fields from the radio settings.
    pub fn derive(radio: &RadioParams, t_offset: f64, t_guard: f64) -> Result<Self, ScheduleError> {
        Ok(Self {
            t_offset,
            t_guard,
            t_data_max: time_on_air(MAX_FRAME_BYTES, radio)?.as_secs(),
            t_ack: time_on_air(ACK_BYTES, radio)?.as_secs(),
            t_bcn: time_on_air(BEACON_BYTES, radio)?.as_secs(),
        })
    }

    pub fn exchange_len(&self) -> f64 {
        2.0 * self.t_offset + self.t_guard + self.t_data_max + self.t_ack
    }

    pub fn validate(&self, slot_seconds: f64) -> Result<(), ScheduleError> {
        let all = [self.t_offset, self.t_guard, self.t_data_max, self.t_ack, self.t_bcn];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(ScheduleError::NonPositiveTiming);
        }
        if self.exchange_len() > slot_seconds {
            return Err(ScheduleError::SlotTooShort {
                slot_s: slot_seconds,
                needed_s: self.exchange_len(),
            });
        }
        Ok(())
    }
}
