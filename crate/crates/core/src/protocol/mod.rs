//! The multi-hop TDMA MAC: frame layout, packet formats and the per-node
//! state machine. Everything here is a transition function over plain data;
//! the simulator owns the states and feeds them events in time order.

mod node;
pub mod packet;
pub mod schedule;

use serde::{Deserialize, Serialize};

pub use node::{
    choose_parent, Expect, HeardBeacon, JoinError, JoinPlan, MacConfig, Mode, NodeEvent,
    NodeState, OnAir, RadioAction, Response, RxMeta, RxOutcome, SlotAllocator, SlotContext,
    SlotPlan, SlotRole,
};
pub use packet::{MacPacket, PacketError, PacketKind, SlotTriple};
pub use schedule::{build_schedule, frame_time, FrameSchedule, ScheduleError, SlotKind, SlotTiming};

/// One-byte node address. Node ids double as the `SenderID` field.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u8);

impl NodeId {
    pub const BROADCAST: NodeId = NodeId(0xFF);

    pub fn index(self) -> usize {
        usize::from(self.0)
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Display::fmt(&self.0, f)
    }
}
