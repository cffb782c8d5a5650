//! On-air layout of the multi-hop MAC frames.
//!
//! Full frames carry a 5-byte header `[network_id, sender, dest, origin,
//! kind<<5 | seq]`. Beacons shrink to `[network_id, sender, seq]` and
//! acknowledgments to `[sender, seq]`; both are recognised by length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::NodeId;

pub const HEADER_BYTES: usize = 5;
pub const BEACON_BYTES: usize = 3;
pub const ACK_BYTES: usize = 2;
/// Largest PHY payload a slot can carry.
pub const MAX_FRAME_BYTES: usize = 64;
pub const MAX_APP_PAYLOAD: usize = MAX_FRAME_BYTES - HEADER_BYTES;
/// Header sequence numbers are five bits wide.
pub const SEQ_MODULUS: u8 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PacketKind {
    Beacon,
    JoinRequest,
    JoinAccept,
    UpData,
    DownData,
    Ack,
}

impl PacketKind {
    fn code(self) -> u8 {
        match self {
            PacketKind::Beacon => 0,
            PacketKind::JoinRequest => 1,
            PacketKind::JoinAccept => 2,
            PacketKind::UpData => 3,
            PacketKind::DownData => 4,
            PacketKind::Ack => 5,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => PacketKind::Beacon,
            1 => PacketKind::JoinRequest,
            2 => PacketKind::JoinAccept,
            3 => PacketKind::UpData,
            4 => PacketKind::DownData,
            5 => PacketKind::Ack,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Beacon => "beacon",
            PacketKind::JoinRequest => "join_request",
            PacketKind::JoinAccept => "join_accept",
            PacketKind::UpData => "up_data",
            PacketKind::DownData => "down_data",
            PacketKind::Ack => "ack",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PacketError {
    #[error("frame of {0} bytes is too short")]
    Truncated(usize),
    #[error("unknown packet kind code {0}")]
    UnknownKind(u8),
    #[error("{len}-byte frame exceeds the {MAX_FRAME_BYTES}-byte slot limit")]
    TooLarge { len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacPacket {
    pub kind: PacketKind,
    pub network_id: u8,
    pub sender_id: NodeId,
    pub dest_id: NodeId,
    pub origin_id: NodeId,
    pub seq: u8,
    pub payload: Vec<u8>,
}

impl MacPacket {
    pub fn beacon(network_id: u8, sender: NodeId, seq: u8) -> Self {
        Self {
            kind: PacketKind::Beacon,
            network_id,
            sender_id: sender,
            dest_id: NodeId::BROADCAST,
            origin_id: sender,
            seq,
            payload: Vec::new(),
        }
    }

    pub fn ack(network_id: u8, sender: NodeId, dest: NodeId, seq: u8) -> Self {
        Self {
            kind: PacketKind::Ack,
            network_id,
            sender_id: sender,
            dest_id: dest,
            origin_id: sender,
            seq,
            payload: Vec::new(),
        }
    }

    /// Bytes this packet occupies on air.
    pub fn on_air_len(&self) -> usize {
        match self.kind {
            PacketKind::Beacon => BEACON_BYTES,
            PacketKind::Ack => ACK_BYTES,
            _ => HEADER_BYTES + self.payload.len(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, PacketError> {
        let len = self.on_air_len();
        if len > MAX_FRAME_BYTES {
            return Err(PacketError::TooLarge { len });
        }
        let mut out = Vec::with_capacity(len);
        match self.kind {
            PacketKind::Beacon => out.extend([self.network_id, self.sender_id.0, self.seq]),
            PacketKind::Ack => out.extend([self.sender_id.0, self.seq]),
            kind => {
                out.extend([
                    self.network_id,
                    self.sender_id.0,
                    self.dest_id.0,
                    self.origin_id.0,
                    (kind.code() << 5) | (self.seq % SEQ_MODULUS),
                ]);
                out.extend_from_slice(&self.payload);
            }
        }
        Ok(out)
    }

    /// Decodes a frame. Acks carry no network id or destination, so those
    /// fields come back as `0` and [`NodeId::BROADCAST`].
    pub fn decode(bytes: &[u8]) -> Result<Self, PacketError> {
        match bytes.len() {
            ACK_BYTES => Ok(MacPacket {
                kind: PacketKind::Ack,
                network_id: 0,
                sender_id: NodeId(bytes[0]),
                dest_id: NodeId::BROADCAST,
                origin_id: NodeId(bytes[0]),
                seq: bytes[1],
                payload: Vec::new(),
            }),
            BEACON_BYTES => Ok(MacPacket::beacon(bytes[0], NodeId(bytes[1]), bytes[2])),
            len if len < HEADER_BYTES => Err(PacketError::Truncated(len)),
            len if len > MAX_FRAME_BYTES => Err(PacketError::TooLarge { len }),
            _ => {
                let code = bytes[4] >> 5;
                let kind = PacketKind::from_code(code).ok_or(PacketError::UnknownKind(code))?;
                Ok(MacPacket {
                    kind,
                    network_id: bytes[0],
                    sender_id: NodeId(bytes[1]),
                    dest_id: NodeId(bytes[2]),
                    origin_id: NodeId(bytes[3]),
                    seq: bytes[4] & (SEQ_MODULUS - 1),
                    payload: bytes[HEADER_BYTES..].to_vec(),
                })
            }
        }
    }
}

/// Beacon, uplink and downlink slot indices owned by one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotTriple {
    pub beacon: u16,
    pub uplink: u16,
    pub downlink: u16,
}

/// JoinAccept payload: `[beacon, uplink, downlink, parent]`.
pub fn encode_join_accept(slots: SlotTriple, parent: NodeId) -> Vec<u8> {
    vec![slots.beacon as u8, slots.uplink as u8, slots.downlink as u8, parent.0]
}

pub fn decode_join_accept(payload: &[u8]) -> Option<(SlotTriple, NodeId)> {
    match payload {
        [b, u, d, p] => Some((
            SlotTriple {
                beacon: u16::from(*b),
                uplink: u16::from(*u),
                downlink: u16::from(*d),
            },
            NodeId(*p),
        )),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_sizes() {
        assert_eq!(MacPacket::beacon(1, NodeId(0), 7).encode().unwrap(), vec![1, 0, 7]);
        assert_eq!(MacPacket::ack(1, NodeId(2), NodeId(0), 9).encode().unwrap(), vec![2, 9]);
        let data = MacPacket {
            kind: PacketKind::UpData,
            network_id: 1,
            sender_id: NodeId(3),
            dest_id: NodeId(0),
            origin_id: NodeId(3),
            seq: 4,
            payload: vec![0; 24],
        };
        assert_eq!(data.on_air_len(), 29);
        assert_eq!(data.encode().unwrap()[4], (3 << 5) | 4);
    }

    #[test]
    fn oversize_frame_rejected() {
        let data = MacPacket {
            kind: PacketKind::UpData,
            network_id: 1,
            sender_id: NodeId(3),
            dest_id: NodeId(0),
            origin_id: NodeId(3),
            seq: 0,
            payload: vec![0; MAX_APP_PAYLOAD + 1],
        };
        assert_eq!(data.encode(), Err(PacketError::TooLarge { len: 65 }));
    }

    #[test]
    fn unknown_kind_is_reported() {
        assert_eq!(MacPacket::decode(&[1, 2, 3, 4, 7 << 5]), Err(PacketError::UnknownKind(7)));
        assert_eq!(MacPacket::decode(&[1]), Err(PacketError::Truncated(1)));
    }

    #[test]
    fn join_accept_payload() {
        let slots = SlotTriple { beacon: 3, uplink: 34, downlink: 63 };
        let bytes = encode_join_accept(slots, NodeId(0));
        assert_eq!(decode_join_accept(&bytes), Some((slots, NodeId(0))));
        assert_eq!(decode_join_accept(&bytes[..3]), None);
    }

    fn header_kind() -> impl Strategy<Value = PacketKind> {
        prop::sample::select(vec![
            PacketKind::JoinRequest,
            PacketKind::JoinAccept,
            PacketKind::UpData,
            PacketKind::DownData,
        ])
    }

    proptest! {
        #[test]
        fn header_frames_round_trip(
            kind in header_kind(),
            net in any::<u8>(), s in any::<u8>(), d in any::<u8>(), o in any::<u8>(),
            seq in 0u8..SEQ_MODULUS,
            payload in prop::collection::vec(any::<u8>(), 0..=MAX_APP_PAYLOAD),
        ) {
            let p = MacPacket { kind, network_id: net, sender_id: NodeId(s), dest_id: NodeId(d), origin_id: NodeId(o), seq, payload };
            let bytes = p.encode().unwrap();
            prop_assert_eq!(bytes.len(), p.on_air_len());
            prop_assert!(bytes.len() <= MAX_FRAME_BYTES);
            prop_assert_eq!(MacPacket::decode(&bytes).unwrap(), p);
        }
    }
}
