//! LoRa time-on-air and radio power states.
//!
//! Airtime follows the Semtech SX127x datasheet formula. Durations are kept as
//! real-valued seconds; the simulator converts them to integer nanoseconds with
//! [`Airtime::as_nanos`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest PHY payload a LoRa frame can carry.
pub const MAX_PHY_PAYLOAD: usize = 255;

/// Bytes the LoRaWAN stack adds on top of the application payload (MHDR,
/// FHDR, FPort and MIC).
pub const LORAWAN_OVERHEAD_BYTES: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("spreading factor {0} outside 7..=12")]
    SpreadingFactor(u8),
    #[error("bandwidth must be positive")]
    Bandwidth,
    #[error("coding rate denominator {0} outside 5..=8")]
    CodingRate(u8),
    #[error("preamble must be at least one symbol")]
    Preamble,
    #[error("payload of {len} bytes exceeds the {max}-byte LoRa limit")]
    PayloadTooLarge { len: usize, max: usize },
}

/// Modulation settings that determine airtime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    pub spreading_factor: u8,
    pub bandwidth_hz: u32,
    /// Denominator `x` of the 4/x coding rate.
    pub coding_rate_denominator: u8,
    pub preamble_symbols: u16,
    pub explicit_header: bool,
    pub crc_on: bool,
    pub low_data_rate_opt: bool,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            spreading_factor: 9,
            bandwidth_hz: 125_000,
            coding_rate_denominator: 5,
            preamble_symbols: 8,
            explicit_header: true,
            crc_on: true,
            low_data_rate_opt: false,
        }
    }
}

impl RadioParams {
    pub fn with_sf(spreading_factor: u8) -> Self {
        Self {
            spreading_factor,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PhyError> {
        if !(7..=12).contains(&self.spreading_factor) {
            return Err(PhyError::SpreadingFactor(self.spreading_factor));
        }
        if self.bandwidth_hz == 0 {
            return Err(PhyError::Bandwidth);
        }
        if !(5..=8).contains(&self.coding_rate_denominator) {
            return Err(PhyError::CodingRate(self.coding_rate_denominator));
        }
        if self.preamble_symbols == 0 {
            return Err(PhyError::Preamble);
        }
        Ok(())
    }
}

/// Radio power state of a node. Exactly one holds at any instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RadioState {
    Sleep,
    Receive,
    Transmit,
}

impl RadioState {
    pub fn as_str(self) -> &'static str {
        match self {
            RadioState::Sleep => "sleep",
            RadioState::Receive => "rx",
            RadioState::Transmit => "tx",
        }
    }
}

impl std::fmt::Display for RadioState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A duration on air, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Airtime(f64);

impl Airtime {
    pub fn from_secs(secs: f64) -> Self {
        debug_assert!(secs > 0.0, "airtime must be positive");
        Airtime(secs)
    }

    pub fn as_secs(self) -> f64 {
        self.0
    }

    pub fn as_millis(self) -> f64 {
        self.0 * 1e3
    }

    /// Rounded to the nearest nanosecond.
    pub fn as_nanos(self) -> u64 {
        (self.0 * 1e9).round() as u64
    }
}

impl std::fmt::Display for Airtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ms", self.as_millis())
    }
}

/// Symbol period `2^SF / BW`.
pub fn symbol_time(params: &RadioParams) -> Airtime {
    Airtime((1u64 << params.spreading_factor) as f64 / params.bandwidth_hz as f64)
}

/// Number of payload symbols (including the 8 fixed header symbols).
fn payload_symbols(payload_bytes: usize, params: &RadioParams) -> u64 {
    let sf = i64::from(params.spreading_factor);
    let ih = i64::from(!params.explicit_header);
    let crc = i64::from(params.crc_on);
    let de = i64::from(params.low_data_rate_opt);
    let numerator = 8 * payload_bytes as i64 - 4 * sf + 28 + 16 * crc - 20 * ih;
    let denominator = 4 * (sf - 2 * de);
    // ceil for positive numerators, clamped at zero otherwise
    let blocks = if numerator > 0 {
        (numerator + denominator - 1) / denominator
    } else {
        0
    };
    8 + (blocks * i64::from(params.coding_rate_denominator)) as u64
}

/// Time on air of a LoRa frame carrying `payload_bytes` of PHY payload.
pub fn time_on_air(payload_bytes: usize, params: &RadioParams) -> Result<Airtime, PhyError> {
    params.validate()?;
    if payload_bytes > MAX_PHY_PAYLOAD {
        return Err(PhyError::PayloadTooLarge {
            len: payload_bytes,
            max: MAX_PHY_PAYLOAD,
        });
    }
    let preamble = f64::from(params.preamble_symbols) + 4.25;
    let symbols = preamble + payload_symbols(payload_bytes, params) as f64;
    Ok(Airtime(symbols * symbol_time(params).as_secs()))
}

/// Time on air of a LoRaWAN uplink carrying `app_payload_bytes` of application data.
pub fn lorawan_time_on_air(
    app_payload_bytes: usize,
    params: &RadioParams,
) -> Result<Airtime, PhyError> {
    time_on_air(app_payload_bytes + LORAWAN_OVERHEAD_BYTES, params)
}
