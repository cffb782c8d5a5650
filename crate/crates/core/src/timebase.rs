//! Drifting per-node oscillators and the beacon guard-time bound.
//!
//! A [`VirtualClock`] maps its local tick counter onto global time with a
//! linear model anchored at the last resynchronisation. Tick edges sit at
//! `anchor_global + j * tick_duration`; resynchronising renumbers an existing
//! edge and never shifts the oscillator phase.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nominal crystal frequency of the reference hardware.
pub const DEFAULT_TICK_RATE_HZ: u32 = 32_768;

/// Sanity cap on oscillator error.
pub const MAX_DRIFT_PPM: f64 = 500.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClockError {
    #[error("tick {tick} precedes the clock anchor at tick {anchor}")]
    BeforeAnchor { tick: u64, anchor: u64 },
    #[error("drift of {0} ppm exceeds the {MAX_DRIFT_PPM} ppm cap")]
    DriftOutOfRange(f64),
    #[error("tick rate must be positive")]
    TickRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualClock {
    pub tick_rate_hz: u32,
    pub drift_ppm: f64,
    /// Tick number of the anchoring edge.
    pub tick_counter: u64,
    /// Global time (seconds) of the anchoring edge.
    pub epoch_global: f64,
}

impl VirtualClock {
    pub fn new(tick_rate_hz: u32, drift_ppm: f64) -> Result<Self, ClockError> {
        Self::anchored(tick_rate_hz, drift_ppm, 0, 0.0)
    }

    pub fn anchored(
        tick_rate_hz: u32,
        drift_ppm: f64,
        tick_counter: u64,
        epoch_global: f64,
    ) -> Result<Self, ClockError> {
        if tick_rate_hz == 0 {
            return Err(ClockError::TickRate);
        }
        if !drift_ppm.is_finite() || drift_ppm.abs() > MAX_DRIFT_PPM {
            return Err(ClockError::DriftOutOfRange(drift_ppm));
        }
        Ok(Self {
            tick_rate_hz,
            drift_ppm,
            tick_counter,
            epoch_global,
        })
    }

    /// Nominal tick length, ignoring drift.
    pub fn nominal_tick(&self) -> f64 {
        1.0 / f64::from(self.tick_rate_hz)
    }

    /// Global seconds spanned by one local tick.
    pub fn local_tick_duration(&self) -> f64 {
        self.nominal_tick() * (1.0 + self.drift_ppm * 1e-6)
    }

    /// Global instant of local tick `tick`.
    pub fn ticks_to_global(&self, tick: u64) -> Result<f64, ClockError> {
        if tick < self.tick_counter {
            return Err(ClockError::BeforeAnchor {
                tick,
                anchor: self.tick_counter,
            });
        }
        Ok(self.instant_of(tick as f64))
    }

    /// Linear extrapolation of a (possibly fractional or pre-anchor) tick.
    pub fn instant_of(&self, tick: f64) -> f64 {
        self.epoch_global + (tick - self.tick_counter as f64) * self.local_tick_duration()
    }

    /// Fractional local tick reading at global time `t`.
    pub fn reading_at(&self, t: f64) -> f64 {
        self.tick_counter as f64 + (t - self.epoch_global) / self.local_tick_duration()
    }

    /// First tick edge at or after global time `t`, as `(tick, instant)`.
    pub fn next_edge(&self, t: f64) -> (u64, f64) {
        let steps = ((t - self.epoch_global) / self.local_tick_duration() - 1e-9).ceil();
        let tick = (self.tick_counter as f64 + steps).max(0.0) as u64;
        (tick, self.instant_of(tick as f64))
    }

    /// Re-anchors the clock on a beacon whose first symbol reached the node at
    /// `beacon_arrival_global` and which the sender emitted at its tick
    /// `expected_local_tick`. The counter is latched on the first local edge
    /// at or after arrival, so the residual offset is below one tick.
    pub fn resync(&self, beacon_arrival_global: f64, expected_local_tick: u64) -> VirtualClock {
        let (_, edge) = self.next_edge(beacon_arrival_global);
        VirtualClock {
            tick_counter: expected_local_tick,
            epoch_global: edge,
            ..*self
        }
    }

    /// Changes the oscillator rate from `tick` onward without a phase jump.
    pub fn with_drift_from(&self, tick: u64, drift_ppm: f64) -> VirtualClock {
        let clamped = drift_ppm.clamp(-MAX_DRIFT_PPM, MAX_DRIFT_PPM);
        VirtualClock {
            drift_ppm: clamped,
            tick_counter: tick,
            epoch_global: self.instant_of(tick as f64),
            ..*self
        }
    }
}

/// Reception-window widening parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardConfig {
    pub base_guard: f64,
    /// Multiplier applied per consecutive beacon miss.
    pub widen_factor: f64,
    /// Consecutive misses tolerated before the node is declared desynchronised.
    pub max_misses: u32,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self {
            base_guard: 0.010,
            widen_factor: 2.0,
            max_misses: 4,
        }
    }
}

impl GuardConfig {
    /// Guard in effect after `misses` consecutive beacon misses, never wider than `cap`.
    pub fn effective_guard(&self, misses: u32, cap: f64) -> f64 {
        let widened = self.base_guard * self.widen_factor.powi(misses as i32);
        widened.min(cap).max(self.base_guard.min(cap))
    }
}

/// Smallest guard window that absorbs a relative drift of
/// `relative_drift_ppm` accumulated over one frame: `2 * D_R * T_F`.
pub fn min_guard(relative_drift_ppm: f64, frame_time: f64) -> f64 {
    2.0 * relative_drift_ppm * 1e-6 * frame_time
}

/// Where a parent's beacon landed relative to the child's reception window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeaconCase {
    /// On time, within one tick.
    A,
    /// Later than expected but inside the window.
    B,
    /// Before the window opened.
    C,
    /// Earlier than expected but inside the window.
    D,
    /// After the window closed.
    E,
}

impl BeaconCase {
    /// `offset` is beacon start minus the child's expected start. `half_window`
    /// bounds the admissible offset on either side.
    pub fn classify(offset: f64, half_window: f64, tick: f64) -> Self {
        if offset.abs() <= tick {
            BeaconCase::A
        } else if offset > half_window {
            BeaconCase::E
        } else if offset < -half_window {
            BeaconCase::C
        } else if offset > 0.0 {
            BeaconCase::B
        } else {
            BeaconCase::D
        }
    }

    pub fn is_received(self) -> bool {
        matches!(self, BeaconCase::A | BeaconCase::B | BeaconCase::D)
    }
}
