//! Closed-form dimensioning: application period, mean power, capacity and
//! duty cycle as functions of the frame shape.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Regulatory duty-cycle ceiling of the EU sub-GHz bands.
pub const DEFAULT_DUTY_LIMIT: f64 = 0.01;

/// Relative tolerance on `floor(T_app / (n * T_SL))` so that a target that is
/// the exact product of a frame shape is not rounded down by float noise.
const FLOOR_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("capacity: n > k ({n} nodes, k = {k})")]
    Capacity { n: u32, k: u32 },
    #[error("duty cycle {duty:.4}% of node with m_i = {m_i} exceeds the {limit:.4}% limit")]
    DutyCycle { m_i: u32, duty: f64, limit: f64 },
    #[error("no frame shape with k >= n fits T_app = {t_app:.3} s for {n} nodes with N <= {max_n}")]
    NoFrameShape { t_app: f64, n: u32, max_n: u32 },
    #[error("invalid power profile: {0}")]
    Profile(&'static str),
}

/// Device power draw in watts, per radio state and for one application run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerProfile {
    pub p_sleep: f64,
    pub p_rx: f64,
    pub p_tx: f64,
    pub p_app: f64,
    /// Duration of one application run, seconds.
    pub tau_app: f64,
}

impl Default for PowerProfile {
    fn default() -> Self {
        Self {
            p_sleep: 0.01e-3,
            p_rx: 36e-3,
            p_tx: 120e-3,
            p_app: 30e-3,
            tau_app: 1.0,
        }
    }
}

impl PowerProfile {
    pub fn uniform(p: f64) -> Self {
        Self {
            p_sleep: p,
            p_rx: p,
            p_tx: p,
            p_app: p,
            tau_app: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let all = [self.p_sleep, self.p_rx, self.p_tx, self.p_app, self.tau_app];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PlanError::Profile("values must be finite and non-negative"));
        }
        if self.p_rx < self.p_sleep || self.p_tx < self.p_sleep {
            return Err(PlanError::Profile("p_rx and p_tx must not be below p_sleep"));
        }
        Ok(())
    }
}

/// `T_app = k * N * T_SL`.
pub fn app_period(k: u32, n_slots: u32, slot_seconds: f64) -> f64 {
    f64::from(k) * f64::from(n_slots) * slot_seconds
}

/// Lower bound on mean device power with the guard sized to `2 * D_R * T_F`.
pub fn mean_power(
    profile: &PowerProfile,
    t_bcn: f64,
    slot_seconds: f64,
    n_slots: u32,
    k: u32,
    relative_drift_ppm: f64,
) -> f64 {
    let p = profile;
    let t_f = slot_seconds * f64::from(n_slots);
    p.p_sleep
        + (p.p_rx + p.p_tx - 2.0 * p.p_sleep) * t_bcn / t_f
        + (p.p_rx - p.p_sleep) * 2.0 * relative_drift_ppm * 1e-6
        + (p.p_app - p.p_sleep) * p.tau_app / (f64::from(k) * t_f)
}

/// One LoRaWAN slot per frame serves at most `k` packets per period.
pub fn check_capacity(n: u32, k: u32) -> bool {
    n <= k
}

/// Per-node transmit airtimes entering the duty-cycle estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Airtimes {
    pub t_ack: f64,
    pub t_data: f64,
    pub t_bcn: f64,
}

impl Airtimes {
    /// Transmit seconds per application period of a node with `m_i` descendants.
    pub fn per_period(&self, m_i: u32, k: u32) -> f64 {
        let m = f64::from(m_i);
        m * self.t_ack + (1.0 + m) * self.t_data + f64::from(k) * self.t_bcn
    }
}

pub fn duty_cycle_estimate(m_i: u32, k: u32, channels: u32, t_app: f64, airtimes: &Airtimes) -> f64 {
    airtimes.per_period(m_i, k) / (t_app * f64::from(channels))
}

/// Shortest application period meeting both the duty-cycle limit and,
/// when `capacity` is `Some((n, T_F))`, the one-packet-per-frame capacity.
pub fn min_app_period(
    m_i: u32,
    k: u32,
    channels: u32,
    duty_limit: f64,
    airtimes: &Airtimes,
    capacity: Option<(u32, f64)>,
) -> f64 {
    let duty_bound = airtimes.per_period(m_i, k) / (duty_limit * f64::from(channels));
    let capacity_bound = capacity.map_or(0.0, |(n, t_f)| f64::from(n) * t_f);
    duty_bound.max(capacity_bound)
}

/// Largest frame (smallest `k`) reaching `t_app_target` with `k >= n`.
pub fn recommend_frame(
    t_app_target: f64,
    n: u32,
    slot_seconds: f64,
    max_n: u32,
) -> Result<(u32, u32), PlanError> {
    let infeasible = PlanError::NoFrameShape {
        t_app: t_app_target,
        n,
        max_n,
    };
    if n == 0 || max_n == 0 || !(slot_seconds > 0.0) {
        return Err(infeasible);
    }
    let ratio = t_app_target / (f64::from(n) * slot_seconds);
    let fitting = (ratio * (1.0 + FLOOR_TOLERANCE)).floor();
    if fitting < 1.0 {
        return Err(infeasible);
    }
    let n_slots = (fitting as u32).min(max_n);
    let k = (t_app_target / (f64::from(n_slots) * slot_seconds)).round() as u32;
    Ok((k.max(n), n_slots))
}

/// Inputs to [`plan_network`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub nodes: u32,
    pub t_app_target: f64,
    /// Forces `k` and keeps `N = max_n`.
    pub forced_k: Option<u32>,
    pub max_n: u32,
    pub slot_seconds: f64,
    pub channels: u32,
    pub duty_limit: f64,
    /// Descendants of the relay; `nodes - 1` when everyone hangs off it.
    pub relay_m0: Option<u32>,
    pub relative_drift_ppm: f64,
    pub profile: PowerProfile,
    /// Mesh airtimes; the relay's data term uses `relay_t_data`.
    pub airtimes: Airtimes,
    pub relay_t_data: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkPlan {
    pub k: u32,
    pub n_slots: u32,
    pub slot_seconds: f64,
    pub frame_seconds: f64,
    pub t_app: f64,
    pub nodes: u32,
    pub channels: u32,
    pub relay_m0: u32,
    pub relay_duty: f64,
    /// `(m_i, duty)` for non-relay nodes, `m_i = 0..nodes-1`.
    pub duty_by_m: Vec<(u32, f64)>,
    pub mean_power: f64,
    pub capacity_ok: bool,
    pub duty_limit: f64,
}

impl NetworkPlan {
    /// First violated constraint, capacity before duty cycle.
    pub fn check(&self) -> Result<(), PlanError> {
        if !self.capacity_ok {
            return Err(PlanError::Capacity {
                n: self.nodes,
                k: self.k,
            });
        }
        if self.relay_duty > self.duty_limit {
            return Err(PlanError::DutyCycle {
                m_i: self.relay_m0,
                duty: self.relay_duty * 100.0,
                limit: self.duty_limit * 100.0,
            });
        }
        if let Some((m_i, duty)) = self.duty_by_m.iter().find(|(_, d)| *d > self.duty_limit) {
            return Err(PlanError::DutyCycle {
                m_i: *m_i,
                duty: duty * 100.0,
                limit: self.duty_limit * 100.0,
            });
        }
        Ok(())
    }
}

pub fn plan_network(req: &PlanRequest) -> Result<NetworkPlan, PlanError> {
    req.profile.validate()?;
    let (k, n_slots) = match req.forced_k {
        Some(k) => (k, req.max_n),
        None => recommend_frame(req.t_app_target, req.nodes, req.slot_seconds, req.max_n)?,
    };
    let t_app = app_period(k, n_slots, req.slot_seconds);
    let relay_m0 = req.relay_m0.unwrap_or(req.nodes.saturating_sub(1));
    let relay_airtimes = Airtimes {
        t_data: req.relay_t_data,
        ..req.airtimes
    };
    let relay_duty = duty_cycle_estimate(relay_m0, k, req.channels, t_app, &relay_airtimes);
    let duty_by_m = (0..req.nodes.saturating_sub(1))
        .map(|m| (m, duty_cycle_estimate(m, k, req.channels, t_app, &req.airtimes)))
        .collect();
    Ok(NetworkPlan {
        k,
        n_slots,
        slot_seconds: req.slot_seconds,
        frame_seconds: req.slot_seconds * f64::from(n_slots),
        t_app,
        nodes: req.nodes,
        channels: req.channels,
        relay_m0,
        relay_duty,
        duty_by_m,
        mean_power: mean_power(
            &req.profile,
            req.airtimes.t_bcn,
            req.slot_seconds,
            n_slots,
            k,
            req.relative_drift_ppm,
        ),
        capacity_ok: check_capacity(req.nodes, k),
        duty_limit: req.duty_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const T_SL: f64 = 21_281.0 / 32_768.0;

    fn relay_airtimes() -> Airtimes {
        Airtimes {
            t_ack: 0.103424,
            t_data: 0.267264,
            t_bcn: 0.103424,
        }
    }

    #[test]
    fn app_period_examples() {
        assert_abs_diff_eq!(app_period(4, 90, 0.649445), 233.8002, epsilon = 1e-3);
        assert_abs_diff_eq!(app_period(1, 90, 0.649445), 58.450, epsilon = 1e-3);
        assert_eq!(app_period(2, 45, 0.649445), app_period(1, 90, 0.649445));
    }

    #[test]
    fn mean_power_example() {
        let p = mean_power(&PowerProfile::default(), 0.103424, 0.649445, 90, 4, 10.0);
        assert_abs_diff_eq!(p * 1e3, 0.4150, epsilon = 5e-4);
        let flat = PowerProfile {
            p_app: 0.01e-3,
            p_rx: 0.01e-3,
            p_tx: 0.01e-3,
            ..PowerProfile::default()
        };
        assert_abs_diff_eq!(mean_power(&flat, 0.103424, 0.649445, 90, 4, 10.0), 0.01e-3, epsilon = 1e-15);
        let doubled = mean_power(&PowerProfile::default(), 0.103424, 0.649445, 180, 2, 10.0);
        assert!(doubled < p);
    }

    #[test]
    fn capacity_examples() {
        assert!(check_capacity(4, 4));
        assert!(!check_capacity(5, 4));
        assert!(check_capacity(1, 1));
    }

    #[test]
    fn duty_cycle_examples() {
        let leaf = Airtimes {
            t_data: 0.226304,
            ..relay_airtimes()
        };
        let t_app = app_period(4, 90, T_SL);
        assert_abs_diff_eq!(duty_cycle_estimate(0, 4, 1, 233.80, &leaf) * 100.0, 0.274, epsilon = 5e-4);
        let relay = duty_cycle_estimate(3, 4, 1, t_app, &relay_airtimes());
        assert_abs_diff_eq!(relay * 100.0, 0.767, epsilon = 5e-4);
        assert_eq!(duty_cycle_estimate(3, 4, 2, t_app, &relay_airtimes()), relay / 2.0);
    }

    #[test]
    fn min_period_examples() {
        let a = relay_airtimes();
        assert_abs_diff_eq!(min_app_period(3, 4, 1, 0.01, &a, None), 179.3024, epsilon = 1e-9);
        assert_abs_diff_eq!(min_app_period(3, 4, 1, 1.0, &a, None), 1.793024, epsilon = 1e-12);
        assert_abs_diff_eq!(min_app_period(3, 4, 2, 0.01, &a, None), 89.6512, epsilon = 1e-9);
        assert_abs_diff_eq!(min_app_period(0, 1, 1, 1.0, &a, Some((4, 58.45))), 233.8, epsilon = 1e-9);
    }

    #[test]
    fn frame_recommendations() {
        assert_eq!(recommend_frame(234.0, 4, 0.649445, 90), Ok((4, 90)));
        assert_eq!(recommend_frame(58.45, 1, 0.649445, 90), Ok((1, 90)));
        assert!(recommend_frame(10.0, 100, 0.649445, 90).is_err());
    }

    #[test]
    fn plan_names_binding_constraint() {
        let mut req = PlanRequest {
            nodes: 4,
            t_app_target: 234.0,
            forced_k: None,
            max_n: 90,
            slot_seconds: T_SL,
            channels: 1,
            duty_limit: DEFAULT_DUTY_LIMIT,
            relay_m0: None,
            relative_drift_ppm: 10.0,
            profile: PowerProfile::default(),
            airtimes: Airtimes {
                t_data: 0.226304,
                ..relay_airtimes()
            },
            relay_t_data: 0.267264,
        };
        let plan = plan_network(&req).unwrap();
        assert_eq!((plan.k, plan.n_slots), (4, 90));
        assert_abs_diff_eq!(plan.relay_duty * 100.0, 0.767, epsilon = 5e-4);
        plan.check().unwrap();

        req.nodes = 5;
        req.forced_k = Some(4);
        let err = plan_network(&req).unwrap().check().unwrap_err();
        assert!(err.to_string().starts_with("capacity: n > k"));

        req.nodes = 4;
        req.duty_limit = 0.005;
        let err = plan_network(&req).unwrap().check().unwrap_err();
        assert!(matches!(err, PlanError::DutyCycle { m_i: 3, .. }));
    }
}
