//! Intelligent Driver Model for NPC longitudinal control.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    /// Desired free-road speed (m/s).
    pub v0: f64,
    /// Desired time headway (s).
    pub time_headway: f64,
    /// Jam distance (m).
    pub min_gap: f64,
    /// Maximum acceleration (m/s²).
    pub a_max: f64,
    /// Comfortable deceleration (m/s², positive).
    pub b_comf: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 25.0,
            time_headway: 1.5,
            min_gap: 10.0,
            a_max: 3.0,
            b_comf: 2.0,
        }
    }
}

/// IDM acceleration for a vehicle at speed `v` following a leader at
/// `lead_v` with bumper-to-bumper `gap` (`f64::INFINITY` for a free road).
/// The result is clamped to `[-2 b_comf, a_max]`.
pub fn idm_acceleration(v: f64, gap: f64, lead_v: f64, p: &IdmParams) -> f64 {
    let v = v.max(0.0);
    let free = 1.0 - (v / p.v0).powi(4);
    let interaction = if gap.is_finite() {
        let dv = v - lead_v;
        let desired = p.min_gap + (v * p.time_headway + v * dv / (2.0 * (p.a_max * p.b_comf).sqrt())).max(0.0);
        let gap = gap.max(1e-3);
        (desired / gap).powi(2)
    } else {
        0.0
    };
    (p.a_max * (free - interaction)).clamp(-2.0 * p.b_comf, p.a_max)
}
