//! Length-drift compensation from round-trip time measurements.
//!
//! A fiber stretched by ΔL delays the round trip by `2nΔL/c`, and shifts the
//! phase of light offset by `Δf` from the stabilization light by
//! `2π·n·ΔL·Δf/c = 2π·Δf·Δt_rt/2`. The refractive index cancels, so the
//! correction needs only the measured delay change and the offset.

use std::f64::consts::TAU;

use crate::error::{invalid, Result};
use crate::phase::{length_variation_error, SPEED_OF_LIGHT};
use crate::series::{TimeSeries, Unit};

use super::model::SystemModel;

/// Phase error (rad) of light offset by `offset` Hz after a round-trip change `delta_rt` (s).
pub fn feedforward_phase(delta_rt: f64, offset: f64) -> f64 {
    TAU * offset * delta_rt / 2.0
}

/// Fiber length change implied by a round-trip change, m.
pub fn length_from_roundtrip(delta_rt: f64, n: f64) -> f64 {
    SPEED_OF_LIGHT * delta_rt / (2.0 * n)
}

/// Estimated phase error of node `arm`'s single photons (rad) for each
/// round-trip sample, relative to the first sample.
///
/// The global clock phase must be lowered by the A−B difference of these
/// estimates for the fringe to stay put.
pub fn apply_feedforward(system: &SystemModel, arm: usize, roundtrip: &TimeSeries) -> Result<TimeSeries> {
    if arm > 1 {
        return Err(invalid("arm", "arm index must be 0 (A) or 1 (B)"));
    }
    if !system.midpoint.feedforward.enabled {
        return Err(invalid("feedforward", "feed-forward is disabled in this system"));
    }
    let n = system.midpoint.arms[arm].fiber.refractive_index;
    let offset = system.nodes[arm].stabilization_offset_clock.frequency;
    let first = roundtrip.samples().first().copied().unwrap_or(0.0);
    let out = roundtrip
        .samples()
        .iter()
        .map(|&rt| length_variation_error(length_from_roundtrip(rt - first, n), TAU * offset, n))
        .collect();
    TimeSeries::new(roundtrip.dt(), out, Unit::Rad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_centimetres_at_400_mhz() {
        let n = 1.0417;
        let rt = 2.0 * n * 0.02 / SPEED_OF_LIGHT;
        let deg = feedforward_phase(rt, 400e6).to_degrees();
        assert!((deg - 10.0).abs() < 0.1, "{deg}");
        let via_length = length_variation_error(length_from_roundtrip(rt, n), TAU * 400e6, n).to_degrees();
        assert!((via_length - deg).abs() < 1e-9);
    }

    #[test]
    fn sign_follows_length_change() {
        assert!(feedforward_phase(1e-12, 4e8) > 0.0);
        assert!(feedforward_phase(-1e-12, 4e8) < 0.0);
        assert_eq!(feedforward_phase(0.0, 4e8), 0.0);
    }
}
