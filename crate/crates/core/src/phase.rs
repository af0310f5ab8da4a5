//! Plane-wave phase bookkeeping.
//!
//! Optical fields are tracked as monochromatic plane waves. Only their
//! slowly varying envelope phase is ever simulated; carrier terms at optical
//! frequency drop out of every intensity expression, so nothing here
//! oscillates at hundreds of THz.
//!
//! All phases are radians. Degrees appear only at I/O boundaries.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, require, Error, Result};
use crate::noise::NoiseProcess;

/// Vacuum speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Default refractive index for fiber segments.
pub const FIBER_INDEX: f64 = 1.468;
/// Linear thermal expansion coefficient of silica, m/(m K).
pub const SILICA_EXPANSION: f64 = 5.5e-7;

/// A monochromatic plane wave.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalFieldSpec {
    pub label: String,
    /// Optical frequency in Hz.
    pub frequency: f64,
    pub initial_phase: f64,
    /// Power in arbitrary units.
    pub intensity: f64,
    pub phase_noise: Option<NoiseProcess>,
}

impl OpticalFieldSpec {
    pub fn new(label: impl Into<String>, frequency: f64) -> Result<Self> {
        let field = Self {
            label: label.into(),
            frequency,
            initial_phase: 0.0,
            intensity: 1.0,
            phase_noise: None,
        };
        field.validate()?;
        Ok(field)
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.initial_phase = phase;
        self
    }

    pub fn with_intensity(mut self, intensity: f64) -> Result<Self> {
        self.intensity = intensity;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        require(
            self.frequency > 0.0 && self.frequency.is_finite(),
            "frequency",
            "optical frequency must be positive",
        )?;
        require(
            self.intensity >= 0.0,
            "intensity",
            "intensity must be non-negative",
        )
    }

    pub fn angular_frequency(&self) -> f64 {
        TAU * self.frequency
    }
}

/// Optical path sections between lasers, detectors and the central beamsplitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PathId {
    /// Excitation path: laser, AOM, objective and diamond chip to the local beamsplitter.
    D1,
    /// Local stabilization light path to the local beamsplitter.
    D2,
    /// Local beamsplitter to the local phase projection.
    D3,
    /// Local beamsplitter to the conversion crystal.
    D4,
    /// Conversion crystal over deployed fiber and midpoint AOM to the narrow filter.
    D5,
    /// Reflection off the narrow filter to the fast detector.
    D6,
    /// Transmission through the narrow filter to the central beamsplitter.
    D7,
    /// Reference laser to the fast detector.
    D8,
}

impl PathId {
    pub const ALL: [PathId; 8] = [
        PathId::D1,
        PathId::D2,
        PathId::D3,
        PathId::D4,
        PathId::D5,
        PathId::D6,
        PathId::D7,
        PathId::D8,
    ];

    /// Typical section length in meters.
    pub fn typical_length(self) -> f64 {
        match self {
            PathId::D1 | PathId::D2 => 10.0,
            PathId::D5 => 10e3,
            _ => 2.0,
        }
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for PathId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PathId::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| invalid("path", format!("unknown path section `{s}`")))
    }
}

/// One optical section with its attached disturbances.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    pub id: PathId,
    pub length: f64,
    pub refractive_index: f64,
    /// Phase disturbances picked up along the section; empty for none.
    pub drift: Vec<NoiseProcess>,
}

impl PathSegment {
    pub fn new(id: PathId, length: f64, refractive_index: f64) -> Result<Self> {
        let seg = Self {
            id,
            length,
            refractive_index,
            drift: Vec::new(),
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn fiber(id: PathId, length: f64) -> Result<Self> {
        Self::new(id, length, FIBER_INDEX)
    }

    pub fn free_space(id: PathId, length: f64) -> Result<Self> {
        Self::new(id, length, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        require(
            self.length >= 0.0 && self.length.is_finite(),
            "length",
            "segment length must be finite and non-negative",
        )?;
        require(
            self.refractive_index >= 1.0,
            "refractive_index",
            "refractive index must be at least 1",
        )
    }

    /// Group propagation delay through the section.
    pub fn delay(&self) -> f64 {
        propagation_delay(self.length, self.refractive_index)
    }
}

/// An RF clock used as a demodulation reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockSpec {
    pub label: String,
    /// Hz.
    pub frequency: f64,
    /// rad.
    pub phase: f64,
}

impl ClockSpec {
    pub fn new(label: impl Into<String>, frequency: f64, phase: f64) -> Result<Self> {
        require(
            frequency >= 0.0 && frequency.is_finite(),
            "frequency",
            "clock frequency must be non-negative",
        )?;
        Ok(Self {
            label: label.into(),
            frequency,
            phase,
        })
    }

    /// Clock phase at time `t`, reduced to one turn before scaling so that
    /// long runs keep full precision.
    pub fn phase_at(&self, t: f64) -> f64 {
        TAU * (self.frequency * t).fract() + self.phase
    }
}

/// Wraps a phase into (-π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let mut y = x.rem_euclid(TAU);
    if y > PI {
        y -= TAU;
    }
    y
}

/// Unwraps a sequence of wrapped phases in place.
pub fn unwrap_in_place(phase: &mut [f64]) {
    let mut offset = 0.0;
    let mut prev = match phase.first() {
        Some(&p) => p,
        None => return,
    };
    for p in phase.iter_mut().skip(1) {
        let raw = *p;
        let d = raw - prev;
        if d > PI {
            offset -= TAU * ((d + PI) / TAU).floor();
        } else if d < -PI {
            offset += TAU * ((-d + PI) / TAU).floor();
        }
        prev = raw;
        *p = raw + offset;
    }
}

/// Phase of `field` at time `t` after traversing `path`, unwrapped.
///
/// `ω t − Σ (n_j ω / c) L_j + θ₀`
pub fn accumulated_phase(field: &OpticalFieldSpec, path: &[PathSegment], t: f64) -> f64 {
    let omega = field.angular_frequency();
    let optical_length: f64 = path.iter().map(|s| s.refractive_index * s.length).sum();
    omega * t - omega * optical_length / SPEED_OF_LIGHT + field.initial_phase
}

/// Photodiode intensity of two interfering plane waves after propagating
/// `d1` and `d2` through a medium of index `n`.
///
/// For equal intensities `I0` this is `2 I0 + 2 I0 cos(Δω t + (n/c)(ω1 d1 − ω2 d2) + Δθ)`.
pub fn heterodyne_intensity(
    u1: &OpticalFieldSpec,
    u2: &OpticalFieldSpec,
    d1: f64,
    d2: f64,
    n: f64,
    t: f64,
) -> Result<f64> {
    if u1.intensity < 0.0 || u2.intensity < 0.0 {
        return Err(invalid("intensity", "intensities must be non-negative"));
    }
    let (w1, w2) = (u1.angular_frequency(), u2.angular_frequency());
    // (ω2 − ω1) t computed from the frequency difference keeps precision at optical carriers.
    let beat = TAU * ((u2.frequency - u1.frequency) * t).fract();
    // The path term can reach 1e9 rad; reducing it first keeps the sum exact
    // enough that the beat stays periodic.
    let path = (n / SPEED_OF_LIGHT * (w1 * d1 - w2 * d2)).rem_euclid(TAU);
    let arg = beat + path + (u2.initial_phase - u1.initial_phase);
    Ok(u1.intensity + u2.intensity + 2.0 * (u1.intensity * u2.intensity).sqrt() * arg.cos())
}

/// Upper bound on heralded-state fidelity for a phase error `delta_phi`.
pub fn fidelity_from_phase_error(delta_phi: f64) -> f64 {
    0.5 * (1.0 + delta_phi.cos())
}

/// Residual phase error in degrees left by `slips` full-turn slips when the
/// stabilized light and the signal light differ in frequency.
pub fn phase_slip_error(slips: i64, f_signal: f64, f_stab: f64) -> Result<f64> {
    if !(f_stab > 0.0) {
        return Err(invalid("f_stab", "stabilization frequency must be positive"));
    }
    Ok(slips as f64 * 360.0 * (f_signal - f_stab) / f_stab)
}

/// Phase error from a length change `delta_l` of a section shared by two
/// co-propagating fields separated by `delta_omega` (rad/s).
pub fn length_variation_error(delta_l: f64, delta_omega: f64, n: f64) -> f64 {
    n * delta_l * delta_omega / SPEED_OF_LIGHT
}

/// One-way propagation delay through `length` meters of index `n`.
pub fn propagation_delay(length: f64, n: f64) -> f64 {
    n * length / SPEED_OF_LIGHT
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(f: f64) -> OpticalFieldSpec {
        OpticalFieldSpec::new("f", f).unwrap()
    }

    #[test]
    fn accumulated_phase_trivial_cases() {
        assert_eq!(accumulated_phase(&field(1.0), &[], 0.0), 0.0);
        let f = field(3.0e14).with_phase(0.42);
        assert_eq!(accumulated_phase(&f, &[], 0.0), 0.42);
    }

    #[test]
    fn one_optical_wavelength_of_fiber_costs_one_turn() {
        let f = field(188_691.4e9);
        let l = SPEED_OF_LIGHT / (FIBER_INDEX * f.frequency);
        let seg = PathSegment::fiber(PathId::D5, l).unwrap();
        let d = accumulated_phase(&f, &[seg], 0.0) - accumulated_phase(&f, &[], 0.0);
        assert!((d + TAU).abs() < 1e-9, "{d}");
    }

    #[test]
    fn heterodyne_extremes() {
        let a = field(4.7e14);
        let b = field(4.7e14);
        assert!((heterodyne_intensity(&a, &b, 1.0, 1.0, 1.0, 0.3).unwrap() - 4.0).abs() < 1e-12);
        let b = b.with_phase(PI);
        assert!(heterodyne_intensity(&a, &b, 1.0, 1.0, 1.0, 0.3).unwrap().abs() < 1e-12);
    }

    #[test]
    fn heterodyne_rejects_negative_intensity() {
        let mut a = field(4.7e14);
        a.intensity = -1.0;
        assert!(heterodyne_intensity(&a, &field(4.7e14), 0.0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn fidelity_values() {
        assert_eq!(fidelity_from_phase_error(0.0), 1.0);
        assert!(fidelity_from_phase_error(PI).abs() < 1e-15);
        assert!((fidelity_from_phase_error(PI / 2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn phase_slip_error_values() {
        assert_eq!(phase_slip_error(0, 5.0, 3.0).unwrap(), 0.0);
        let f_stab = 188_691.4e9;
        let one = phase_slip_error(1, f_stab + 400e6, f_stab).unwrap();
        assert!((one - 7.63e-4).abs() / 7.63e-4 < 0.01, "{one}");
        let many = phase_slip_error(1_000_000, f_stab + 400e6, f_stab).unwrap();
        assert!((many - 1e6 * one).abs() < 1e-9 * many);
        assert!(phase_slip_error(1, 1.0, 0.0).is_err());
        assert!(phase_slip_error(1, 1.0, -2.0).is_err());
    }

    #[test]
    fn length_variation_values() {
        assert_eq!(length_variation_error(0.0, 1e9, 1.468), 0.0);
        let dw = TAU * 400e6;
        let deg = length_variation_error(0.02, dw, 1.0417).to_degrees();
        assert!((deg - 10.0).abs() < 0.1, "{deg}");
        // Standard fiber index gives the larger value.
        let deg_fiber = length_variation_error(0.02, dw, FIBER_INDEX).to_degrees();
        assert!((deg_fiber - 14.1).abs() < 0.1, "{deg_fiber}");
    }

    #[test]
    fn ten_km_fiber_delay() {
        let d = propagation_delay(10e3, FIBER_INDEX);
        assert!((d - 48.97e-6).abs() < 0.05e-6, "{d}");
    }

    #[test]
    fn wrap_and_unwrap() {
        assert!((wrap_phase(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-12);
        let truth: Vec<f64> = (0..200).map(|i| 0.3 * i as f64).collect();
        let mut w: Vec<f64> = truth.iter().map(|&x| wrap_phase(x)).collect();
        unwrap_in_place(&mut w);
        for (a, b) in truth.iter().zip(&w) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn path_ids_parse() {
        for p in PathId::ALL {
            assert_eq!(p.to_string().parse::<PathId>().unwrap(), p);
        }
        assert!("D9".parse::<PathId>().is_err());
        assert!(PathSegment::new(PathId::D3, 1.0, 0.9).is_err());
        assert!(PathSegment::new(PathId::D3, -1.0, 1.0).is_err());
    }
}
