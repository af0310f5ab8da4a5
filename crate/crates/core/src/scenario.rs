//! Scenario files.
//!
//! A scenario is a TOML document. Phases are given in degrees (keys ending in
//! `_deg`) and converted to radians when the system is built. A user file is
//! merged key by key over the bundled reference scenario unless it sets
//! `base = "none"`, so small override files are enough for most runs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::FrequencyPlan;

/// The bundled reference scenario, annotated.
pub const REFERENCE_SCENARIO: &str = include_str!("../scenarios/reference.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub base: Option<String>,
    pub sim: SimSection,
    #[serde(default)]
    pub outputs: OutputSection,
    pub plan: FrequencyPlan,
    #[serde(default)]
    pub noise: BTreeMap<String, NoiseProfile>,
    pub nodes: NodePair,
    pub midpoint: MidpointSection,
    #[serde(default)]
    pub identification: IdentificationSection,
    #[serde(default)]
    pub fringe: FringeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// s.
    pub duration: f64,
    pub master_seed: u64,
    pub fast_step: f64,
    pub local_step: f64,
    pub global_step: f64,
    pub drift_step: f64,
    pub record_step: f64,
    #[serde(default)]
    pub dark_periods: bool,
    #[serde(default = "default_dark_period")]
    pub dark_period: f64,
    #[serde(default = "default_dark_duration")]
    pub dark_duration: f64,
    /// Factor by which drift processes run faster than simulated time.
    #[serde(default = "one")]
    pub drift_time_scale: f64,
    #[serde(default)]
    pub theta_offset_deg: f64,
    /// Unlock events tolerated before a run counts as failed.
    #[serde(default)]
    pub max_unlock_events: usize,
    /// Zeroes every noise process, leaving the deterministic dynamics.
    #[serde(default)]
    pub disable_noise: bool,
}

fn default_dark_period() -> f64 {
    10e-6
}

fn default_dark_duration() -> f64 {
    2.5e-6
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    #[default]
    Text,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub directory: String,
    #[serde(default)]
    pub format: DataFormat,
    /// Bins of the fidelity histogram in the report.
    #[serde(default = "default_histogram_bins")]
    pub histogram_bins: usize,
}

fn default_out_dir() -> String {
    "out".into()
}

fn default_histogram_bins() -> usize {
    20
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_out_dir(),
            format: DataFormat::Text,
            histogram_bins: default_histogram_bins(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonanceConfig {
    pub f0: f64,
    pub q: f64,
    pub rms_deg: f64,
}

/// A named disturbance. Seeds default to one derived from the master seed
/// and the place the profile is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseProfile {
    LaserLinewidth {
        /// Hz.
        linewidth: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    MechanicalResonance {
        resonances: Vec<ResonanceConfig>,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Phase drift (`*_deg`, per √s and per s) or temperature drift (`*_k`).
    ThermalDrift {
        #[serde(default)]
        rate_rms_deg: Option<f64>,
        #[serde(default)]
        linear_rate_deg: Option<f64>,
        #[serde(default)]
        rate_rms_k: Option<f64>,
        #[serde(default)]
        linear_rate_k: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    White {
        std_deg: f64,
        #[serde(default)]
        bandwidth: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Prbs {
        amplitude_deg: f64,
        order: u32,
        #[serde(default = "one_u32")]
        hold: u32,
        #[serde(default)]
        seed: Option<u64>,
    },
    ShotCounts {
        mean_rate: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn one_u32() -> u32 {
    1
}

impl NoiseProfile {
    pub fn seed(&self) -> Option<u64> {
        match self {
            NoiseProfile::LaserLinewidth { seed, .. }
            | NoiseProfile::MechanicalResonance { seed, .. }
            | NoiseProfile::ThermalDrift { seed, .. }
            | NoiseProfile::White { seed, .. }
            | NoiseProfile::Prbs { seed, .. }
            | NoiseProfile::ShotCounts { seed, .. } => *seed,
        }
    }

    pub fn is_temperature(&self) -> bool {
        matches!(
            self,
            NoiseProfile::ThermalDrift { rate_rms_k, linear_rate_k, .. }
                if rate_rms_k.is_some() || linear_rate_k.is_some()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePair {
    pub a: NodeSection,
    pub b: NodeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    /// m.
    pub length: f64,
    #[serde(default = "one")]
    pub index: f64,
    #[serde(default)]
    pub noise: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePaths {
    pub d1: PathConfig,
    pub d2: PathConfig,
    pub d3: PathConfig,
    pub d4: PathConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKindConfig {
    P,
    PRolloff,
    Pi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorConfig {
    Ideal,
    Mixer,
    Pfd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSection {
    pub controller: ControllerKindConfig,
    /// Hz of command per rad of error.
    pub gain: f64,
    #[serde(default)]
    pub integral_corner: Option<f64>,
    #[serde(default)]
    pub rolloff_corner: Option<f64>,
    /// ±Hz.
    pub actuator_range: f64,
    #[serde(default)]
    pub transport_delay: f64,
    pub detector: DetectorConfig,
    #[serde(default)]
    pub detector_lowpass: Option<f64>,
    /// White phase noise at the detector, degrees RMS per sample.
    #[serde(default)]
    pub detector_noise_deg: f64,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    pub excitation_noise: Option<String>,
    pub pump_noise: Option<String>,
    /// Static detuning of the conversion pump, Hz.
    #[serde(default)]
    pub pump_frequency_offset: f64,
    /// Hz.
    pub excitation_frequency: f64,
    /// Hz.
    pub pump_frequency: f64,
    /// Reflected excitation light reaching each detector at the midpoint, counts/s.
    #[serde(default)]
    pub reflected_rate: f64,
    pub paths: NodePaths,
    pub local_loop: LoopSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberConfig {
    pub length: f64,
    #[serde(default = "fiber_index")]
    pub index: f64,
    #[serde(default = "silica")]
    pub expansion: f64,
    #[serde(default)]
    pub temperature: Option<String>,
    #[serde(default)]
    pub noise: Vec<String>,
}

fn fiber_index() -> f64 {
    crate::phase::FIBER_INDEX
}

fn silica() -> f64 {
    crate::phase::SILICA_EXPANSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesaturationConfig {
    pub time_constant: f64,
    #[serde(default = "udp_rate")]
    pub update_rate: f64,
    /// Network latency of the link, s. Fiber propagation is added automatically.
    #[serde(default)]
    pub udp_delay: f64,
}

fn udp_rate() -> f64 {
    500.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSection {
    /// Converted stabilization frequency, Hz.
    pub converted_frequency: f64,
    pub fiber: FiberConfig,
    pub d6: PathConfig,
    pub d7: PathConfig,
    pub d8: PathConfig,
    pub fast_loop: LoopSection,
    #[serde(default)]
    pub desaturation: Option<DesaturationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmPair {
    pub a: ArmSection,
    pub b: ArmSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnspdConfig {
    /// Leaked stabilization light per detector, counts/s.
    pub leak_rate: f64,
    pub visibility: f64,
    #[serde(default = "snspd_max")]
    pub max_rate: f64,
    /// Minimum beat SNR before the global error is trusted.
    #[serde(default = "snr_threshold")]
    pub snr_threshold: f64,
}

fn snspd_max() -> f64 {
    crate::noise::SNSPD_MAX_RATE
}

fn snr_threshold() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedforwardConfig {
    pub enabled: bool,
    /// RMS noise of each round-trip time measurement, s.
    #[serde(default)]
    pub roundtrip_noise: f64,
    pub update_period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalLoopSection {
    pub gain: f64,
    pub demod_lowpass: f64,
    #[serde(default)]
    pub transport_delay: f64,
    /// ±Hz of setpoint slew.
    #[serde(default = "global_range")]
    pub actuator_range: f64,
    #[serde(default)]
    pub setpoint_deg: f64,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn global_range() -> f64 {
    10e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MidpointSection {
    pub reference_noise: Option<String>,
    /// Hz.
    pub reference_frequency: f64,
    pub arms: ArmPair,
    pub global_loop: GlobalLoopSection,
    pub snspd: SnspdConfig,
    pub feedforward: FeedforwardConfig,
}

/// Parameters of identification runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationSection {
    /// Samples per run, at the loop's own step.
    pub samples: usize,
    /// Injection RMS, degrees.
    pub amplitude_deg: f64,
    /// Injection bandwidth as a fraction of the loop's Nyquist frequency.
    pub bandwidth_fraction: f64,
}

impl Default for IdentificationSection {
    fn default() -> Self {
        Self {
            samples: 1 << 20,
            amplitude_deg: 45.0,
            bandwidth_fraction: 0.12,
        }
    }
}

/// Parameters of fringe sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FringeSection {
    pub setpoints: usize,
    pub repeats: usize,
    /// Settling time after each setpoint change, s.
    pub settle: f64,
    /// Counting time per setpoint, s.
    pub dwell: f64,
    /// Interferometric visibility of the reflected light.
    pub visibility: f64,
}

impl Default for FringeSection {
    fn default() -> Self {
        Self {
            setpoints: 8,
            repeats: 1,
            settle: 15e-3,
            dwell: 10e-3,
            visibility: 1.0,
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn config_error(key: impl Into<String>, e: impl std::fmt::Display) -> Error {
    Error::Config {
        key: key.into(),
        message: e.to_string(),
    }
}

impl ScenarioConfig {
    /// The bundled reference scenario.
    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE_SCENARIO).expect("bundled scenario is valid")
    }

    /// Parses a scenario, merging it over the reference unless `base = "none"`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| config_error("<document>", e))?;
        let base = match user.get("base") {
            None => "reference".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(other) => return Err(config_error("base", format!("expected a string, got {other}"))),
        };
        let merged = match base.as_str() {
            "none" => user,
            "reference" => {
                let mut b: toml::Table = REFERENCE_SCENARIO.parse().map_err(|e| config_error("<reference>", e))?;
                merge(&mut b, user);
                b
            }
            other => {
                return Err(config_error(
                    "base",
                    format!("unknown base scenario `{other}` (expected `reference` or `none`)"),
                ))
            }
        };
        let cfg: ScenarioConfig = merged.try_into().map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            config_error(key_from_message(&msg), msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Structural checks that do not need the built system.
    pub fn validate(&self) -> Result<()> {
        let s = &self.sim;
        let positive = [
            ("sim.duration", s.duration),
            ("sim.fast_step", s.fast_step),
            ("sim.local_step", s.local_step),
            ("sim.global_step", s.global_step),
            ("sim.drift_step", s.drift_step),
            ("sim.record_step", s.record_step),
            ("sim.drift_time_scale", s.drift_time_scale),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_error(k, format!("must be positive, got {v}")));
            }
        }
        let ratio = |k: &str, a: f64, b: f64| -> Result<()> {
            let r = a / b;
            if (r - r.round()).abs() > 1e-6 || r.round() < 1.0 {
                Err(config_error(k, format!("{a} s is not an integer multiple of {b} s")))
            } else {
                Ok(())
            }
        };
        ratio("sim.local_step", s.local_step, s.fast_step)?;
        ratio("sim.global_step", s.global_step, s.local_step)?;
        ratio("sim.drift_step", s.drift_step, s.local_step)?;
        ratio("sim.record_step", s.record_step, s.local_step)?;
        if s.dark_periods && !(s.dark_duration >= 0.0 && s.dark_duration < s.dark_period) {
            return Err(config_error(
                "sim.dark_duration",
                "dark duration must be non-negative and shorter than the dark period",
            ));
        }
        if self.outputs.histogram_bins == 0 {
            return Err(config_error("outputs.histogram_bins", "need at least one bin"));
        }
        Ok(())
    }
}

fn key_from_message(msg: &str) -> String {
    // toml reports unknown or missing fields by name; surface it as the key.
    for marker in ["unknown field `", "missing field `", "unknown variant `"] {
        if let Some(i) = msg.find(marker) {
            let rest = &msg[i + marker.len()..];
            if let Some(j) = rest.find('`') {
                return rest[..j].to_string();
            }
        }
    }
    "<document>".into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parses_and_round_trips() {
        let cfg = ScenarioConfig::reference();
        assert_eq!(cfg.plan, FrequencyPlan::reference());
        let text = cfg.to_toml_string();
        let back = ScenarioConfig::from_toml_str(&format!("base = \"none\"\n{text}")).unwrap();
        assert_eq!(back.sim, cfg.sim);
        assert_eq!(back.noise, cfg.noise);
    }

    #[test]
    fn overrides_merge_over_reference() {
        let cfg = ScenarioConfig::from_toml_str("[sim]\nduration = 2.5\nmaster_seed = 9\n").unwrap();
        assert_eq!(cfg.sim.duration, 2.5);
        assert_eq!(cfg.sim.master_seed, 9);
        assert_eq!(cfg.sim.fast_step, ScenarioConfig::reference().sim.fast_step);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = ScenarioConfig::from_toml_str("[sim]\nduraton = 2.5\n").unwrap_err();
        assert!(e.to_string().contains("duraton"), "{e}");
    }

    #[test]
    fn bad_step_ratio_is_named() {
        let e = ScenarioConfig::from_toml_str("[sim]\nlocal_step = 1.1e-6\n").unwrap_err();
        assert!(e.to_string().contains("sim.local_step"), "{e}");
    }
}
