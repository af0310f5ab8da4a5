//! Wired two-node system in SI units and radians.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use crate::control::{
    ActuatorSpec, ControllerSpec, DelaySpec, DesaturationSpec, DetectorKind, LoopConfig,
};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, NoiseKind, NoiseProcess, Resonance};
use crate::phase::{ClockSpec, OpticalFieldSpec, PathId, PathSegment, SPEED_OF_LIGHT};
use crate::planner::{check_plan, FrequencyPlan};
use crate::scenario::{
    ControllerKindConfig, DetectorConfig, FringeSection, IdentificationSection, LoopSection,
    NoiseProfile, PathConfig, ScenarioConfig,
};

/// One of the five feedback loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoopId {
    LocalA,
    LocalB,
    FastA,
    FastB,
    Global,
}

impl LoopId {
    pub const ALL: [LoopId; 5] = [
        LoopId::LocalA,
        LoopId::LocalB,
        LoopId::FastA,
        LoopId::FastB,
        LoopId::Global,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LoopId::LocalA => "local-a",
            LoopId::LocalB => "local-b",
            LoopId::FastA => "fast-a",
            LoopId::FastB => "fast-b",
            LoopId::Global => "global",
        }
    }
}

impl fmt::Display for LoopId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LoopId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LoopId::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownLoop(s.to_string()))
    }
}

/// Integer-ratio step hierarchy of the multirate simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Steps {
    pub fast: f64,
    pub local: f64,
    pub global: f64,
    pub drift: f64,
    pub record: f64,
}

impl Steps {
    /// Fast steps per local step.
    pub fn fast_per_local(&self) -> usize {
        (self.local / self.fast).round() as usize
    }

    pub fn local_per_global(&self) -> usize {
        (self.global / self.local).round() as usize
    }

    pub fn local_per_drift(&self) -> usize {
        (self.drift / self.local).round() as usize
    }

    pub fn local_per_record(&self) -> usize {
        (self.record / self.local).round() as usize
    }
}

/// Time-multiplexed interruptions of the stabilization light.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkPeriods {
    pub period: f64,
    pub duration: f64,
}

/// A node: excitation laser, frequency-shifted stabilization light, local
/// loop and conversion pump.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeModel {
    pub name: String,
    pub excitation_laser: OpticalFieldSpec,
    /// The stabilization light sits this clock below the excitation laser.
    pub stabilization_offset_clock: ClockSpec,
    pub pump_laser: OpticalFieldSpec,
    /// Static pump detuning, Hz. The fast loop absorbs it.
    pub pump_frequency_offset: f64,
    pub local_loop: LoopConfig,
    /// White phase noise at the local detector, rad RMS per sample.
    pub detector_noise: f64,
    /// D1 through D4.
    pub paths: [PathSegment; 4],
    /// Reflected excitation light reaching each midpoint detector, counts/s.
    pub reflected_rate: f64,
}

impl NodeModel {
    /// Frequency of the stabilization light, Hz.
    pub fn stabilization_frequency(&self) -> f64 {
        self.excitation_laser.frequency - self.stabilization_offset_clock.frequency
    }

    pub fn path(&self, id: PathId) -> Option<&PathSegment> {
        self.paths.iter().find(|p| p.id == id)
    }
}

/// One arm of the midpoint: the long fiber from a node and its fast loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    /// Stabilization light after frequency conversion, Hz.
    pub converted_frequency: f64,
    /// D5, with its vibration processes.
    pub fiber: PathSegment,
    /// Fiber temperature excursion, K.
    pub fiber_temperature: Option<NoiseProcess>,
    /// Relative length change per K.
    pub expansion: f64,
    pub d6: PathSegment,
    pub d7: PathSegment,
    pub d8: PathSegment,
    pub fast_loop: LoopConfig,
    pub detector_noise: f64,
    pub desaturation: Option<DesaturationSpec>,
}

impl ArmModel {
    /// Phase of the converted stabilization light per metre of fiber length change.
    pub fn phase_per_metre(&self) -> f64 {
        TAU * self.fiber.refractive_index * self.converted_frequency / SPEED_OF_LIGHT
    }

    /// One-way propagation delay of the fiber, s.
    pub fn fiber_delay(&self) -> f64 {
        self.fiber.delay()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnspdSpec {
    /// Leaked stabilization light per detector, counts/s.
    pub leak_rate: f64,
    pub visibility: f64,
    pub max_rate: f64,
    pub snr_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedforwardSpec {
    pub enabled: bool,
    /// s RMS per round-trip measurement.
    pub roundtrip_measurement_noise: f64,
    /// s.
    pub update_period: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MidpointModel {
    pub reference_laser: OpticalFieldSpec,
    pub arms: [ArmModel; 2],
    /// Proportional loop on the count-beat phase. It only moves the setpoint
    /// of arm A's fast loop.
    pub global_loop: LoopConfig,
    /// Initial global clock phase, rad.
    pub global_setpoint: f64,
    pub snspd: SnspdSpec,
    pub feedforward: FeedforwardSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub nodes: [NodeModel; 2],
    pub midpoint: MidpointModel,
    pub plan: FrequencyPlan,
    pub steps: Steps,
    pub master_seed: u64,
    pub dark_periods: Option<DarkPeriods>,
    /// Speed-up applied to fiber temperature only.
    pub drift_time_scale: f64,
    /// Constant between the global clock phase and the fringe, rad.
    pub theta_offset: f64,
    /// Counts equal their expectation instead of being drawn.
    pub noiseless: bool,
    pub max_unlock_events: usize,
    pub duration: f64,
    pub identification: IdentificationSection,
    pub fringe: FringeSection,
}

impl SystemModel {
    pub fn loops(&self) -> Vec<LoopId> {
        LoopId::ALL.to_vec()
    }

    pub fn loop_config(&self, id: LoopId) -> &LoopConfig {
        match id {
            LoopId::LocalA => &self.nodes[0].local_loop,
            LoopId::LocalB => &self.nodes[1].local_loop,
            LoopId::FastA => &self.midpoint.arms[0].fast_loop,
            LoopId::FastB => &self.midpoint.arms[1].fast_loop,
            LoopId::Global => &self.midpoint.global_loop,
        }
    }

    pub fn loop_config_mut(&mut self, id: LoopId) -> &mut LoopConfig {
        match id {
            LoopId::LocalA => &mut self.nodes[0].local_loop,
            LoopId::LocalB => &mut self.nodes[1].local_loop,
            LoopId::FastA => &mut self.midpoint.arms[0].fast_loop,
            LoopId::FastB => &mut self.midpoint.arms[1].fast_loop,
            LoopId::Global => &mut self.midpoint.global_loop,
        }
    }

    /// Switches every feedback loop on or off.
    pub fn set_all_loops(&mut self, enabled: bool) {
        for id in LoopId::ALL {
            self.loop_config_mut(id).enabled = enabled;
        }
    }

    /// Removes every noise process, leaving deterministic dynamics.
    pub fn silence(&mut self) {
        for node in &mut self.nodes {
            node.excitation_laser.phase_noise = None;
            node.pump_laser.phase_noise = None;
            node.detector_noise = 0.0;
            for p in &mut node.paths {
                p.drift.clear();
            }
        }
        let m = &mut self.midpoint;
        m.reference_laser.phase_noise = None;
        m.feedforward.roundtrip_measurement_noise = 0.0;
        for arm in &mut m.arms {
            arm.fiber.drift.clear();
            arm.fiber_temperature = None;
            arm.detector_noise = 0.0;
            for p in [&mut arm.d6, &mut arm.d7, &mut arm.d8] {
                p.drift.clear();
            }
        }
        self.noiseless = true;
    }

    /// Beat of the leaked stabilization light at the midpoint, Hz.
    pub fn global_beat(&self) -> f64 {
        self.plan.omega_glob() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.steps;
        for id in LoopId::ALL {
            let cfg = self.loop_config(id);
            cfg.validate().map_err(|e| wiring(id.as_str(), e))?;
        }
        if self.midpoint.feedforward.update_period <= 0.0 {
            return Err(Error::Config {
                key: "midpoint.feedforward.update_period".into(),
                message: "update period must be positive".into(),
            });
        }
        let beat = self.global_beat();
        if beat <= 0.0 || beat >= 0.5 / s.global {
            return Err(Error::Config {
                key: "plan".into(),
                message: format!(
                    "global beat {beat} Hz must be positive and below the global-step Nyquist frequency {} Hz",
                    0.5 / s.global
                ),
            });
        }
        let snspd = &self.midpoint.snspd;
        let peak = snspd.leak_rate * (1.0 + snspd.visibility)
            + self.nodes.iter().map(|n| n.reflected_rate).sum::<f64>();
        if peak > snspd.max_rate {
            return Err(Error::Config {
                key: "midpoint.snspd.leak_rate".into(),
                message: format!("peak detector rate {peak} counts/s exceeds the ceiling {}", snspd.max_rate),
            });
        }
        if !(0.0..=1.0).contains(&snspd.visibility) {
            return Err(Error::Config {
                key: "midpoint.snspd.visibility".into(),
                message: "visibility must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }
}

fn wiring(key: &str, e: Error) -> Error {
    Error::Config {
        key: key.to_string(),
        message: e.to_string(),
    }
}

struct Resolver<'a> {
    cfg: &'a ScenarioConfig,
}

impl Resolver<'_> {
    fn profile(&self, name: &str, key: &str) -> Result<&NoiseProfile> {
        self.cfg.noise.get(name).ok_or_else(|| Error::UnknownProfile {
            name: name.to_string(),
            key: key.to_string(),
        })
    }

    fn seed(&self, profile: &NoiseProfile, name: &str, key: &str) -> u64 {
        let master = profile.seed().unwrap_or(self.cfg.sim.master_seed);
        derive_seed(master, &format!("{key}/{name}"))
    }

    /// A phase disturbance (rad).
    fn phase(&self, name: &str, key: &str) -> Result<NoiseProcess> {
        let p = self.profile(name, key)?;
        let deg = f64::to_radians;
        let bad = |m: &str| Error::Config {
            key: key.to_string(),
            message: format!("profile `{name}` {m}"),
        };
        let kind = match p {
            NoiseProfile::LaserLinewidth { linewidth, .. } => NoiseKind::LaserLinewidth { linewidth: *linewidth },
            NoiseProfile::MechanicalResonance { resonances, .. } => NoiseKind::MechanicalResonance {
                resonances: resonances
                    .iter()
                    .map(|r| Resonance::new(r.f0, r.q, deg(r.rms_deg)))
                    .collect(),
            },
            NoiseProfile::ThermalDrift {
                rate_rms_deg,
                linear_rate_deg,
                ..
            } => {
                if p.is_temperature() {
                    return Err(bad("is a temperature profile, expected a phase profile"));
                }
                NoiseKind::ThermalDrift {
                    rate_rms: deg(rate_rms_deg.unwrap_or(0.0)),
                    linear_rate: deg(linear_rate_deg.unwrap_or(0.0)),
                }
            }
            NoiseProfile::White { std_deg, bandwidth, .. } => NoiseKind::White {
                std: deg(*std_deg),
                bandwidth: *bandwidth,
            },
            NoiseProfile::Prbs {
                amplitude_deg,
                order,
                hold,
                ..
            } => NoiseKind::Prbs {
                amplitude: deg(*amplitude_deg),
                order: *order,
                hold: *hold,
            },
            NoiseProfile::ShotCounts { .. } => return Err(bad("produces counts, not a phase")),
        };
        Ok(NoiseProcess::new(kind, self.seed(p, name, key)))
    }

    fn laser(&self, name: &str, key: &str) -> Result<NoiseProcess> {
        let p = self.phase(name, key)?;
        match p.kind {
            NoiseKind::LaserLinewidth { .. } => Ok(p),
            _ => Err(Error::Config {
                key: key.to_string(),
                message: format!("profile `{name}` must be of kind laser_linewidth"),
            }),
        }
    }

    /// A temperature excursion (K).
    fn temperature(&self, name: &str, key: &str) -> Result<NoiseProcess> {
        let p = self.profile(name, key)?;
        match p {
            NoiseProfile::ThermalDrift {
                rate_rms_k,
                linear_rate_k,
                ..
            } if p.is_temperature() => Ok(NoiseProcess::new(
                NoiseKind::ThermalDrift {
                    rate_rms: rate_rms_k.unwrap_or(0.0),
                    linear_rate: linear_rate_k.unwrap_or(0.0),
                },
                self.seed(p, name, key),
            )),
            _ => Err(Error::Config {
                key: key.to_string(),
                message: format!("profile `{name}` must be a thermal_drift with `rate_rms_k` or `linear_rate_k`"),
            }),
        }
    }

    fn path(&self, id: PathId, cfg: &PathConfig, key: &str) -> Result<PathSegment> {
        let mut seg = PathSegment::new(id, cfg.length, cfg.index).map_err(|e| wiring(key, e))?;
        for (i, name) in cfg.noise.iter().enumerate() {
            seg.drift.push(self.phase(name, &format!("{key}.noise[{i}]"))?);
        }
        Ok(seg)
    }
}

fn loop_config(
    name: &str,
    key: &str,
    s: &LoopSection,
    clock: ClockSpec,
    dt: f64,
) -> Result<LoopConfig> {
    let need = |v: Option<f64>, what: &str| {
        v.ok_or_else(|| Error::Config {
            key: format!("{key}.{what}"),
            message: format!("required by controller `{:?}`", s.controller),
        })
    };
    let controller = match s.controller {
        ControllerKindConfig::P => ControllerSpec::p(s.gain),
        ControllerKindConfig::PRolloff => ControllerSpec::p_with_rolloff(s.gain, need(s.rolloff_corner, "rolloff_corner")?),
        ControllerKindConfig::Pi => ControllerSpec::pi(s.gain, need(s.integral_corner, "integral_corner")?),
    }
    .with_limits(-s.actuator_range, s.actuator_range);
    let cfg = LoopConfig {
        name: name.to_string(),
        controller,
        actuator: ActuatorSpec::aom(s.actuator_range),
        delay: DelaySpec {
            transport_delay: s.transport_delay,
            update_rate: None,
        },
        detector: match s.detector {
            DetectorConfig::Ideal => DetectorKind::Ideal,
            DetectorConfig::Mixer => DetectorKind::Mixer,
            DetectorConfig::Pfd => DetectorKind::Pfd,
        },
        detector_lowpass: s.detector_lowpass,
        clock,
        dt,
        enabled: s.enabled,
    };
    cfg.validate().map_err(|e| wiring(key, e))?;
    Ok(cfg)
}

/// Resolves every cross-reference of a scenario into a wired system.
pub fn build_system(cfg: &ScenarioConfig) -> Result<SystemModel> {
    cfg.validate()?;
    check_plan(&cfg.plan).map_err(|e| wiring("plan", e))?;
    let r = Resolver { cfg };
    let sim = &cfg.sim;
    let steps = Steps {
        fast: sim.fast_step,
        local: sim.local_step,
        global: sim.global_step,
        drift: sim.drift_step,
        record: sim.record_step,
    };
    let plan = cfg.plan;

    let mut nodes = Vec::with_capacity(2);
    for (tag, n, loc) in [("a", &cfg.nodes.a, plan.omega_loc_a), ("b", &cfg.nodes.b, plan.omega_loc_b)] {
        let key = format!("nodes.{tag}");
        let mut ex = OpticalFieldSpec::new(format!("excitation_{tag}"), n.excitation_frequency)
            .map_err(|e| wiring(&format!("{key}.excitation_frequency"), e))?;
        if let Some(p) = &n.excitation_noise {
            ex.phase_noise = Some(r.laser(p, &format!("{key}.excitation_noise"))?);
        }
        let mut pump = OpticalFieldSpec::new(format!("pump_{tag}"), n.pump_frequency)
            .map_err(|e| wiring(&format!("{key}.pump_frequency"), e))?;
        if let Some(p) = &n.pump_noise {
            pump.phase_noise = Some(r.laser(p, &format!("{key}.pump_noise"))?);
        }
        let clock = ClockSpec::new(format!("loc_{tag}"), loc as f64, 0.0).map_err(|e| wiring("plan", e))?;
        let paths = [
            r.path(PathId::D1, &n.paths.d1, &format!("{key}.paths.d1"))?,
            r.path(PathId::D2, &n.paths.d2, &format!("{key}.paths.d2"))?,
            r.path(PathId::D3, &n.paths.d3, &format!("{key}.paths.d3"))?,
            r.path(PathId::D4, &n.paths.d4, &format!("{key}.paths.d4"))?,
        ];
        nodes.push(NodeModel {
            name: tag.to_uppercase(),
            excitation_laser: ex,
            stabilization_offset_clock: clock.clone(),
            pump_laser: pump,
            pump_frequency_offset: n.pump_frequency_offset,
            local_loop: loop_config(&format!("local-{tag}"), &format!("{key}.local_loop"), &n.local_loop, clock, steps.local)?,
            detector_noise: n.local_loop.detector_noise_deg.to_radians(),
            paths,
            reflected_rate: n.reflected_rate,
        });
    }

    let m = &cfg.midpoint;
    let mut arms = Vec::with_capacity(2);
    for (tag, a, fast) in [("a", &m.arms.a, plan.omega_fast_a), ("b", &m.arms.b, plan.omega_fast_b)] {
        let key = format!("midpoint.arms.{tag}");
        let fiber_cfg = PathConfig {
            length: a.fiber.length,
            index: a.fiber.index,
            noise: a.fiber.noise.clone(),
        };
        let fiber = r.path(PathId::D5, &fiber_cfg, &format!("{key}.fiber"))?;
        let fiber_temperature = match &a.fiber.temperature {
            Some(p) => Some(r.temperature(p, &format!("{key}.fiber.temperature"))?),
            None => None,
        };
        let clock = ClockSpec::new(format!("fast_{tag}"), fast as f64, 0.0).map_err(|e| wiring("plan", e))?;
        let fast_loop = loop_config(&format!("fast-{tag}"), &format!("{key}.fast_loop"), &a.fast_loop, clock, steps.fast)?;
        let desaturation = a.desaturation.as_ref().map(|d| DesaturationSpec {
            time_constant: d.time_constant,
            link: DelaySpec {
                transport_delay: d.udp_delay + 2.0 * fiber.delay(),
                update_rate: Some(d.update_rate),
            },
        });
        arms.push(ArmModel {
            converted_frequency: a.converted_frequency,
            fiber,
            fiber_temperature,
            expansion: a.fiber.expansion,
            d6: r.path(PathId::D6, &a.d6, &format!("{key}.d6"))?,
            d7: r.path(PathId::D7, &a.d7, &format!("{key}.d7"))?,
            d8: r.path(PathId::D8, &a.d8, &format!("{key}.d8"))?,
            fast_loop,
            detector_noise: a.fast_loop.detector_noise_deg.to_radians(),
            desaturation,
        });
    }

    let mut reference = OpticalFieldSpec::new("reference", m.reference_frequency)
        .map_err(|e| wiring("midpoint.reference_frequency", e))?;
    if let Some(p) = &m.reference_noise {
        reference.phase_noise = Some(r.laser(p, "midpoint.reference_noise")?);
    }
    let g = &m.global_loop;
    let glob_clock = ClockSpec::new("glob", plan.omega_glob() as f64, 0.0).map_err(|e| wiring("plan", e))?;
    let global_section = LoopSection {
        controller: ControllerKindConfig::P,
        gain: g.gain,
        integral_corner: None,
        rolloff_corner: None,
        actuator_range: g.actuator_range,
        transport_delay: g.transport_delay,
        detector: DetectorConfig::Mixer,
        detector_lowpass: Some(g.demod_lowpass),
        detector_noise_deg: 0.0,
        enabled: g.enabled,
    };
    let global_loop = loop_config("global", "midpoint.global_loop", &global_section, glob_clock, steps.global)?;

    let [na, nb]: [NodeModel; 2] = nodes.try_into().expect("two nodes");
    let [aa, ab]: [ArmModel; 2] = arms.try_into().expect("two arms");
    let system = SystemModel {
        nodes: [na, nb],
        midpoint: MidpointModel {
            reference_laser: reference,
            arms: [aa, ab],
            global_loop,
            global_setpoint: g.setpoint_deg.to_radians(),
            snspd: SnspdSpec {
                leak_rate: m.snspd.leak_rate,
                visibility: m.snspd.visibility,
                max_rate: m.snspd.max_rate,
                snr_threshold: m.snspd.snr_threshold,
            },
            feedforward: FeedforwardSpec {
                enabled: m.feedforward.enabled,
                roundtrip_measurement_noise: m.feedforward.roundtrip_noise,
                update_period: m.feedforward.update_period,
            },
        },
        plan,
        steps,
        master_seed: sim.master_seed,
        dark_periods: sim.dark_periods.then_some(DarkPeriods {
            period: sim.dark_period,
            duration: sim.dark_duration,
        }),
        drift_time_scale: sim.drift_time_scale,
        theta_offset: sim.theta_offset_deg.to_radians(),
        noiseless: false,
        max_unlock_events: sim.max_unlock_events,
        duration: sim.duration,
        identification: cfg.identification.clone(),
        fringe: cfg.fringe.clone(),
    };
    let mut system = system;
    if sim.disable_noise {
        system.silence();
    }
    system.validate()?;
    Ok(system)
}
