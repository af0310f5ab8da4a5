//! One feedback loop advanced at its own step.

use std::f64::consts::{PI, TAU};

use crate::control::{Actuator, Controller, DelayLine, DetectorKind, LoopConfig, Lowpass2, Pfd};
use crate::error::Result;
use crate::noise::{NoiseKind, NoiseProcess, NoiseStream};
use crate::phase::wrap_phase;

/// Detector, controller, transport delay and frequency actuator of one loop.
///
/// The controller input is `−measured + injection` with feedback on and
/// `injection` alone with feedback off, so an off-run sees exactly the
/// injected signal. Injection enters ahead of the detector low-pass.
#[derive(Debug, Clone)]
pub(crate) struct LoopStepper {
    detector: DetectorKind,
    pfd: Pfd,
    lowpass: Option<Lowpass2>,
    controller: Controller,
    delay: DelayLine,
    actuator: Actuator,
    noise: NoiseStream,
    dt: f64,
    enabled: bool,
    held: f64,
    command: f64,
    unlocked: bool,
}

impl LoopStepper {
    pub fn new(cfg: &LoopConfig, detector_noise: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let noise = if detector_noise > 0.0 {
            NoiseProcess::new(
                NoiseKind::White {
                    std: detector_noise,
                    bandwidth: None,
                },
                seed,
            )
            .stream(cfg.dt)?
        } else {
            NoiseStream::silent()
        };
        Ok(Self {
            detector: cfg.detector,
            pfd: Pfd::new(),
            lowpass: cfg.detector_lowpass.map(|c| Lowpass2::new(c, cfg.dt)),
            controller: Controller::new(cfg.controller)?,
            delay: DelayLine::new(cfg.delay.transport_delay, cfg.dt)?,
            actuator: Actuator::new(cfg.actuator)?,
            noise,
            dt: cfg.dt,
            enabled: cfg.enabled,
            held: 0.0,
            command: 0.0,
            unlocked: false,
        })
    }

    pub fn set_enabled(&mut self, enabled: bool) {
        self.enabled = enabled;
    }

    /// Advances one step given the true loop error (rad). Returns the phase
    /// increment the actuator applies before the next step. While `dark`,
    /// the controller is frozen and issues its hold command.
    #[inline]
    pub fn step(&mut self, error: f64, injection: f64, dark: bool) -> f64 {
        if !dark {
            let e = error + self.noise.next_sample();
            let measured = match self.detector {
                DetectorKind::Ideal => e,
                DetectorKind::Mixer => {
                    self.unlocked = error.abs() > PI;
                    wrap_phase(e)
                }
                DetectorKind::Pfd => {
                    let out = self.pfd.update(e, 0.0);
                    self.unlocked = out.abs() >= TAU;
                    out
                }
            };
            let x = if self.enabled { injection - measured } else { injection };
            self.held = match &mut self.lowpass {
                Some(lp) => lp.step(x),
                None => x,
            };
        }
        // While dark the controller is frozen and issues only what it has
        // learned, so neither a stale reading nor its noise is acted on.
        let issued = if dark {
            self.controller.hold()
        } else {
            self.controller.step(self.held, self.dt)
        };
        let cmd = self.delay.push(issued);
        self.command = cmd;
        self.actuator.actuate(cmd, self.dt)
    }

    /// Command issued on the last step, Hz.
    pub fn command(&self) -> f64 {
        self.command
    }

    /// Whether the detector lost lock on the last bright step.
    pub fn unlocked(&self) -> bool {
        self.unlocked
    }
}

/// Collects unlock flags into closed intervals.
#[derive(Debug, Clone, Default)]
pub(crate) struct UnlockTracker {
    start: Option<f64>,
    pub events: Vec<crate::control::UnlockEvent>,
}

impl UnlockTracker {
    #[inline]
    pub fn observe(&mut self, unlocked: bool, t: f64) {
        match (unlocked, self.start) {
            (true, None) => self.start = Some(t),
            (false, Some(s)) => {
                self.events.push(crate::control::UnlockEvent { start: s, end: t });
                self.start = None;
            }
            _ => {}
        }
    }

    pub fn is_open(&self) -> bool {
        self.start.is_some()
    }

    pub fn finish(&mut self, t: f64) {
        if let Some(s) = self.start.take() {
            self.events.push(crate::control::UnlockEvent { start: s, end: t });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{ActuatorSpec, ControllerSpec, DelaySpec};
    use crate::phase::ClockSpec;

    fn cfg(enabled: bool) -> LoopConfig {
        LoopConfig {
            name: "t".into(),
            controller: ControllerSpec::p(1000.0).with_limits(-1e6, 1e6),
            actuator: ActuatorSpec::aom(1e6),
            delay: DelaySpec {
                transport_delay: 0.0,
                update_rate: None,
            },
            detector: DetectorKind::Ideal,
            detector_lowpass: None,
            clock: ClockSpec::new("c", 1e3, 0.0).unwrap(),
            dt: 1e-5,
            enabled,
        }
    }

    #[test]
    fn closed_loop_removes_a_step() {
        let mut s = LoopStepper::new(&cfg(true), 0.0, 1).unwrap();
        let mut phi = 0.0;
        for _ in 0..20_000 {
            phi += s.step(1.0 + phi, 0.0, false);
        }
        assert!((1.0 + phi).abs() < 1e-9);
    }

    #[test]
    fn open_loop_sees_only_injection() {
        let mut s = LoopStepper::new(&cfg(false), 0.0, 1).unwrap();
        let inc = s.step(5.0, 0.0, false);
        assert_eq!(inc, 0.0);
        let inc = s.step(5.0, 0.5, false);
        assert!((inc - TAU * 500.0 * 1e-5).abs() < 1e-15);
    }

    #[test]
    fn unlock_intervals_close() {
        let mut u = UnlockTracker::default();
        for (k, f) in [false, true, true, false, true].iter().enumerate() {
            u.observe(*f, k as f64);
        }
        u.finish(9.0);
        assert_eq!(u.events.len(), 2);
        assert_eq!((u.events[0].start, u.events[0].end), (1.0, 3.0));
        assert_eq!(u.events[1].end, 9.0);
    }
}
