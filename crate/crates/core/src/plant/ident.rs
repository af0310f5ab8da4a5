//! Loop identification by broadband injection with feedback on and off.
//!
//! The chosen loop runs alone at its own step against the ambient
//! disturbances it sees in the full system. Both runs draw the same ambient
//! realization; only the feedback switch differs. The stabilization light is
//! taken as always available, so dark periods do not apply.

use std::f64::consts::TAU;

use crate::control::{LoopModel, UnlockEvent};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, NoiseKind, NoiseProcess, NoiseStream};
use crate::series::{TimeSeries, Unit};

use super::model::{LoopId, SystemModel};
use super::sim::{simulate, PathNoise};
use super::stepper::{LoopStepper, UnlockTracker};

/// Records of one identification.
#[derive(Debug, Clone)]
pub struct Identification {
    pub loop_id: LoopId,
    pub injected: TimeSeries,
    /// True loop error with feedback on.
    pub measured_on: TimeSeries,
    /// True loop error with feedback off.
    pub measured_off: TimeSeries,
    /// Analytic model of the identified loop.
    pub model: LoopModel,
    /// Unlocks during the off-run. The run is kept.
    pub unlocks_off: Vec<UnlockEvent>,
}

enum Ambient {
    Local {
        d1: PathNoise,
        d2: PathNoise,
    },
    Fast {
        ex: NoiseStream,
        pump: NoiseStream,
        reference: NoiseStream,
        d2: PathNoise,
        d4: PathNoise,
        d5: PathNoise,
        temperature: PathNoise,
        d6: PathNoise,
        d8: PathNoise,
        phase_per_metre: f64,
        length_per_kelvin: f64,
        pump_step: f64,
        pump_phase: f64,
    },
}

impl Ambient {
    fn build(system: &SystemModel, id: LoopId) -> Result<Self> {
        let scale = system.drift_time_scale;
        let stream = |p: Option<&NoiseProcess>, dt: f64| -> Result<NoiseStream> {
            p.map_or(Ok(NoiseStream::silent()), |p| p.stream(dt))
        };
        match id {
            LoopId::LocalA | LoopId::LocalB => {
                let x = (id == LoopId::LocalB) as usize;
                let dt = system.steps.local;
                let n = &system.nodes[x];
                Ok(Ambient::Local {
                    d1: PathNoise::new(&n.paths[0], dt, dt, "d1")?,
                    d2: PathNoise::new(&n.paths[1], dt, dt, "d2")?,
                })
            }
            LoopId::FastA | LoopId::FastB => {
                let x = (id == LoopId::FastB) as usize;
                let dt = system.steps.fast;
                let n = &system.nodes[x];
                let arm = &system.midpoint.arms[x];
                Ok(Ambient::Fast {
                    ex: stream(n.excitation_laser.phase_noise.as_ref(), dt)?,
                    pump: stream(n.pump_laser.phase_noise.as_ref(), dt)?,
                    reference: stream(system.midpoint.reference_laser.phase_noise.as_ref(), dt)?,
                    d2: PathNoise::new(&n.paths[1], dt, dt, "d2")?,
                    d4: PathNoise::new(&n.paths[3], dt, dt, "d4")?,
                    d5: PathNoise::new(&arm.fiber, dt, dt, "d5")?,
                    temperature: PathNoise::from_process(arm.fiber_temperature.as_ref(), dt * scale, "temperature")?,
                    d6: PathNoise::new(&arm.d6, dt, dt, "d6")?,
                    d8: PathNoise::new(&arm.d8, dt, dt, "d8")?,
                    phase_per_metre: arm.phase_per_metre(),
                    length_per_kelvin: arm.expansion * arm.fiber.length,
                    pump_step: TAU * n.pump_frequency_offset * dt,
                    pump_phase: 0.0,
                })
            }
            LoopId::Global => Err(declined()),
        }
    }

    #[inline]
    fn next(&mut self) -> f64 {
        // Every process is drawn at the loop step, so the drift samples are
        // used as they come.
        let step = |p: &mut PathNoise| {
            let v = p.sample(0.0);
            p.advance_drift();
            v
        };
        match self {
            Ambient::Local { d1, d2 } => step(d1) - step(d2),
            Ambient::Fast {
                ex,
                pump,
                reference,
                d2,
                d4,
                d5,
                temperature,
                d6,
                d8,
                phase_per_metre,
                length_per_kelvin,
                pump_step,
                pump_phase,
            } => {
                let fiber = step(d5) + *phase_per_metre * *length_per_kelvin * step(temperature);
                let v = ex.next_sample() - pump.next_sample() - reference.next_sample() + step(d2) + step(d4) + fiber
                    + step(d6)
                    - step(d8)
                    - *pump_phase;
                *pump_phase += *pump_step;
                v
            }
        }
    }
}

fn declined() -> Error {
    Error::IdentificationDeclined(
        "global".into(),
        "its error comes from single-photon counts, where an injected signal would drown in shot noise; \
         compare the residual spectra with the loop on and off instead"
            .into(),
    )
}

/// Band-limited white injection sized by the system's identification settings.
pub fn default_injection(system: &SystemModel, id: LoopId) -> Result<NoiseProcess> {
    if id == LoopId::Global {
        return Err(declined());
    }
    let cfg = &system.identification;
    let dt = system.loop_config(id).dt;
    let nyquist = 0.5 / dt;
    let fraction = cfg.bandwidth_fraction.clamp(0.0, 1.0);
    Ok(NoiseProcess::new(
        NoiseKind::White {
            std: cfg.amplitude_deg.to_radians(),
            bandwidth: (fraction < 1.0).then_some(fraction * nyquist),
        },
        derive_seed(system.master_seed, &format!("injection/{id}")),
    ))
}

/// Runs loop `id` with feedback on and off for `samples` steps each.
pub fn run_identification(
    system: &SystemModel,
    id: LoopId,
    injection: &NoiseProcess,
    samples: usize,
) -> Result<Identification> {
    if id == LoopId::Global {
        return Err(declined());
    }
    let cfg = system.loop_config(id).clone();
    let dt = cfg.dt;
    injection.validate(dt)?;
    if samples < 64 {
        return Err(crate::error::invalid("samples", "identification needs at least 64 samples"));
    }
    let noise = match id {
        LoopId::LocalA => system.nodes[0].detector_noise,
        LoopId::LocalB => system.nodes[1].detector_noise,
        LoopId::FastA => system.midpoint.arms[0].detector_noise,
        _ => system.midpoint.arms[1].detector_noise,
    };
    let injected = injection.generate(dt, samples)?;
    let run = |enabled: bool| -> Result<(Vec<f64>, Vec<UnlockEvent>)> {
        let mut ambient = Ambient::build(system, id)?;
        let mut stepper = LoopStepper::new(&cfg, noise, derive_seed(system.master_seed, &format!("detector/{id}")))?;
        stepper.set_enabled(enabled);
        let mut unlock = UnlockTracker::default();
        let mut out = Vec::with_capacity(samples);
        let first = ambient.next();
        // Start in lock, as the full simulation does.
        let mut phi = -first;
        for (k, &r) in injected.samples().iter().enumerate() {
            let d = if k == 0 { first } else { ambient.next() };
            let y = d + phi;
            out.push(y);
            phi += stepper.step(y, r, false);
            unlock.observe(stepper.unlocked(), k as f64 * dt);
        }
        unlock.finish(samples as f64 * dt);
        Ok((out, unlock.events))
    };
    let (on, _) = run(true)?;
    let (off, unlocks_off) = run(false)?;
    Ok(Identification {
        loop_id: id,
        measured_on: TimeSeries::new(dt, on, Unit::Rad)?,
        measured_off: TimeSeries::new(dt, off, Unit::Rad)?,
        injected: injected.with_unit(Unit::Rad),
        model: cfg.model(),
        unlocks_off,
    })
}

/// Global-loop residuals over `duration` with the loop on and off, for
/// comparing their spectra when injection is not possible.
pub fn global_residuals(system: &SystemModel, duration: f64) -> Result<(TimeSeries, TimeSeries)> {
    let on = simulate(system, duration)?.eta_global;
    let mut open = system.clone();
    open.midpoint.global_loop.enabled = false;
    let off = simulate(&open, duration)?.eta_global;
    Ok((on, off))
}
