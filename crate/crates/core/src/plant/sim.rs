//! Multirate envelope-phase simulation of both nodes and the midpoint.
//!
//! Phases are deviations from the nominal carriers. Per arm, at the fast
//! detector the stabilization light carries
//! `θ_Ex + φ_D2 + φ_D4 − θ_pump − φ_pump + φ_D5 + φ_AOM + φ_D6`, where
//! `φ_pump` is the pump phase from desaturation and static detuning. The fast
//! loop holds it on `θ_Ref + φ_D8 + setpoint`. The single photons carry the
//! same terms with D1 and the local actuator in place of D2, D7 in place of
//! D6 and the extra `θ_err` from the fiber length change. The laser terms
//! cancel in the local error `φ_D1 + φ_AOME − φ_D2`.
//!
//! The fast loops run at the fine step, node loops at the local step, the
//! count demodulation and global loop at the global step and thermal
//! processes at the drift step. Slow terms are interpolated linearly between
//! their samples. Node terms are held over each local step so that the
//! local error equals the single-photon minus stabilization phase exactly.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::control::{Desaturator, DetectorKind, UnlockEvent};
use crate::error::{invalid, Error, Result};
use crate::noise::{derive_seed, NoiseKind, NoiseProcess, NoiseStream};
use crate::phase::{wrap_phase, PathSegment, SPEED_OF_LIGHT};
use crate::series::{RunningStats, TimeSeries, Unit};

use super::feedforward::feedforward_phase;
use super::model::{LoopId, SystemModel};
use super::snspd::{expected_counts, BeatDemod};
use super::stepper::{LoopStepper, UnlockTracker};

/// Sum of a path's disturbances, split by the rate they are drawn at.
#[derive(Debug, Clone)]
pub(crate) struct PathNoise {
    fine: Vec<NoiseStream>,
    drift: Vec<NoiseStream>,
    lo: f64,
    hi: f64,
}

impl PathNoise {
    /// Thermal processes run at `drift_dt`, everything else at `dt`.
    pub fn new(path: &PathSegment, dt: f64, drift_dt: f64, key: &str) -> Result<Self> {
        let mut fine = Vec::new();
        let mut drift = Vec::new();
        for p in &path.drift {
            let wrap = |e: Error| Error::Config {
                key: format!("{key} ({})", p.kind.name()),
                message: e.to_string(),
            };
            if matches!(p.kind, NoiseKind::ThermalDrift { .. }) {
                drift.push(p.stream(drift_dt).map_err(wrap)?);
            } else {
                fine.push(p.stream(dt).map_err(wrap)?);
            }
        }
        let mut s = Self {
            fine,
            drift,
            lo: 0.0,
            hi: 0.0,
        };
        s.lo = s.draw_drift();
        s.hi = s.draw_drift();
        Ok(s)
    }

    pub fn from_process(p: Option<&NoiseProcess>, drift_dt: f64, key: &str) -> Result<Self> {
        let drift = match p {
            Some(p) => vec![p.stream(drift_dt).map_err(|e| Error::Config {
                key: key.to_string(),
                message: e.to_string(),
            })?],
            None => Vec::new(),
        };
        let mut s = Self {
            fine: Vec::new(),
            drift,
            lo: 0.0,
            hi: 0.0,
        };
        s.lo = s.draw_drift();
        s.hi = s.draw_drift();
        Ok(s)
    }

    fn draw_drift(&mut self) -> f64 {
        self.drift.iter_mut().map(|s| s.next_sample()).sum()
    }

    pub fn advance_drift(&mut self) {
        self.lo = self.hi;
        self.hi = self.draw_drift();
    }

    /// Next fine sample plus the drift interpolated at `frac` of the drift step.
    #[inline]
    pub fn sample(&mut self, frac: f64) -> f64 {
        let f: f64 = self.fine.iter_mut().map(|s| s.next_sample()).sum();
        f + self.lo + (self.hi - self.lo) * frac
    }
}

fn laser_stream(p: Option<&NoiseProcess>, dt: f64, key: &str) -> Result<NoiseStream> {
    match p {
        Some(p) => p.stream(dt).map_err(|e| Error::Config {
            key: key.to_string(),
            message: e.to_string(),
        }),
        None => Ok(NoiseStream::silent()),
    }
}

/// Slow terms of one side at one local-step instant.
#[derive(Debug, Clone, Copy, Default)]
struct Slow {
    d1: f64,
    d2: f64,
    d4: f64,
    /// D5 phase of the stabilization light: vibrations plus length change.
    fiber: f64,
    theta_err: f64,
    d6: f64,
    d7: f64,
    d8: f64,
    /// Fiber length change, m.
    dl: f64,
}

impl Slow {
    #[inline]
    fn lerp(&self, o: &Slow, f: f64) -> Slow {
        let l = |a: f64, b: f64| a + (b - a) * f;
        Slow {
            d1: self.d1,
            d2: self.d2,
            d4: l(self.d4, o.d4),
            fiber: l(self.fiber, o.fiber),
            theta_err: l(self.theta_err, o.theta_err),
            d6: l(self.d6, o.d6),
            d7: l(self.d7, o.d7),
            d8: l(self.d8, o.d8),
            dl: l(self.dl, o.dl),
        }
    }
}

/// Node X together with arm X of the midpoint.
#[derive(Debug, Clone)]
struct Side {
    ex: NoiseStream,
    pump: NoiseStream,
    d: [PathNoise; 3],
    d5: PathNoise,
    temperature: PathNoise,
    mid: [PathNoise; 3],
    length_per_kelvin: f64,
    phase_per_metre: f64,
    err_per_metre: f64,
    roundtrip0: f64,
    index: f64,
    length: f64,
    offset_clock: f64,

    local: LoopStepper,
    aome: f64,
    /// Local actuator phase in effect during the current local step.
    aome_held: f64,
    eta_local: f64,

    fast: LoopStepper,
    aomn: f64,
    desat: Option<Desaturator>,
    pump_correction: f64,
    pump_phase: f64,
    pump_offset: f64,
    setpoint: f64,
    eta_fast: f64,
    stab7: f64,
    zpl: f64,

    cur: Slow,
    next: Slow,
}

impl Side {
    fn evaluate(&mut self, drift_frac: f64) -> Slow {
        let d1 = self.d[0].sample(drift_frac);
        let d2 = self.d[1].sample(drift_frac);
        let d4 = self.d[2].sample(drift_frac);
        let dl = self.length_per_kelvin * self.temperature.sample(drift_frac);
        let vib = self.d5.sample(drift_frac);
        Slow {
            d1,
            d2,
            d4,
            fiber: vib + self.phase_per_metre * dl,
            theta_err: self.err_per_metre * dl,
            d6: self.mid[0].sample(drift_frac),
            d7: self.mid[1].sample(drift_frac),
            d8: self.mid[2].sample(drift_frac),
            dl,
        }
    }

    fn advance_drift(&mut self) {
        for p in self.d.iter_mut().chain(self.mid.iter_mut()) {
            p.advance_drift();
        }
        self.d5.advance_drift();
        self.temperature.advance_drift();
    }

    /// Net phase applied by the fast actuator and the pump, rad.
    fn actuator_phase(&self) -> f64 {
        self.aomn - self.pump_phase
    }

    /// Whole turns of fiber phase the fast loop has compensated.
    fn slips(&self) -> i64 {
        (-self.actuator_phase() / TAU).trunc() as i64
    }
}

/// Per-loop residual statistics over the whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LoopStats {
    pub local: [RunningStats; 2],
    pub fast: [RunningStats; 2],
    pub global: RunningStats,
    pub total: RunningStats,
}

impl LoopStats {
    pub fn get(&self, id: LoopId) -> &RunningStats {
        match id {
            LoopId::LocalA => &self.local[0],
            LoopId::LocalB => &self.local[1],
            LoopId::FastA => &self.fast[0],
            LoopId::FastB => &self.fast[1],
            LoopId::Global => &self.global,
        }
    }
}

/// An unlock interval attributed to a loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopUnlock {
    pub loop_id: LoopId,
    pub event: UnlockEvent,
}

/// Everything recorded during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub seed: u64,
    pub eta_local: [TimeSeries; 2],
    pub eta_fast: [TimeSeries; 2],
    pub eta_global: TimeSeries,
    pub eta_total: TimeSeries,
    pub theta_err: [TimeSeries; 2],
    /// Phase the global loop steers to: setpoint minus feed-forward correction.
    pub global_target: TimeSeries,
    pub slip_count: [Vec<i64>; 2],
    pub local_command: [TimeSeries; 2],
    pub fast_command: [TimeSeries; 2],
    pub pump_correction: [TimeSeries; 2],
    pub global_command: TimeSeries,
    /// Stabilization-light counts per global bin.
    pub counts: [TimeSeries; 2],
    pub unlocks: Vec<LoopUnlock>,
    pub stats: LoopStats,
    /// Residual beat between the nodes' single photons, Hz.
    pub omega_tot: f64,
    pub theta_offset: f64,
}

impl SimOutput {
    /// Named recorded columns sharing the record step, in a stable order.
    pub fn columns(&self) -> Vec<(&'static str, &TimeSeries)> {
        vec![
            ("eta_local_a", &self.eta_local[0]),
            ("eta_local_b", &self.eta_local[1]),
            ("eta_fast_a", &self.eta_fast[0]),
            ("eta_fast_b", &self.eta_fast[1]),
            ("eta_global", &self.eta_global),
            ("eta_total", &self.eta_total),
            ("theta_err_a", &self.theta_err[0]),
            ("theta_err_b", &self.theta_err[1]),
            ("global_target", &self.global_target),
            ("local_command_a", &self.local_command[0]),
            ("local_command_b", &self.local_command[1]),
            ("fast_command_a", &self.fast_command[0]),
            ("fast_command_b", &self.fast_command[1]),
            ("pump_correction_a", &self.pump_correction[0]),
            ("pump_correction_b", &self.pump_correction[1]),
            ("global_command", &self.global_command),
        ]
    }

    /// Total phase rebuilt from the loop components:
    /// `η_loc,A − η_loc,B + η_fast,A − η_fast,B + θ_err,A − θ_err,B + η_glob + target + 2πΩt + θ_offset`.
    pub fn composed_total(&self) -> Vec<f64> {
        let dt = self.eta_total.dt();
        (0..self.eta_total.len())
            .map(|k| {
                let s = |ts: &TimeSeries| ts.samples()[k];
                s(&self.eta_local[0]) - s(&self.eta_local[1]) + s(&self.eta_fast[0]) - s(&self.eta_fast[1])
                    + s(&self.theta_err[0])
                    - s(&self.theta_err[1])
                    + s(&self.eta_global)
                    + s(&self.global_target)
                    + TAU * self.omega_tot * k as f64 * dt
                    + self.theta_offset
            })
            .collect()
    }

    pub fn unlock_count(&self) -> usize {
        self.unlocks.len()
    }
}

#[derive(Debug, Default)]
struct Recorder {
    cols: Vec<Vec<f64>>,
    slips: [Vec<i64>; 2],
    counts: [Vec<f64>; 2],
}

const RECORDED: usize = 16;

/// Stepper over the whole system.
///
/// Call [`Simulator::advance`] as often as needed, change the global
/// setpoint in between, and collect the record with [`Simulator::finish`].
#[derive(Debug)]
pub struct Simulator {
    seed: u64,
    fast_dt: f64,
    local_dt: f64,
    fast_per_local: usize,
    local_per_global: usize,
    local_per_drift: usize,
    local_per_record: usize,
    ff_every: u64,
    k_local: u64,
    k_global: u64,

    reference: NoiseStream,
    sides: [Side; 2],

    global: LoopStepper,
    global_enabled: bool,
    demod: BeatDemod,
    demod_settle: u64,
    snr_threshold: f64,
    global_command: f64,
    setpoint: f64,
    ff_enabled: bool,
    ff_correction: f64,
    ff_rng: ChaCha8Rng,
    ff_noise: f64,

    leak_rate: f64,
    visibility: f64,
    beat: f64,
    bin: [f64; 2],
    counts_rng: ChaCha8Rng,
    noiseless: bool,

    dark: Option<(u64, u64)>,
    duty: f64,

    zpl_counting: bool,
    zpl_visibility: f64,
    reflected_rate: f64,
    zpl_counts: [f64; 2],

    omega_tot: f64,
    theta_offset: f64,
    eta_total: f64,
    psi: f64,

    rec: Recorder,
    stats: LoopStats,
    unlock: [UnlockTracker; 5],
}

impl Simulator {
    pub fn new(system: &SystemModel) -> Result<Self> {
        system.validate()?;
        let st = system.steps;
        let seed = system.master_seed;
        // Only fiber temperature is time-scaled; phase drifts stay in real time.
        let temperature_dt = st.drift * system.drift_time_scale;
        let drift_dt = st.drift;
        let mut sides = Vec::with_capacity(2);
        for x in 0..2 {
            let node = &system.nodes[x];
            let arm = &system.midpoint.arms[x];
            let tag = ["a", "b"][x];
            let nk = format!("nodes.{tag}.paths");
            let ak = format!("midpoint.arms.{tag}");
            let path = |p: &PathSegment, dt: f64, key: String| PathNoise::new(p, dt, drift_dt, &key);
            let offset = node.stabilization_offset_clock.frequency;
            let n = arm.fiber.refractive_index;
            let mut local_cfg = node.local_loop.clone();
            local_cfg.dt = st.local;
            let mut fast_cfg = arm.fast_loop.clone();
            fast_cfg.dt = st.fast;
            let mut side = Side {
                ex: laser_stream(node.excitation_laser.phase_noise.as_ref(), st.fast, &format!("nodes.{tag}.excitation_noise"))?,
                pump: laser_stream(node.pump_laser.phase_noise.as_ref(), st.fast, &format!("nodes.{tag}.pump_noise"))?,
                d: [
                    path(&node.paths[0], st.local, format!("{nk}.d1"))?,
                    path(&node.paths[1], st.local, format!("{nk}.d2"))?,
                    path(&node.paths[3], st.local, format!("{nk}.d4"))?,
                ],
                d5: path(&arm.fiber, st.local, format!("{ak}.fiber"))?,
                temperature: PathNoise::from_process(arm.fiber_temperature.as_ref(), temperature_dt, &format!("{ak}.fiber.temperature"))?,
                mid: [
                    path(&arm.d6, st.drift, format!("{ak}.d6"))?,
                    path(&arm.d7, st.drift, format!("{ak}.d7"))?,
                    path(&arm.d8, st.drift, format!("{ak}.d8"))?,
                ],
                length_per_kelvin: arm.expansion * arm.fiber.length,
                phase_per_metre: arm.phase_per_metre(),
                err_per_metre: TAU * n * offset / SPEED_OF_LIGHT,
                roundtrip0: 2.0 * n * arm.fiber.length / SPEED_OF_LIGHT,
                index: n,
                length: arm.fiber.length,
                offset_clock: offset,
                local: LoopStepper::new(&local_cfg, node.detector_noise, derive_seed(seed, &format!("detector/local-{tag}")))?,
                aome: 0.0,
                aome_held: 0.0,
                eta_local: 0.0,
                fast: LoopStepper::new(&fast_cfg, arm.detector_noise, derive_seed(seed, &format!("detector/fast-{tag}")))?,
                aomn: 0.0,
                desat: arm.desaturation.map(|d| Desaturator::new(d, st.fast)).transpose()?,
                pump_correction: 0.0,
                pump_phase: 0.0,
                pump_offset: node.pump_frequency_offset,
                setpoint: 0.0,
                eta_fast: 0.0,
                stab7: 0.0,
                zpl: 0.0,
                cur: Slow::default(),
                next: Slow::default(),
            };
            side.cur = side.evaluate(0.0);
            side.next = side.evaluate(1.0 / st.local_per_drift() as f64);
            // Start in lock: resonators begin in a stationary state whose
            // phase may exceed the detector range.
            let c = side.cur;
            side.aome = -(c.d1 - c.d2);
            side.aomn = -(c.d2 + c.d4 + c.fiber + c.d6 - c.d8);
            sides.push(side);
        }
        let [a, b]: [Side; 2] = sides.try_into().expect("two sides");

        let g = &system.midpoint.global_loop;
        let mut gcfg = g.clone();
        gcfg.detector = DetectorKind::Ideal;
        gcfg.detector_lowpass = None;
        gcfg.enabled = true;
        let snspd = &system.midpoint.snspd;
        let corner = g.detector_lowpass.unwrap_or(super::snspd::DEFAULT_DEMOD_LOWPASS);
        let ff = &system.midpoint.feedforward;
        let ff_every = (ff.update_period / st.global).round().max(1.0) as u64;

        let dark = system.dark_periods.map(|d| {
            let period = (d.period / st.fast).round().max(1.0) as u64;
            let dark = ((d.duration / st.fast).round() as u64).min(period);
            (period, dark)
        });
        let duty = dark.map_or(1.0, |(p, d)| 1.0 - d as f64 / p as f64);

        Ok(Self {
            seed,
            fast_dt: st.fast,
            local_dt: st.local,
            fast_per_local: st.fast_per_local(),
            local_per_global: st.local_per_global(),
            local_per_drift: st.local_per_drift(),
            local_per_record: st.local_per_record(),
            ff_every,
            k_local: 0,
            k_global: 0,
            reference: laser_stream(system.midpoint.reference_laser.phase_noise.as_ref(), st.fast, "midpoint.reference_noise")?,
            sides: [a, b],
            global: LoopStepper::new(&gcfg, 0.0, 0)?,
            global_enabled: g.enabled,
            demod: BeatDemod::new(&g.clock, corner, st.global)?,
            demod_settle: (5.0 / (corner * st.global)).ceil() as u64,
            snr_threshold: snspd.snr_threshold,
            global_command: 0.0,
            setpoint: system.midpoint.global_setpoint,
            ff_enabled: ff.enabled,
            ff_correction: 0.0,
            ff_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "roundtrip")),
            ff_noise: ff.roundtrip_measurement_noise,
            leak_rate: snspd.leak_rate,
            visibility: snspd.visibility,
            beat: system.global_beat(),
            bin: [0.0; 2],
            counts_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "snspd")),
            noiseless: system.noiseless,
            dark,
            duty,
            zpl_counting: false,
            zpl_visibility: system.fringe.visibility,
            reflected_rate: system.nodes[0].reflected_rate + system.nodes[1].reflected_rate,
            zpl_counts: [0.0; 2],
            omega_tot: system.plan.omega_tot_residual() as f64,
            theta_offset: system.theta_offset,
            eta_total: system.theta_offset,
            psi: 0.0,
            rec: Recorder {
                cols: vec![Vec::new(); RECORDED],
                ..Default::default()
            },
            stats: LoopStats::default(),
            unlock: Default::default(),
        })
    }

    /// Simulated time so far, s.
    pub fn time(&self) -> f64 {
        self.k_local as f64 * self.local_dt
    }

    /// Sets the global clock phase (rad) the fringe is steered to.
    pub fn set_global_setpoint(&mut self, mu: f64) {
        self.setpoint = mu;
    }

    pub fn global_setpoint(&self) -> f64 {
        self.setpoint
    }

    /// Turns counting of the reflected single-photon light on or off.
    pub fn set_zpl_counting(&mut self, on: bool) {
        self.zpl_counting = on;
    }

    /// Cumulative counts of the reflected light at both detectors.
    pub fn zpl_counts(&self) -> [f64; 2] {
        self.zpl_counts
    }

    /// Current true `θ_err,A − θ_err,B`, rad.
    pub fn theta_err_difference(&self) -> f64 {
        self.sides[0].cur.theta_err - self.sides[1].cur.theta_err
    }

    /// Current total phase error, rad.
    pub fn eta_total(&self) -> f64 {
        self.eta_total
    }

    pub fn stats(&self) -> &LoopStats {
        &self.stats
    }

    /// Forgets the residual statistics gathered so far, e.g. after settling.
    pub fn reset_stats(&mut self) {
        self.stats = LoopStats::default();
    }

    fn target(&self) -> f64 {
        self.setpoint - self.ff_correction
    }

    /// Advances by `duration`, rounded to whole local steps.
    pub fn advance(&mut self, duration: f64) -> Result<()> {
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(invalid("duration", "duration must be non-negative"));
        }
        let n = (duration / self.local_dt).round() as u64;
        for _ in 0..n {
            self.local_step();
        }
        Ok(())
    }

    fn record(&mut self) {
        let target = self.target();
        let [a, b] = &self.sides;
        let eta_glob = self.psi - (a.eta_fast - b.eta_fast) - target;
        let row = [
            a.eta_local,
            b.eta_local,
            a.eta_fast,
            b.eta_fast,
            eta_glob,
            self.eta_total,
            a.cur.theta_err,
            b.cur.theta_err,
            target,
            a.local.command(),
            b.local.command(),
            a.fast.command(),
            b.fast.command(),
            a.pump_correction,
            b.pump_correction,
            self.global_command,
        ];
        for (c, v) in self.rec.cols.iter_mut().zip(row) {
            c.push(v);
        }
        self.rec.slips[0].push(a.slips());
        self.rec.slips[1].push(b.slips());
    }

    fn local_step(&mut self) {
        let j = self.k_local;
        if j.is_multiple_of(self.local_per_record as u64) {
            self.record();
        }
        let t0 = j as f64 * self.local_dt;

        // Node loops on the held node terms.
        for (x, s) in self.sides.iter_mut().enumerate() {
            let err = s.cur.d1 + s.aome - s.cur.d2;
            s.eta_local = err;
            s.aome_held = s.aome;
            let inc = s.local.step(err, 0.0, false);
            s.aome += inc;
            self.stats.local[x].push(err);
            self.unlock[x].observe(s.local.unlocked(), t0);
        }

        let r = self.fast_per_local;
        let inv_r = 1.0 / r as f64;
        let fdt = self.fast_dt;
        let slew = TAU * self.global_command * fdt;
        let omega = TAU * self.omega_tot;
        let base = j * r as u64;
        let mut cos_acc = 0.0;
        let mut bright = 0usize;
        for i in 0..r {
            let k = base + i as u64;
            let dark = self.dark.is_some_and(|(p, d)| k % p < d);
            let theta_ref = self.reference.next_sample();
            let frac = i as f64 * inv_r;
            for (x, s) in self.sides.iter_mut().enumerate() {
                let sl = s.cur.lerp(&s.next, frac);
                let theta_ex = s.ex.next_sample();
                let theta_pump = s.pump.next_sample();
                let stab6 =
                    theta_ex + sl.d2 + sl.d4 - theta_pump - s.pump_phase + sl.fiber + s.aomn + sl.d6;
                let eta_fast = stab6 - (theta_ref + sl.d8 + s.setpoint);
                s.eta_fast = eta_fast;
                let inc = s.fast.step(eta_fast, 0.0, dark);
                s.aomn += inc;
                if let Some(d) = &mut s.desat {
                    s.pump_correction = d.step(s.fast.command());
                }
                s.pump_phase += TAU * (s.pump_correction + s.pump_offset) * fdt;
                s.stab7 = stab6 - sl.d6 + sl.d7;
                s.zpl = s.stab7 - sl.d2 + sl.d1 + s.aome_held + sl.theta_err;
                self.stats.fast[x].push(eta_fast);
            }
            let [a, b] = &mut self.sides;
            if a.fast.unlocked() || b.fast.unlocked() || self.unlock[2].is_open() || self.unlock[3].is_open() {
                let t = k as f64 * fdt;
                self.unlock[2].observe(a.fast.unlocked(), t);
                self.unlock[3].observe(b.fast.unlocked(), t);
            }
            self.psi = a.stab7 - b.stab7;
            let eta = a.zpl - b.zpl + omega * (k as f64 * fdt) + self.theta_offset;
            self.eta_total = eta;
            self.stats.total.push(eta);
            a.setpoint += slew;
            // Single photons are collected while the stabilization light is
            // off, or at every step when there are no dark periods.
            if self.zpl_counting && (dark || self.dark.is_none()) {
                cos_acc += eta.cos();
                bright += 1;
            }
        }
        let t1 = (j + 1) as f64 * self.local_dt;

        // Global loop error after the fast steps of this local step.
        {
            let target = self.target();
            let [a, b] = &self.sides;
            self.stats.global.push(self.psi - (a.eta_fast - b.eta_fast) - target);
        }

        // Detector counts over this local step.
        let (l1, l2) = expected_counts(self.leak_rate * self.duty, self.visibility, self.beat, self.psi, t0, self.local_dt);
        let (c1, c2) = if self.noiseless {
            (l1, l2)
        } else {
            (poisson(&mut self.counts_rng, l1), poisson(&mut self.counts_rng, l2))
        };
        self.bin[0] += c1;
        self.bin[1] += c2;
        if self.zpl_counting && bright > 0 {
            let m = cos_acc / bright as f64;
            let lam = self.reflected_rate * (bright as f64 / r as f64) * self.local_dt;
            let (z1, z2) = (lam * (1.0 + self.zpl_visibility * m), lam * (1.0 - self.zpl_visibility * m));
            if self.noiseless {
                self.zpl_counts[0] += z1;
                self.zpl_counts[1] += z2;
            } else {
                self.zpl_counts[0] += poisson(&mut self.counts_rng, z1);
                self.zpl_counts[1] += poisson(&mut self.counts_rng, z2);
            }
        }

        self.k_local = j + 1;
        if self.k_local.is_multiple_of(self.local_per_global as u64) {
            self.global_step(t1);
        }

        // Slow terms for the next local step.
        let next_index = self.k_local + 1;
        let lpd = self.local_per_drift as u64;
        let frac = (next_index % lpd) as f64 / lpd as f64;
        for s in &mut self.sides {
            s.cur = s.next;
            if next_index.is_multiple_of(lpd) {
                s.advance_drift();
            }
            s.next = s.evaluate(frac);
        }
    }

    fn global_step(&mut self, t: f64) {
        let [c1, c2] = std::mem::take(&mut self.bin);
        self.rec.counts[0].push(c1);
        self.rec.counts[1].push(c2);
        let (phase, snr) = self.demod.step(c1, c2);
        self.k_global += 1;

        if self.ff_enabled && self.k_global.is_multiple_of(self.ff_every) {
            let mut est = [0.0; 2];
            for (x, s) in self.sides.iter().enumerate() {
                let noise = if self.ff_noise > 0.0 {
                    Normal::new(0.0, self.ff_noise).expect("positive std").sample(&mut self.ff_rng)
                } else {
                    0.0
                };
                let rt = 2.0 * s.index * (s.length + s.cur.dl) / SPEED_OF_LIGHT + noise;
                est[x] = feedforward_phase(rt - s.roundtrip0, s.offset_clock);
            }
            self.ff_correction = est[0] - est[1];
        }

        let settled = self.k_global > self.demod_settle;
        let starved = settled && snr < self.snr_threshold;
        self.unlock[4].observe(starved, t);
        // The demodulator output is not trusted until its lowpass has settled.
        let err = if starved || !settled { 0.0 } else { wrap_phase(phase - self.target()) };
        let inc = self.global.step(err, 0.0, false);
        self.global_command = if self.global_enabled {
            inc / (TAU * self.global_step_dt())
        } else {
            0.0
        };
    }

    fn global_step_dt(&self) -> f64 {
        self.local_dt * self.local_per_global as f64
    }

    /// Closes the record.
    pub fn finish(mut self) -> Result<SimOutput> {
        self.record();
        let t = self.time();
        for u in &mut self.unlock {
            u.finish(t);
        }
        let rec_dt = self.local_dt * self.local_per_record as f64;
        let gdt = self.global_step_dt();
        let mut cols = std::mem::take(&mut self.rec.cols).into_iter();
        let mut next = |unit: Unit| TimeSeries::new(rec_dt, cols.next().expect("column"), unit);
        let eta_local = [next(Unit::Rad)?, next(Unit::Rad)?];
        let eta_fast = [next(Unit::Rad)?, next(Unit::Rad)?];
        let eta_global = next(Unit::Rad)?;
        let eta_total = next(Unit::Rad)?;
        let theta_err = [next(Unit::Rad)?, next(Unit::Rad)?];
        let global_target = next(Unit::Rad)?;
        let local_command = [next(Unit::Hz)?, next(Unit::Hz)?];
        let fast_command = [next(Unit::Hz)?, next(Unit::Hz)?];
        let pump_correction = [next(Unit::Hz)?, next(Unit::Hz)?];
        let global_command = next(Unit::Hz)?;
        let [ca, cb] = std::mem::take(&mut self.rec.counts);
        let mut unlocks = Vec::new();
        for (id, u) in LoopId::ALL.into_iter().zip(&self.unlock) {
            unlocks.extend(u.events.iter().map(|&event| LoopUnlock { loop_id: id, event }));
        }
        unlocks.sort_by(|x, y| x.event.start.total_cmp(&y.event.start));
        Ok(SimOutput {
            seed: self.seed,
            eta_local,
            eta_fast,
            eta_global,
            eta_total,
            theta_err,
            global_target,
            slip_count: std::mem::take(&mut self.rec.slips),
            local_command,
            fast_command,
            pump_correction,
            global_command,
            counts: [TimeSeries::new(gdt, ca, Unit::Counts)?, TimeSeries::new(gdt, cb, Unit::Counts)?],
            unlocks,
            stats: self.stats,
            omega_tot: self.omega_tot,
            theta_offset: self.theta_offset,
        })
    }
}

#[inline]
fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> f64 {
    if lambda > 0.0 {
        Poisson::new(lambda).expect("positive mean").sample(rng)
    } else {
        0.0
    }
}

/// Runs the system for `duration` seconds from rest.
pub fn simulate(system: &SystemModel, duration: f64) -> Result<SimOutput> {
    if !(duration > 0.0) {
        return Err(invalid("duration", "duration must be positive"));
    }
    let mut sim = Simulator::new(system)?;
    sim.advance(duration)?;
    sim.finish()
}
