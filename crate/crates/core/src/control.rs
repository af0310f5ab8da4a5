//! Discrete-time loop elements: controllers, phase detectors, actuators,
//! desaturation offload and transport delays.
//!
//! Sign convention used throughout: a loop measures the residual
//! `η = φ − setpoint`, feeds `−η` to its controller, and the actuator adds
//! `2π·command·dt` to the controlled phase every step.

use std::collections::VecDeque;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI, TAU};

use num_complex::Complex64;

use crate::error::{invalid, require, Result};
use crate::phase::{wrap_phase, ClockSpec};
use crate::series::{TimeSeries, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    P,
    PWithRolloff,
    PI,
}

/// Controller parameters. `gain` maps rad of error to Hz of frequency command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    pub gain: f64,
    /// Hz, PI only.
    pub integral_corner: f64,
    /// Hz, roll-off only.
    pub rolloff_corner: f64,
    /// Hz.
    pub output_limits: (f64, f64),
}

impl ControllerSpec {
    pub fn p(gain: f64) -> Self {
        Self {
            kind: ControllerKind::P,
            gain,
            integral_corner: 0.0,
            rolloff_corner: 0.0,
            output_limits: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn p_with_rolloff(gain: f64, rolloff_corner: f64) -> Self {
        Self {
            kind: ControllerKind::PWithRolloff,
            rolloff_corner,
            ..Self::p(gain)
        }
    }

    pub fn pi(gain: f64, integral_corner: f64) -> Self {
        Self {
            kind: ControllerKind::PI,
            integral_corner,
            ..Self::p(gain)
        }
    }

    pub fn with_limits(mut self, min: f64, max: f64) -> Self {
        self.output_limits = (min, max);
        self
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        require(self.gain.is_finite(), "gain", "gain must be finite")?;
        match self.kind {
            ControllerKind::PI => require(
                self.integral_corner > 0.0,
                "integral_corner",
                "integral corner must be positive",
            )?,
            ControllerKind::PWithRolloff => require(
                self.rolloff_corner > 0.0,
                "rolloff_corner",
                "roll-off corner must be positive",
            )?,
            ControllerKind::P => {}
        }
        require(
            self.output_limits.0 < self.output_limits.1,
            "output_limits",
            "lower limit must be below upper limit",
        )
    }

    /// Frequency response of the discretized controller at `f` for step `dt`.
    pub fn response(&self, f: f64, dt: f64) -> Complex64 {
        let zinv = Complex64::from_polar(1.0, -TAU * f * dt);
        let one = Complex64::new(1.0, 0.0);
        match self.kind {
            ControllerKind::P => Complex64::new(self.gain, 0.0),
            ControllerKind::PWithRolloff => {
                let a = rolloff_coefficient(self.rolloff_corner, dt);
                self.gain * a / (one - (1.0 - a) * zinv)
            }
            ControllerKind::PI => {
                let wi = TAU * self.integral_corner;
                self.gain * (one + wi * dt / (one - zinv))
            }
        }
    }
}

fn rolloff_coefficient(corner: f64, dt: f64) -> f64 {
    1.0 - (-TAU * corner * dt).exp()
}

/// Running controller state.
#[derive(Debug, Clone)]
pub struct Controller {
    spec: ControllerSpec,
    integral: f64,
    filtered: f64,
    saturated: bool,
    coeff: Option<(f64, f64)>,
}

impl Controller {
    pub fn new(spec: ControllerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            integral: 0.0,
            filtered: 0.0,
            saturated: false,
            coeff: None,
        })
    }

    pub fn spec(&self) -> &ControllerSpec {
        &self.spec
    }

    /// Integral state, rad·s.
    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn is_saturated(&self) -> bool {
        self.saturated
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.filtered = 0.0;
        self.saturated = false;
    }

    /// Command for zero error without advancing the state, Hz. For a PI this
    /// is the integral term alone, the frequency the loop has learned.
    pub fn hold(&self) -> f64 {
        let (lo, hi) = self.spec.output_limits;
        let raw = match self.spec.kind {
            ControllerKind::P => 0.0,
            ControllerKind::PWithRolloff => self.filtered,
            ControllerKind::PI => self.spec.gain * TAU * self.spec.integral_corner * self.integral,
        };
        raw.clamp(lo, hi)
    }

    /// Advances one step with `error` (rad) and returns the command (Hz).
    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        let (lo, hi) = self.spec.output_limits;
        let g = self.spec.gain;
        let raw = match self.spec.kind {
            ControllerKind::P => g * error,
            ControllerKind::PWithRolloff => {
                let a = match self.coeff {
                    Some((d, a)) if d == dt => a,
                    _ => {
                        let a = rolloff_coefficient(self.spec.rolloff_corner, dt);
                        self.coeff = Some((dt, a));
                        a
                    }
                };
                self.filtered += a * (g * error - self.filtered);
                self.filtered
            }
            ControllerKind::PI => {
                let wi = TAU * self.spec.integral_corner;
                let candidate = self.integral + error * dt;
                let u = g * (error + wi * candidate);
                // Integral growth that would push past a rail stops at the
                // value that puts the output exactly on it.
                if u > hi && g * error > 0.0 {
                    let edge = (hi / g - error) / wi;
                    self.integral = if g > 0.0 { edge.max(self.integral).min(candidate) } else { edge.min(self.integral).max(candidate) };
                } else if u < lo && g * error < 0.0 {
                    let edge = (lo / g - error) / wi;
                    self.integral = if g > 0.0 { edge.min(self.integral).max(candidate) } else { edge.max(self.integral).min(candidate) };
                } else {
                    self.integral = candidate;
                }
                // Bound the integral to the value that alone reaches the rail.
                let k = g * wi;
                if k != 0.0 {
                    let (a, b) = (lo / k, hi / k);
                    let (imin, imax) = if a < b { (a, b) } else { (b, a) };
                    self.integral = self.integral.clamp(imin, imax);
                }
                g * (error + wi * self.integral)
            }
        };
        self.saturated = raw > hi || raw < lo;
        raw.clamp(lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActuatorKind {
    AomFrequency,
    PumpLaserOffset,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorSpec {
    pub kind: ActuatorKind,
    /// ±Hz around the carrier.
    pub range: f64,
    /// s.
    pub response_delay: f64,
}

impl ActuatorSpec {
    pub fn aom(range: f64) -> Self {
        Self {
            kind: ActuatorKind::AomFrequency,
            range,
            response_delay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        require(self.range > 0.0, "range", "actuator range must be positive")?;
        require(
            self.response_delay >= 0.0,
            "response_delay",
            "response delay must be non-negative",
        )
    }
}

/// Frequency actuator that integrates its clamped command into phase.
#[derive(Debug, Clone)]
pub struct Actuator {
    spec: ActuatorSpec,
    saturated: bool,
    delay: Option<(f64, DelayLine)>,
    applied: f64,
}

impl Actuator {
    pub fn new(spec: ActuatorSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            saturated: false,
            delay: None,
            applied: 0.0,
        })
    }

    pub fn spec(&self) -> &ActuatorSpec {
        &self.spec
    }

    /// True when the last command exceeded the range.
    pub fn is_saturated(&self) -> bool {
        self.saturated
    }

    /// Frequency (Hz) applied on the last step, after clamping and delay.
    pub fn applied_frequency(&self) -> f64 {
        self.applied
    }

    /// Applies `command` (Hz) for one step and returns the phase increment (rad).
    pub fn actuate(&mut self, command: f64, dt: f64) -> f64 {
        let r = self.spec.range;
        self.saturated = command.abs() > r;
        let mut f = command.clamp(-r, r);
        if self.spec.response_delay > 0.0 {
            let rebuild = !matches!(&self.delay, Some((d, _)) if *d == dt);
            if rebuild {
                let line = DelayLine::new(self.spec.response_delay, dt).expect("validated delay");
                self.delay = Some((dt, line));
            }
            f = self.delay.as_mut().expect("just built").1.push(f);
        }
        self.applied = f;
        TAU * f * dt
    }
}

/// Transport delay and optional sampling of a message link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelaySpec {
    /// s.
    pub transport_delay: f64,
    /// Hz. `None` means continuous.
    pub update_rate: Option<f64>,
}

impl DelaySpec {
    pub fn validate(&self) -> Result<()> {
        require(
            self.transport_delay >= 0.0 && self.transport_delay.is_finite(),
            "transport_delay",
            "transport delay must be non-negative",
        )?;
        if let Some(r) = self.update_rate {
            require(r > 0.0, "update_rate", "update rate must be positive")?;
        }
        Ok(())
    }
}

/// Pure transport delay of `round(delay/dt)` samples.
#[derive(Debug, Clone)]
pub struct DelayLine {
    buf: VecDeque<f64>,
}

impl DelayLine {
    pub fn new(transport_delay: f64, dt: f64) -> Result<Self> {
        Self::with_initial(transport_delay, dt, 0.0)
    }

    /// A delay line whose pre-history is filled with `initial`.
    pub fn with_initial(transport_delay: f64, dt: f64, initial: f64) -> Result<Self> {
        require(dt > 0.0, "dt", "sample interval must be positive")?;
        require(
            transport_delay >= 0.0 && transport_delay.is_finite(),
            "transport_delay",
            "transport delay must be non-negative",
        )?;
        let n = (transport_delay / dt).round() as usize;
        Ok(Self {
            buf: std::iter::repeat_n(initial, n).collect(),
        })
    }

    pub fn delay_samples(&self) -> usize {
        self.buf.len()
    }

    #[inline]
    pub fn push(&mut self, sample: f64) -> f64 {
        if self.buf.is_empty() {
            return sample;
        }
        self.buf.push_back(sample);
        self.buf.pop_front().expect("non-empty")
    }
}

/// Slow integral offload of the mean actuator command to a second actuator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesaturationSpec {
    /// First-order settling time constant, s.
    pub time_constant: f64,
    pub link: DelaySpec,
}

/// Desaturation controller running behind a sampled, delayed link.
///
/// Every link period it averages the actuator command it has seen, updates
/// `p ← p − g·mean` with `g = 1 − exp(−T/τ)`, and issues `p`, which takes
/// effect after the transport delay. When the offloaded correction feeds back
/// into the actuator mean, the correction settles to minus the original
/// offset with time constant τ (for a delay short against τ).
#[derive(Debug, Clone)]
pub struct Desaturator {
    gain: f64,
    steps_per_update: u64,
    step: u64,
    acc: f64,
    acc_n: u64,
    correction: f64,
    pending: VecDeque<(u64, f64)>,
    delay_steps: u64,
    output: f64,
}

impl Desaturator {
    pub fn new(spec: DesaturationSpec, dt: f64) -> Result<Self> {
        spec.link.validate()?;
        require(dt > 0.0, "dt", "sample interval must be positive")?;
        require(spec.time_constant > 0.0, "time_constant", "time constant must be positive")?;
        let rate = spec
            .link
            .update_rate
            .ok_or_else(|| invalid("update_rate", "desaturation needs a sampled link"))?;
        let period = 1.0 / rate;
        let steps_per_update = (period / dt).round().max(1.0) as u64;
        let t_update = steps_per_update as f64 * dt;
        Ok(Self {
            gain: 1.0 - (-t_update / spec.time_constant).exp(),
            steps_per_update,
            step: 0,
            acc: 0.0,
            acc_n: 0,
            correction: 0.0,
            pending: VecDeque::new(),
            delay_steps: (spec.link.transport_delay / dt).round() as u64,
            output: 0.0,
        })
    }

    /// Offloaded correction currently in effect, Hz.
    pub fn correction(&self) -> f64 {
        self.output
    }

    /// Feeds one actuator command sample (Hz); returns the correction in effect (Hz).
    pub fn step(&mut self, aom_command: f64) -> f64 {
        self.acc += aom_command;
        self.acc_n += 1;
        self.step += 1;
        if self.step.is_multiple_of(self.steps_per_update) {
            let mean = self.acc / self.acc_n as f64;
            self.acc = 0.0;
            self.acc_n = 0;
            self.correction -= self.gain * mean;
            self.pending.push_back((self.step + self.delay_steps, self.correction));
        }
        while let Some(&(at, v)) = self.pending.front() {
            if at <= self.step {
                self.output = v;
                self.pending.pop_front();
            } else {
                break;
            }
        }
        self.output
    }
}

/// Two cascaded first-order low-pass sections.
#[derive(Debug, Clone, Copy)]
pub struct Lowpass2 {
    a: f64,
    y1: f64,
    y2: f64,
}

impl Lowpass2 {
    pub fn new(corner: f64, dt: f64) -> Self {
        Self {
            a: rolloff_coefficient(corner, dt),
            y1: 0.0,
            y2: 0.0,
        }
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        self.y1 += self.a * (x - self.y1);
        self.y2 += self.a * (self.y1 - self.y2);
        self.y2
    }

    pub fn response(corner: f64, dt: f64, f: f64) -> Complex64 {
        let a = rolloff_coefficient(corner, dt);
        let zinv = Complex64::from_polar(1.0, -TAU * f * dt);
        let h = a / (Complex64::new(1.0, 0.0) - (1.0 - a) * zinv);
        h * h
    }

    /// `Σ h²` of the impulse response.
    pub fn noise_gain(corner: f64, dt: f64) -> f64 {
        let a = rolloff_coefficient(corner, dt);
        let mut lp = Self { a, y1: 0.0, y2: 0.0 };
        let mut sum = 0.0;
        let mut x = 1.0;
        let mut k = 0usize;
        loop {
            let y = lp.step(x);
            x = 0.0;
            sum += y * y;
            k += 1;
            if k > 10 && y * y < 1e-18 * sum {
                break sum;
            }
        }
    }
}

/// Streaming I/Q demodulator against a fixed-frequency reference.
#[derive(Debug, Clone)]
pub struct LockIn {
    frequency: f64,
    phase0: f64,
    dt: f64,
    i: Lowpass2,
    q: Lowpass2,
    k: u64,
}

impl LockIn {
    pub fn new(clock: &ClockSpec, lowpass_corner: f64, dt: f64) -> Self {
        Self {
            frequency: clock.frequency,
            phase0: clock.phase,
            dt,
            i: Lowpass2::new(lowpass_corner, dt),
            q: Lowpass2::new(lowpass_corner, dt),
            k: 0,
        }
    }

    /// Reference phase at the next sample.
    pub fn reference_phase(&self) -> f64 {
        TAU * (self.frequency * self.dt * self.k as f64).fract() + self.phase0
    }

    /// Feeds one mean-free sample; returns the filtered (I, Q).
    #[inline]
    pub fn step(&mut self, x: f64) -> (f64, f64) {
        let (s, c) = self.reference_phase().sin_cos();
        self.k += 1;
        (self.i.step(x * c), self.q.step(-x * s))
    }

    /// Phase and amplitude implied by an (I, Q) pair.
    pub fn polar(iq: (f64, f64)) -> (f64, f64) {
        (iq.1.atan2(iq.0), 2.0 * iq.0.hypot(iq.1))
    }
}

/// Interval during which a detector had no usable beat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnlockEvent {
    /// s.
    pub start: f64,
    /// s.
    pub end: f64,
}

/// Demodulated phase plus any loss-of-beat intervals.
#[derive(Debug, Clone)]
pub struct Demodulated {
    pub phase: TimeSeries,
    pub loss_of_beat: Vec<UnlockEvent>,
}

fn loss_intervals(low: &[bool], dt: f64, min_len: usize) -> Vec<UnlockEvent> {
    let mut events = Vec::new();
    let mut start = None;
    for (k, &l) in low.iter().chain(std::iter::once(&false)).enumerate() {
        match (l, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                if k - s > min_len {
                    events.push(UnlockEvent {
                        start: s as f64 * dt,
                        end: k as f64 * dt,
                    });
                }
                start = None;
            }
            _ => {}
        }
    }
    events
}

fn samples_per_period(clock: &ClockSpec, dt: f64) -> usize {
    (1.0 / (clock.frequency * dt)).ceil() as usize
}

/// I/Q mixer: multiplies the mean-free beat by the clock in quadrature,
/// low-passes both products and returns `atan2(Q, I)` wrapped to (−π, π].
///
/// For additive white noise of standard deviation σ on a beat of amplitude
/// `A`, the small-angle output variance is `2σ²·Σh²/A²`, with `Σh²` the
/// impulse-response energy of the low-pass ([`mixer_noise_variance`]).
pub fn mixer_demodulate(
    beat: &TimeSeries,
    clock: &ClockSpec,
    lowpass_corner: f64,
    amplitude_threshold: f64,
) -> Result<Demodulated> {
    require(clock.frequency > 0.0, "clock", "clock frequency must be positive")?;
    require(
        lowpass_corner > 0.0 && lowpass_corner < clock.frequency,
        "lowpass_corner",
        "low-pass corner must lie between zero and the clock frequency",
    )?;
    let dt = beat.dt();
    let m = beat.mean();
    let mut lock = LockIn::new(clock, lowpass_corner, dt);
    let mut low = Vec::with_capacity(beat.len());
    let phase = beat
        .samples()
        .iter()
        .map(|&x| {
            let (p, a) = LockIn::polar(lock.step(x - m));
            low.push(a < amplitude_threshold);
            p
        })
        .collect();
    Ok(Demodulated {
        phase: TimeSeries::new(dt, phase, Unit::Rad)?,
        loss_of_beat: loss_intervals(&low, dt, samples_per_period(clock, dt)),
    })
}

/// Small-angle phase variance of [`mixer_demodulate`] for white noise σ on a beat of amplitude `a`.
pub fn mixer_noise_variance(sigma: f64, amplitude: f64, lowpass_corner: f64, dt: f64) -> f64 {
    2.0 * sigma * sigma * Lowpass2::noise_gain(lowpass_corner, dt) / (amplitude * amplitude)
}

/// Behavioural phase-frequency detector with ±2π capture.
///
/// Rising zero crossings of the mean-free beat are located by linear
/// interpolation. Between crossings the output holds. The phase difference
/// to the clock accumulates across cycles and saturates at ±2π, so a
/// frequency error produces a ramp rather than a wrapped sawtooth.
#[derive(Debug, Clone)]
pub struct Pfd {
    range: f64,
    diff: f64,
    last_beat: Option<f64>,
    last_clock: f64,
}

impl Default for Pfd {
    fn default() -> Self {
        Self::new()
    }
}

impl Pfd {
    pub fn new() -> Self {
        Self {
            range: TAU,
            diff: 0.0,
            last_beat: None,
            last_clock: 0.0,
        }
    }

    pub fn output(&self) -> f64 {
        self.diff
    }

    /// Envelope-level update from unwrapped beat and clock phases.
    #[inline]
    pub fn update(&mut self, beat_phase: f64, clock_phase: f64) -> f64 {
        match self.last_beat {
            None => self.diff = wrap_phase(beat_phase - clock_phase),
            Some(b) => {
                self.diff += (beat_phase - b) - (clock_phase - self.last_clock);
                self.diff = self.diff.clamp(-self.range, self.range);
            }
        }
        self.last_beat = Some(beat_phase);
        self.last_clock = clock_phase;
        self.diff
    }
}

/// Runs a [`Pfd`] over a sampled beat.
pub fn pfd_demodulate(beat: &TimeSeries, clock: &ClockSpec, amplitude_threshold: f64) -> Result<Demodulated> {
    require(clock.frequency > 0.0, "clock", "clock frequency must be positive")?;
    let dt = beat.dt();
    let period = samples_per_period(clock, dt);
    require(period >= 4, "beat", "beat must be sampled at least 4× the clock frequency")?;
    let x: Vec<f64> = {
        let m = beat.mean();
        beat.samples().iter().map(|v| v - m).collect()
    };

    // Half peak-to-peak over the trailing clock period.
    let amp = sliding_half_range(&x, period);
    let low: Vec<bool> = amp.iter().map(|&a| a < amplitude_threshold).collect();

    let mut pfd = Pfd::new();
    let mut cycles = 0.0;
    let mut out = Vec::with_capacity(x.len());
    out.push(0.0);
    for k in 1..x.len() {
        if x[k - 1] < 0.0 && x[k] >= 0.0 && !low[k] {
            let frac = x[k - 1] / (x[k - 1] - x[k]);
            let tc = (k as f64 - 1.0 + frac) * dt;
            // cos(ψ) crosses zero upwards at ψ = −π/2 (mod 2π).
            let beat_phase = -FRAC_PI_2 + TAU * cycles;
            cycles += 1.0;
            let clock_phase = TAU * clock.frequency * tc + clock.phase;
            pfd.update(beat_phase, clock_phase);
        }
        out.push(pfd.output());
    }
    Ok(Demodulated {
        phase: TimeSeries::new(dt, out, Unit::Rad)?,
        loss_of_beat: loss_intervals(&low, dt, period),
    })
}

fn sliding_half_range(x: &[f64], window: usize) -> Vec<f64> {
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut out = Vec::with_capacity(x.len());
    for (k, &v) in x.iter().enumerate() {
        while maxq.back().is_some_and(|&j| x[j] <= v) {
            maxq.pop_back();
        }
        maxq.push_back(k);
        while minq.back().is_some_and(|&j| x[j] >= v) {
            minq.pop_back();
        }
        minq.push_back(k);
        while maxq.front().is_some_and(|&j| j + window <= k) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&j| j + window <= k) {
            minq.pop_front();
        }
        let hi = x[*maxq.front().expect("non-empty")];
        let lo = x[*minq.front().expect("non-empty")];
        // Until a full period has been seen the estimate is not meaningful.
        out.push(if k + 1 < window { f64::INFINITY } else { 0.5 * (hi - lo) });
    }
    out
}

/// Phase detector applied at envelope level inside simulated loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectorKind {
    /// Unwrapped, unbounded phase.
    Ideal,
    /// Wrapped to (−π, π].
    Mixer,
    /// Accumulating with ±2π saturation.
    Pfd,
}

/// Everything needed to build and analyse one feedback loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub name: String,
    pub controller: ControllerSpec,
    pub actuator: ActuatorSpec,
    pub delay: DelaySpec,
    pub detector: DetectorKind,
    /// Optional two-pole detector low-pass, Hz.
    pub detector_lowpass: Option<f64>,
    /// Heterodyne clock the beat is demodulated against.
    pub clock: ClockSpec,
    /// Loop step, s.
    pub dt: f64,
    pub enabled: bool,
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.dt > 0.0, "dt", "loop step must be positive")?;
        self.controller.validate()?;
        self.actuator.validate()?;
        self.delay.validate()?;
        if let Some(c) = self.detector_lowpass {
            require(c > 0.0, "detector_lowpass", "detector low-pass corner must be positive")?;
        }
        Ok(())
    }

    pub fn model(&self) -> LoopModel {
        LoopModel {
            controller: self.controller,
            delay_samples: (self.delay.transport_delay / self.dt).round() as usize,
            detector_lowpass: self.detector_lowpass,
            dt: self.dt,
        }
    }
}

/// Linear small-signal model of a loop closed around a frequency actuator.
///
/// `L(z) = D(z)·C(z)·z^{-k}·2π·dt·z⁻¹/(1 − z⁻¹)`, where `D` is the detector
/// low-pass, `C` the controller, `k` the transport delay in steps and the last
/// factor the actuator turning frequency into phase one step later.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopModel {
    pub controller: ControllerSpec,
    pub delay_samples: usize,
    pub detector_lowpass: Option<f64>,
    pub dt: f64,
}

impl LoopModel {
    pub fn new(controller: ControllerSpec, delay_samples: usize, dt: f64) -> Self {
        Self {
            controller,
            delay_samples,
            detector_lowpass: None,
            dt,
        }
    }

    pub fn open_loop(&self, f: f64) -> Complex64 {
        let dt = self.dt;
        let zinv = Complex64::from_polar(1.0, -TAU * f * dt);
        let plant = TAU * dt * zinv / (Complex64::new(1.0, 0.0) - zinv)
            * Complex64::from_polar(1.0, -TAU * f * dt * self.delay_samples as f64);
        let det = self
            .detector_lowpass
            .map_or(Complex64::new(1.0, 0.0), |c| Lowpass2::response(c, dt, f));
        det * self.controller.response(f, dt) * plant
    }

    /// Residual suppression `1/(1+L)`.
    pub fn sensitivity(&self, f: f64) -> Complex64 {
        1.0 / (1.0 + self.open_loop(f))
    }

    fn nyquist(&self) -> f64 {
        0.5 / self.dt
    }

    fn grid(&self, n: usize) -> Vec<f64> {
        let hi = self.nyquist() * 0.999_999;
        let lo = hi * 1e-7;
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }

    /// Lowest frequency at which the suppression `|1/(1+L)|` rises to −3 dB.
    pub fn suppression_bandwidth(&self) -> Option<f64> {
        let g = self.grid(4000);
        let above = |f: f64| self.sensitivity(f).norm() >= FRAC_1_SQRT_2;
        if above(g[0]) {
            return None;
        }
        let k = g.iter().position(|&f| above(f))?;
        let (mut lo, mut hi) = (g[k - 1], g[k]);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if above(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// Gain and phase margins `(gain margin, phase margin in rad)`.
    pub fn margins(&self) -> (f64, f64) {
        let g = self.grid(20_000);
        let mut gm = f64::INFINITY;
        let mut pm = f64::INFINITY;
        let mut prev: Option<(f64, Complex64)> = None;
        for &f in &g {
            let l = self.open_loop(f);
            if let Some((_, lp)) = prev {
                // Phase crossover: L crosses the negative real axis.
                if (lp.im < 0.0) != (l.im < 0.0) && l.re < 0.0 {
                    gm = gm.min(1.0 / l.norm());
                }
                if (lp.norm() >= 1.0) != (l.norm() >= 1.0) {
                    pm = pm.min(PI - l.arg().abs());
                }
            }
            prev = Some((f, l));
        }
        (gm, pm)
    }

    pub fn is_stable(&self) -> bool {
        let (gm, pm) = self.margins();
        gm > 1.0 && pm > 0.0
    }
}

/// Finds the controller gain whose loop reaches `target_bandwidth` (Hz) of
/// −3 dB suppression, by bisection on the gain.
pub fn tune_gain(model: &LoopModel, target_bandwidth: f64) -> Result<f64> {
    require(
        target_bandwidth > 0.0 && target_bandwidth < 0.5 / model.dt,
        "target_bandwidth",
        "target bandwidth must lie below the loop's Nyquist frequency",
    )?;
    let bw = |g: f64| {
        let m = LoopModel {
            controller: model.controller.with_gain(g),
            ..*model
        };
        (m.suppression_bandwidth().unwrap_or(0.0), m.is_stable())
    };
    let mut lo = target_bandwidth * 1e-3;
    let mut hi = target_bandwidth;
    while bw(hi).0 < target_bandwidth {
        if !bw(hi).1 || hi > target_bandwidth * 1e4 {
            return Err(invalid(
                "target_bandwidth",
                format!("{target_bandwidth} Hz is not reachable with a stable loop"),
            ));
        }
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..80 {
        let mid = (lo * hi).sqrt();
        if bw(mid).0 < target_bandwidth {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = (lo * hi).sqrt();
    if !bw(g).1 {
        return Err(invalid(
            "target_bandwidth",
            format!("the loop reaching {target_bandwidth} Hz is unstable"),
        ));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_controller_is_exact() {
        let mut c = Controller::new(ControllerSpec::p(3.5)).unwrap();
        assert_eq!(c.step(0.0, 1e-6), 0.0);
        assert_eq!(c.step(0.2, 1e-6), 3.5 * 0.2);
    }

    #[test]
    fn pi_ramp_slope() {
        let (g, fi, e, dt) = (2.0, 10.0, 0.3, 1e-4);
        let mut c = Controller::new(ControllerSpec::pi(g, fi)).unwrap();
        let out: Vec<f64> = (0..1000).map(|_| c.step(e, dt)).collect();
        let slope = (out[999] - out[0]) / (999.0 * dt);
        let expected = g * TAU * fi * e;
        assert!((slope / expected - 1.0).abs() < 0.01);
    }

    #[test]
    fn anti_windup_bounds_integral() {
        let spec = ControllerSpec::pi(1.0, 100.0).with_limits(-10.0, 10.0);
        let mut c = Controller::new(spec).unwrap();
        let mut u = 0.0;
        for _ in 0..100_000 {
            u = c.step(5.0, 1e-3);
            assert!(u <= 10.0);
        }
        assert!(u > 9.9);
        assert!(c.integral() * TAU * 100.0 <= 10.0 + 1e-12);
        // Recovers immediately when the error reverses.
        let u = c.step(-5.0, 1e-3);
        assert!(u < 10.0);
    }

    #[test]
    fn aom_increments() {
        let mut a = Actuator::new(ActuatorSpec::aom(1e6)).unwrap();
        assert_eq!(a.actuate(0.0, 1e-3), 0.0);
        assert!((a.actuate(1e3, 1e-3) - TAU).abs() < 1e-12);
        assert!(!a.is_saturated());
        let inc = a.actuate(2e6, 1e-6);
        assert!((inc - TAU * 1e6 * 1e-6).abs() < 1e-12);
        assert!(a.is_saturated());
    }

    #[test]
    fn delay_line_shifts_delta() {
        let mut d = DelayLine::new(0.0, 1e-6).unwrap();
        assert_eq!(d.push(4.0), 4.0);
        let mut d = DelayLine::new(5e-6, 1e-6).unwrap();
        let out: Vec<f64> = (0..10).map(|k| d.push(if k == 0 { 1.0 } else { 0.0 })).collect();
        assert_eq!(out.iter().position(|&x| x == 1.0), Some(5));
    }

    #[test]
    fn desaturation_settles_to_minus_offset() {
        let spec = DesaturationSpec {
            time_constant: 0.05,
            link: DelaySpec {
                transport_delay: 0.0,
                update_rate: Some(500.0),
            },
        };
        let dt = 1e-4;
        let mut d = Desaturator::new(spec, dt).unwrap();
        let offset = 10e3;
        let mut p = 0.0;
        let mut changes = Vec::new();
        for k in 1..=20_000u64 {
            let next = d.step(offset + p);
            if next != p {
                changes.push(k);
            }
            p = next;
        }
        assert!((p + offset).abs() < 1.0);
        assert!(changes.iter().all(|k| k % 20 == 0));
        let mut centered = Desaturator::new(spec, dt).unwrap();
        assert!((0..1000).all(|_| centered.step(0.0) == 0.0));
    }

    #[test]
    fn mixer_reads_static_offset() {
        let dt = 1e-6;
        let clock = ClockSpec::new("c", 10e3, 0.0).unwrap();
        let beat: Vec<f64> = (0..20_000)
            .map(|k| 2.0 + (TAU * 10e3 * k as f64 * dt + PI / 4.0).cos())
            .collect();
        let ts = TimeSeries::new(dt, beat, Unit::Arb).unwrap();
        let d = mixer_demodulate(&ts, &clock, 500.0, 0.1).unwrap();
        let last = *d.phase.samples().last().unwrap();
        assert!((last - PI / 4.0).abs() < 1e-3, "{last}");
    }

    #[test]
    fn pfd_ramps_then_saturates() {
        let dt = 1e-6;
        let clock = ClockSpec::new("c", 1e3, 0.0).unwrap();
        let n = 200_000;
        let beat: Vec<f64> = (0..n).map(|k| (TAU * 1010.0 * k as f64 * dt).cos()).collect();
        let ts = TimeSeries::new(dt, beat, Unit::Arb).unwrap();
        let d = pfd_demodulate(&ts, &clock, 0.1).unwrap();
        let p = d.phase.samples();
        let slope = (p[50_000] - p[10_000]) / (40_000.0 * dt);
        assert!((slope / (TAU * 10.0) - 1.0).abs() < 0.02, "{slope}");
        assert_eq!(*p.last().unwrap(), TAU);
        assert!(d.loss_of_beat.is_empty());
    }

    #[test]
    fn pfd_flags_missing_beat() {
        let dt = 1e-6;
        let clock = ClockSpec::new("c", 1e3, 0.0).unwrap();
        let beat: Vec<f64> = (0..20_000)
            .map(|k| {
                let on = !(5_000..12_000).contains(&k);
                if on {
                    (TAU * 1e3 * k as f64 * dt).cos()
                } else {
                    0.0
                }
            })
            .collect();
        let ts = TimeSeries::new(dt, beat, Unit::Arb).unwrap();
        let d = pfd_demodulate(&ts, &clock, 0.1).unwrap();
        assert_eq!(d.loss_of_beat.len(), 1);
        assert!((d.loss_of_beat[0].start - 5e-3).abs() < 1.1e-3);
    }

    #[test]
    fn integrator_loop_bandwidth_near_gain() {
        let m = LoopModel::new(ControllerSpec::p(1e3), 0, 1e-6);
        let bw = m.suppression_bandwidth().unwrap();
        assert!((bw / 1e3 - 1.0).abs() < 0.01, "{bw}");
        assert!(m.is_stable());
    }

    #[test]
    fn tune_gain_hits_target() {
        let m = LoopModel::new(ControllerSpec::p_with_rolloff(1.0, 20e3), 2, 10e-6);
        let g = tune_gain(&m, 3e3).unwrap();
        let tuned = LoopModel {
            controller: m.controller.with_gain(g),
            ..m
        };
        assert!((tuned.suppression_bandwidth().unwrap() / 3e3 - 1.0).abs() < 1e-6);
    }
}
