//! Seeded, reproducible disturbance processes.
//!
//! Every process is a pure function of its parameters, its seed, the sample
//! interval and the sample count. Randomness comes from ChaCha8
//! (`rand_chacha::ChaCha8Rng::seed_from_u64`), Gaussian draws from the
//! ziggurat sampler in `rand_distr::StandardNormal` and count draws from
//! `rand_distr::Poisson`. All three are platform independent.
//!
//! Each process is available in two forms that produce identical samples:
//! a batch generator returning a [`TimeSeries`] and a [`NoiseStream`] that
//! yields one sample at a time, which the simulator uses for records far too
//! long to hold in memory.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{invalid, require, Result};
use crate::series::{TimeSeries, Unit};

/// SNSPD count-rate ceiling, counts/s. Rates above it are accepted with a warning.
pub const SNSPD_MAX_RATE: f64 = 1e6;

/// One mechanical resonance: centre frequency, quality factor, output RMS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resonance {
    /// Hz.
    pub f0: f64,
    pub q: f64,
    /// rad.
    pub rms: f64,
}

impl Resonance {
    pub fn new(f0: f64, q: f64, rms: f64) -> Self {
        Self { f0, q, rms }
    }
}

/// Supported disturbance classes.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    /// Wiener phase walk of a laser with Lorentzian `linewidth` (Hz).
    LaserLinewidth { linewidth: f64 },
    /// Sum of white noise shaped by resonant second-order sections.
    MechanicalResonance { resonances: Vec<Resonance> },
    /// Random walk with `rate_rms` per √s plus an optional deterministic ramp per second.
    ThermalDrift { rate_rms: f64, linear_rate: f64 },
    /// Gaussian white noise of standard deviation `std`, optionally band-limited to
    /// `bandwidth` Hz by a linear-phase FIR low-pass.
    White { std: f64, bandwidth: Option<f64> },
    /// ±`amplitude` maximal-length binary sequence with each bit held `hold` samples.
    Prbs { amplitude: f64, order: u32, hold: u32 },
    /// Independent Poisson counts per bin at `mean_rate` counts/s.
    ShotCounts { mean_rate: f64 },
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::LaserLinewidth { .. } => "laser_linewidth",
            NoiseKind::MechanicalResonance { .. } => "mechanical_resonance",
            NoiseKind::ThermalDrift { .. } => "thermal_drift",
            NoiseKind::White { .. } => "white",
            NoiseKind::Prbs { .. } => "prbs",
            NoiseKind::ShotCounts { .. } => "shot_counts",
        }
    }
}

/// A disturbance class together with the seed that fixes its realization.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProcess {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseProcess {
    pub fn new(kind: NoiseKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn unit(&self) -> Unit {
        match self.kind {
            NoiseKind::ShotCounts { .. } => Unit::Counts,
            NoiseKind::White { .. } | NoiseKind::Prbs { .. } => Unit::Arb,
            _ => Unit::Rad,
        }
    }

    /// Checks parameters against the sample interval they will be drawn at.
    pub fn validate(&self, dt: f64) -> Result<()> {
        require(dt > 0.0 && dt.is_finite(), "dt", "sample interval must be positive")?;
        let nyquist = 0.5 / dt;
        match &self.kind {
            NoiseKind::LaserLinewidth { linewidth } => {
                require(*linewidth >= 0.0, "linewidth", "linewidth must be non-negative")
            }
            NoiseKind::MechanicalResonance { resonances } => {
                for r in resonances {
                    require(r.f0 > 0.0, "f0", "resonance frequency must be positive")?;
                    if r.f0 >= nyquist {
                        return Err(invalid(
                            "f0",
                            format!("resonance at {} Hz is above the Nyquist frequency {nyquist} Hz", r.f0),
                        ));
                    }
                    require(r.q > 0.0, "q", "quality factor must be positive")?;
                    require(r.rms >= 0.0, "rms", "resonance rms must be non-negative")?;
                }
                Ok(())
            }
            NoiseKind::ThermalDrift { rate_rms, linear_rate } => {
                require(*rate_rms >= 0.0, "rate_rms", "drift rate must be non-negative")?;
                require(linear_rate.is_finite(), "linear_rate", "ramp rate must be finite")
            }
            NoiseKind::White { std, bandwidth } => {
                require(*std >= 0.0, "std", "standard deviation must be non-negative")?;
                if let Some(b) = bandwidth {
                    require(*b > 0.0, "bandwidth", "bandwidth must be positive")?;
                    if *b > nyquist * (1.0 + 1e-12) {
                        return Err(invalid(
                            "bandwidth",
                            format!("{b} Hz exceeds the Nyquist frequency {nyquist} Hz"),
                        ));
                    }
                }
                Ok(())
            }
            NoiseKind::Prbs { amplitude, order, hold } => {
                require(amplitude.is_finite(), "amplitude", "amplitude must be finite")?;
                require(*hold >= 1, "hold", "bit hold must be at least one sample")?;
                require(
                    lfsr_taps(*order).is_some(),
                    "order",
                    "supported PRBS orders are 7, 9, 11, 15, 23 and 31",
                )
            }
            NoiseKind::ShotCounts { mean_rate } => {
                require(*mean_rate >= 0.0, "mean_rate", "count rate must be non-negative")?;
                require(
                    (mean_rate * dt).is_finite(),
                    "mean_rate",
                    "expected counts per bin must be finite",
                )?;
                if *mean_rate > SNSPD_MAX_RATE {
                    log::warn!(
                        "count rate {mean_rate:.3e}/s exceeds the detector ceiling of {SNSPD_MAX_RATE:.0e}/s"
                    );
                }
                Ok(())
            }
        }
    }

    /// Opens a sample-by-sample stream at interval `dt`.
    pub fn stream(&self, dt: f64) -> Result<NoiseStream> {
        self.validate(dt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let state = match &self.kind {
            NoiseKind::LaserLinewidth { linewidth } => State::Walk {
                x: 0.0,
                step_std: (TAU * linewidth * dt).sqrt(),
                ramp: 0.0,
            },
            NoiseKind::ThermalDrift { rate_rms, linear_rate } => State::Walk {
                x: 0.0,
                step_std: rate_rms * dt.sqrt(),
                ramp: linear_rate * dt,
            },
            NoiseKind::MechanicalResonance { resonances } => {
                let sections = resonances
                    .iter()
                    .filter(|r| r.rms > 0.0)
                    .map(|r| ResonatorSection::new(*r, dt, &mut rng))
                    .collect::<Vec<_>>();
                if sections.is_empty() {
                    State::Zero
                } else {
                    State::Resonators(sections)
                }
            }
            NoiseKind::White { std, bandwidth } => {
                let nyquist = 0.5 / dt;
                match bandwidth {
                    Some(b) if *std > 0.0 && 1.1 * b < nyquist => {
                        State::Fir(FirState::new(lowpass_taps(1.1 * b * dt, b * dt), *std, &mut rng))
                    }
                    _ => State::White { std: *std },
                }
            }
            NoiseKind::Prbs { amplitude, order, hold } => {
                let taps = lfsr_taps(*order).expect("validated");
                let mask = if *order == 64 { u64::MAX } else { (1u64 << order) - 1 };
                let mut reg = rng.random::<u64>() & mask;
                if reg == 0 {
                    reg = 1;
                }
                State::Prbs {
                    reg,
                    order: *order,
                    taps,
                    hold: *hold,
                    count: 0,
                    amplitude: *amplitude,
                    current: 0.0,
                }
            }
            NoiseKind::ShotCounts { mean_rate } => {
                let lambda = mean_rate * dt;
                if lambda > 0.0 {
                    State::Poisson(Poisson::new(lambda).map_err(|e| invalid("mean_rate", e.to_string()))?)
                } else {
                    State::Zero
                }
            }
        };
        Ok(NoiseStream { rng, state })
    }

    /// Draws `n` samples at interval `dt`.
    pub fn generate(&self, dt: f64, n: usize) -> Result<TimeSeries> {
        require(n >= 1, "n", "at least one sample is required")?;
        let mut s = self.stream(dt)?;
        let samples = (0..n).map(|_| s.next_sample()).collect();
        TimeSeries::new(dt, samples, self.unit())
    }
}

/// Stateful sample source produced by [`NoiseProcess::stream`].
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    state: State,
}

#[derive(Debug, Clone)]
enum State {
    Zero,
    Walk { x: f64, step_std: f64, ramp: f64 },
    White { std: f64 },
    Resonators(Vec<ResonatorSection>),
    Fir(FirState),
    Prbs {
        reg: u64,
        order: u32,
        taps: (u32, u32),
        hold: u32,
        count: u32,
        amplitude: f64,
        current: f64,
    },
    Poisson(Poisson<f64>),
}

impl NoiseStream {
    /// A stream that always yields zero.
    pub fn silent() -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(0),
            state: State::Zero,
        }
    }

    #[inline]
    pub fn next_sample(&mut self) -> f64 {
        match &mut self.state {
            State::Zero => 0.0,
            State::Walk { x, step_std, ramp } => {
                let out = *x;
                if *step_std > 0.0 {
                    let z: f64 = self.rng.sample(StandardNormal);
                    *x += *step_std * z;
                }
                *x += *ramp;
                out
            }
            State::White { std } => {
                if *std == 0.0 {
                    0.0
                } else {
                    let z: f64 = self.rng.sample(StandardNormal);
                    *std * z
                }
            }
            State::Resonators(sections) => {
                let mut total = 0.0;
                for s in sections.iter_mut() {
                    let z: f64 = self.rng.sample(StandardNormal);
                    total += s.step(z);
                }
                total
            }
            State::Fir(f) => {
                let z: f64 = self.rng.sample(StandardNormal);
                f.step(z)
            }
            State::Prbs {
                reg,
                order,
                taps,
                hold,
                count,
                amplitude,
                current,
            } => {
                if *count == 0 {
                    let bit = ((*reg >> (taps.0 - 1)) ^ (*reg >> (taps.1 - 1))) & 1;
                    *reg = ((*reg << 1) | bit) & ((1u64 << *order) - 1);
                    *current = if bit == 1 { *amplitude } else { -*amplitude };
                }
                *count = (*count + 1) % *hold;
                *current
            }
            State::Poisson(p) => p.sample(&mut self.rng),
        }
    }
}

impl Iterator for NoiseStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_sample())
    }
}

fn lfsr_taps(order: u32) -> Option<(u32, u32)> {
    match order {
        7 => Some((7, 6)),
        9 => Some((9, 5)),
        11 => Some((11, 9)),
        15 => Some((15, 14)),
        23 => Some((23, 18)),
        31 => Some((31, 28)),
        _ => None,
    }
}

/// Resonant low-pass biquad, the displacement of an oscillator driven by a
/// white force, so the spectrum falls as f⁻⁴ above the resonance. The white
/// drive is scaled so the stationary output RMS equals the requested value. The state starts from its stationary distribution,
/// so no warm-up is needed.
#[derive(Debug, Clone)]
struct ResonatorSection {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    s1: f64,
    s2: f64,
    input_scale: f64,
}

impl ResonatorSection {
    fn new(r: Resonance, dt: f64, rng: &mut ChaCha8Rng) -> Self {
        let w0 = TAU * r.f0 * dt;
        let alpha = w0.sin() / (2.0 * r.q);
        let a0 = 1.0 + alpha;
        let c = (1.0 - w0.cos()) / a0;
        let (b0, b1, b2) = (c / 2.0, c, c / 2.0);
        let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);

        // Transposed direct form II in state-space form:
        //   y = s1 + b0 x
        //   s1' = -a1 s1 + s2 + (b1 - a1 b0) x
        //   s2' = -a2 s1      + (b2 - a2 b0) x
        let a = [[-a1, 1.0], [-a2, 0.0]];
        let b = [b1 - a1 * b0, b2 - a2 * b0];
        let p = stationary_covariance(a, b);
        let unit_var = p[0][0] + b0 * b0;
        let input_scale = r.rms / unit_var.sqrt();

        // Cholesky of the stationary state covariance, scaled to the output level.
        let l11 = p[0][0].max(0.0).sqrt();
        let l21 = if l11 > 0.0 { p[1][0] / l11 } else { 0.0 };
        let l22 = (p[1][1] - l21 * l21).max(0.0).sqrt();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        Self {
            b0,
            b1,
            b2,
            a1,
            a2,
            s1: input_scale * l11 * z1,
            s2: input_scale * (l21 * z1 + l22 * z2),
            input_scale,
        }
    }

    #[inline]
    fn step(&mut self, z: f64) -> f64 {
        let x = self.input_scale * z;
        let y = self.s1 + self.b0 * x;
        self.s1 = -self.a1 * self.s1 + self.s2 + (self.b1 - self.a1 * self.b0) * x;
        self.s2 = -self.a2 * (y - self.b0 * x) + (self.b2 - self.a2 * self.b0) * x;
        y
    }
}

type Mat2 = [[f64; 2]; 2];

fn mat_mul(x: Mat2, y: Mat2) -> Mat2 {
    let mut r = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
        }
    }
    r
}

fn transpose(x: Mat2) -> Mat2 {
    [[x[0][0], x[1][0]], [x[0][1], x[1][1]]]
}

/// Solves `P = A P Aᵀ + b bᵀ` by Smith's doubling iteration.
fn stationary_covariance(a: Mat2, b: [f64; 2]) -> Mat2 {
    let mut p = [[b[0] * b[0], b[0] * b[1]], [b[1] * b[0], b[1] * b[1]]];
    let mut ak = a;
    for _ in 0..64 {
        let inc = mat_mul(mat_mul(ak, p), transpose(ak));
        let size = inc.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        for i in 0..2 {
            for j in 0..2 {
                p[i][j] += inc[i][j];
            }
        }
        let scale = p.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        if size <= 1e-17 * scale {
            break;
        }
        ak = mat_mul(ak, ak);
    }
    p
}

/// Blackman-windowed sinc low-pass with normalized cutoff `fc` (cycles/sample).
/// The tap count keeps the transition band inside 10% of `band`.
fn lowpass_taps(fc: f64, band: f64) -> Vec<f64> {
    let mut m = (2.75 / (0.1 * band)).ceil() as usize;
    m = m.clamp(31, 8191) | 1;
    let mid = (m / 2) as f64;
    (0..m)
        .map(|i| {
            let k = i as f64 - mid;
            let sinc = if k == 0.0 {
                2.0 * fc
            } else {
                (TAU * fc * k).sin() / (PI * k)
            };
            let x = i as f64 / (m - 1) as f64;
            let w = 0.42 - 0.5 * (TAU * x).cos() + 0.08 * (2.0 * TAU * x).cos();
            sinc * w
        })
        .collect()
}

#[derive(Debug, Clone)]
struct FirState {
    taps: Vec<f64>,
    history: Vec<f64>,
    pos: usize,
    scale: f64,
}

impl FirState {
    fn new(taps: Vec<f64>, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let energy: f64 = taps.iter().map(|h| h * h).sum();
        let n = taps.len();
        // Pre-filled history makes the output stationary from the first sample.
        let history = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self {
            taps,
            history,
            pos: 0,
            scale: std / energy.sqrt(),
        }
    }

    fn step(&mut self, z: f64) -> f64 {
        let n = self.taps.len();
        self.history[self.pos] = z;
        let mut acc = 0.0;
        let mut idx = self.pos;
        for h in &self.taps {
            acc += h * self.history[idx];
            idx = if idx == 0 { n - 1 } else { idx - 1 };
        }
        self.pos = (self.pos + 1) % n;
        acc * self.scale
    }
}

/// Wiener phase walk with per-step variance `2π·linewidth·dt`.
pub fn gen_laser_phase_noise(linewidth: f64, dt: f64, n: usize, seed: u64) -> Result<TimeSeries> {
    NoiseProcess::new(NoiseKind::LaserLinewidth { linewidth }, seed).generate(dt, n)
}

/// Sum of independent resonant components, each with the requested RMS.
pub fn gen_mechanical_noise(resonances: &[Resonance], dt: f64, n: usize, seed: u64) -> Result<TimeSeries> {
    NoiseProcess::new(
        NoiseKind::MechanicalResonance {
            resonances: resonances.to_vec(),
        },
        seed,
    )
    .generate(dt, n)
}

/// Random walk (integrated white noise) with increments of `rate_rms·√dt`.
pub fn gen_thermal_drift(rate_rms: f64, dt: f64, n: usize, seed: u64) -> Result<TimeSeries> {
    NoiseProcess::new(
        NoiseKind::ThermalDrift {
            rate_rms,
            linear_rate: 0.0,
        },
        seed,
    )
    .generate(dt, n)
}

/// Length change `α·L·ΔT(t)` of a fiber following a temperature record,
/// referenced to the first temperature sample.
pub fn gen_fiber_length_drift(
    expansion_coeff: f64,
    fiber_length: f64,
    temp_profile: &TimeSeries,
) -> Result<TimeSeries> {
    require(fiber_length > 0.0, "fiber_length", "fiber length must be positive")?;
    let t0 = temp_profile.samples()[0];
    let k = expansion_coeff * fiber_length;
    let samples = temp_profile.samples().iter().map(|t| k * (t - t0)).collect();
    TimeSeries::new(temp_profile.dt(), samples, Unit::Meters)
}

/// Independent Poisson counts per bin with mean `mean_rate·dt`.
pub fn gen_shot_noise_counts(mean_rate: f64, dt: f64, n: usize, seed: u64) -> Result<TimeSeries> {
    NoiseProcess::new(NoiseKind::ShotCounts { mean_rate }, seed).generate(dt, n)
}

/// Band-limited white noise with RMS `amplitude` and a flat spectrum up to `bandwidth`.
pub fn gen_identification_noise(
    bandwidth: f64,
    amplitude: f64,
    dt: f64,
    n: usize,
    seed: u64,
) -> Result<TimeSeries> {
    NoiseProcess::new(
        NoiseKind::White {
            std: amplitude,
            bandwidth: Some(bandwidth),
        },
        seed,
    )
    .generate(dt, n)
}

/// Stable 64-bit seed for a named stream under a master seed.
///
/// FNV-1a over the name, mixed with the master seed through SplitMix64.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{correlation, variance};

    #[test]
    fn zero_parameters_give_zero_series() {
        let z = |ts: TimeSeries| ts.samples().iter().all(|&x| x == 0.0);
        assert!(z(gen_laser_phase_noise(0.0, 1e-6, 1000, 1).unwrap()));
        assert!(z(gen_mechanical_noise(&[], 1e-4, 1000, 1).unwrap()));
        assert!(z(gen_thermal_drift(0.0, 1e-3, 1000, 1).unwrap()));
        assert!(z(gen_shot_noise_counts(0.0, 1e-3, 1000, 1).unwrap()));
        assert!(z(gen_identification_noise(100.0, 0.0, 1e-3, 1000, 1).unwrap()));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(gen_laser_phase_noise(1e3, 0.0, 10, 1).is_err());
        assert!(gen_laser_phase_noise(1e3, -1e-6, 10, 1).is_err());
        assert!(gen_laser_phase_noise(-1.0, 1e-6, 10, 1).is_err());
        assert!(gen_mechanical_noise(&[Resonance::new(600.0, 10.0, 0.1)], 1e-3, 10, 1).is_err());
        assert!(gen_shot_noise_counts(-1.0, 1e-3, 10, 1).is_err());
        assert!(gen_identification_noise(600.0, 1.0, 1e-3, 10, 1).is_err());
        let prbs = NoiseProcess::new(
            NoiseKind::Prbs {
                amplitude: 1.0,
                order: 8,
                hold: 1,
            },
            3,
        );
        assert!(prbs.generate(1e-3, 10).is_err());
    }

    #[test]
    fn laser_increment_variance() {
        let (lw, dt) = (10e3, 1e-6);
        let ts = gen_laser_phase_noise(lw, dt, 1_000_000, 7).unwrap();
        let inc: Vec<f64> = ts.samples().windows(2).map(|w| w[1] - w[0]).collect();
        let expected = TAU * lw * dt;
        let got = variance(&inc);
        assert!((got / expected - 1.0).abs() < 0.05, "{got} vs {expected}");
    }

    #[test]
    fn same_seed_same_series_different_seed_independent() {
        let a = gen_laser_phase_noise(1e3, 1e-5, 5000, 11).unwrap();
        let b = gen_laser_phase_noise(1e3, 1e-5, 5000, 11).unwrap();
        assert_eq!(a, b);
        let x = gen_identification_noise(1e3, 1.0, 1e-4, 100_000, 1).unwrap();
        let y = gen_identification_noise(1e3, 1.0, 1e-4, 100_000, 2).unwrap();
        assert!(correlation(x.samples(), y.samples()).abs() < 0.05);
    }

    #[test]
    fn resonance_rms_matches_request() {
        let r = Resonance::new(500.0, 30.0, 0.2);
        let ts = gen_mechanical_noise(&[r], 1e-4, 400_000, 5).unwrap();
        let rms = ts.std_dev();
        assert!((rms / 0.2 - 1.0).abs() < 0.1, "{rms}");
    }

    #[test]
    fn resonance_variances_add() {
        let r1 = Resonance::new(120.0, 10.0, 0.3);
        let r2 = Resonance::new(800.0, 20.0, 0.4);
        let ts = gen_mechanical_noise(&[r1, r2], 1e-4, 400_000, 9).unwrap();
        let expected = 0.3f64.powi(2) + 0.4f64.powi(2);
        assert!((ts.variance() / expected - 1.0).abs() < 0.1);
    }

    #[test]
    fn thermal_drift_variance_grows_linearly() {
        let (rate, dt, n) = (0.5, 1e-2, 400);
        let seeds = 400;
        let mut at_100 = Vec::new();
        let mut at_400 = Vec::new();
        for s in 0..seeds {
            let ts = gen_thermal_drift(rate, dt, n, s).unwrap();
            at_100.push(ts.samples()[100]);
            at_400.push(ts.samples()[399]);
        }
        let v100 = at_100.iter().map(|x| x * x).sum::<f64>() / seeds as f64;
        let v400 = at_400.iter().map(|x| x * x).sum::<f64>() / seeds as f64;
        let e100 = rate * rate * dt * 100.0;
        let e400 = rate * rate * dt * 399.0;
        assert!((v100 / e100 - 1.0).abs() < 0.2, "{v100} {e100}");
        assert!((v400 / e400 - 1.0).abs() < 0.2, "{v400} {e400}");
    }

    #[test]
    fn fiber_drift_matches_product() {
        let temps = TimeSeries::new(1.0, vec![20.0, 21.8, 23.6], Unit::Kelvin).unwrap();
        let dl = gen_fiber_length_drift(SILICA_EXPANSION, 10e3, &temps).unwrap();
        assert_eq!(dl.samples()[0], 0.0);
        assert!((dl.samples()[2] - 0.0198).abs() < 1e-9);
        let dl2 = gen_fiber_length_drift(SILICA_EXPANSION, 20e3, &temps).unwrap();
        assert!((dl2.samples()[2] - 2.0 * dl.samples()[2]).abs() < 1e-15);
        let flat = TimeSeries::new(1.0, vec![5.0; 4], Unit::Kelvin).unwrap();
        assert!(gen_fiber_length_drift(SILICA_EXPANSION, 10e3, &flat)
            .unwrap()
            .samples()
            .iter()
            .all(|&x| x == 0.0));
        assert!(gen_fiber_length_drift(SILICA_EXPANSION, 0.0, &flat).is_err());
    }

    use crate::phase::SILICA_EXPANSION;

    #[test]
    fn shot_counts_are_poissonian() {
        let n = 10_000;
        let ts = gen_shot_noise_counts(100e3, 1e-3, n, 3).unwrap();
        let m = ts.mean();
        let sigma_mean = (100.0 / n as f64).sqrt();
        assert!((m - 100.0).abs() < 3.0 * sigma_mean, "{m}");
        let fano = ts.variance() / m;
        assert!((fano - 1.0).abs() < 0.05, "{fano}");
    }

    #[test]
    fn prbs_is_balanced_and_held() {
        let p = NoiseProcess::new(
            NoiseKind::Prbs {
                amplitude: 0.5,
                order: 11,
                hold: 3,
            },
            17,
        );
        let ts = p.generate(1e-3, 3 * 2047).unwrap();
        assert!(ts.samples().iter().all(|&x| x.abs() == 0.5));
        for chunk in ts.samples().chunks(3) {
            assert!(chunk.iter().all(|&x| x == chunk[0]));
        }
        // One full period of a maximal-length sequence has one more 1 than 0.
        let ones = ts.samples().iter().step_by(3).filter(|&&x| x > 0.0).count();
        assert_eq!(ones, 1024);
    }

    #[test]
    fn stream_and_batch_agree() {
        let p = NoiseProcess::new(
            NoiseKind::MechanicalResonance {
                resonances: vec![Resonance::new(50.0, 5.0, 1.0)],
            },
            99,
        );
        let batch = p.generate(1e-3, 100).unwrap();
        let stream: Vec<f64> = p.stream(1e-3).unwrap().take(100).collect();
        assert_eq!(batch.samples(), &stream[..]);
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
    }
}
