//! Phase of the count-rate beat between two single-photon detectors.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::control::{LockIn, Lowpass2, UnlockEvent};
use crate::error::{invalid, Error, Result};
use crate::phase::ClockSpec;
use crate::series::{TimeSeries, Unit};

/// Low-pass corner of the count demodulator, Hz.
pub const DEFAULT_DEMOD_LOWPASS: f64 = 300.0;
/// Beat SNR below which the phase estimate is not trusted.
pub const DEFAULT_SNR_THRESHOLD: f64 = 4.0;

/// Streaming I/Q demodulation of binned count differences.
///
/// Each input sample is the count difference over one bin, referenced to the
/// bin centre. The phase is insensitive to a common scale of both rates. The
/// low-pass leaves a ripple at twice the beat; it is predicted from the
/// current estimate and subtracted, which costs no lag. The SNR compares the
/// beat amplitude to the shot-noise spread of its estimate, taking the count
/// variance equal to the summed counts.
#[derive(Debug, Clone)]
pub struct BeatDemod {
    lockin: LockIn,
    total: Lowpass2,
    noise_gain: f64,
    ripple: Complex64,
}

impl BeatDemod {
    pub fn new(beat_clock: &ClockSpec, lowpass_corner: f64, bin: f64) -> Result<Self> {
        if !(beat_clock.frequency > 0.0 && beat_clock.frequency < 0.5 / bin) {
            return Err(invalid("beat_clock", "beat must lie between 0 and the bin Nyquist frequency"));
        }
        if !(lowpass_corner > 0.0) {
            return Err(invalid("lowpass_corner", "low-pass corner must be positive"));
        }
        let centred = ClockSpec {
            phase: beat_clock.phase + PI * beat_clock.frequency * bin,
            ..beat_clock.clone()
        };
        Ok(Self {
            lockin: LockIn::new(&centred, lowpass_corner, bin),
            total: Lowpass2::new(lowpass_corner, bin),
            noise_gain: Lowpass2::noise_gain(lowpass_corner, bin),
            ripple: Lowpass2::response(lowpass_corner, bin, 2.0 * beat_clock.frequency),
        })
    }

    /// Feeds one bin of counts; returns `(phase, snr)`.
    #[inline]
    pub fn step(&mut self, counts1: f64, counts2: f64) -> (f64, f64) {
        let r = self.lockin.reference_phase();
        let (i, q) = self.lockin.step(counts1 - counts2);
        let mean_total = self.total.step(counts1 + counts2);
        let (psi, a) = LockIn::polar((i, q));
        let h = self.ripple * Complex64::from_polar(0.5 * a, 2.0 * r + psi);
        let (phase, amplitude) = LockIn::polar((i - h.re, q + h.im));
        let spread = 2.0 * (mean_total.max(0.0) * self.noise_gain / 2.0).sqrt();
        let snr = if spread > 0.0 { amplitude / spread } else { f64::INFINITY };
        (phase, snr)
    }
}

/// Demodulated global phase and the intervals with too few counts.
#[derive(Debug, Clone)]
pub struct GlobalDemod {
    pub phase: TimeSeries,
    pub insufficient_counts: Vec<UnlockEvent>,
}

/// Phase of the count-difference oscillation at the beat clock.
pub fn snspd_global_demod(counts1: &TimeSeries, counts2: &TimeSeries, beat_clock: &ClockSpec) -> Result<GlobalDemod> {
    snspd_global_demod_with(counts1, counts2, beat_clock, DEFAULT_DEMOD_LOWPASS, DEFAULT_SNR_THRESHOLD)
}

pub fn snspd_global_demod_with(
    counts1: &TimeSeries,
    counts2: &TimeSeries,
    beat_clock: &ClockSpec,
    lowpass_corner: f64,
    snr_threshold: f64,
) -> Result<GlobalDemod> {
    check_pair(counts1, counts2)?;
    let dt = counts1.dt();
    let mut demod = BeatDemod::new(beat_clock, lowpass_corner, dt)?;
    // The low-pass needs a few time constants before its SNR means anything.
    let settle = (2.0 / (lowpass_corner * dt)).ceil() as usize;
    let mut phase = Vec::with_capacity(counts1.len());
    let mut events = Vec::new();
    let mut start: Option<f64> = None;
    for (k, (&a, &b)) in counts1.samples().iter().zip(counts2.samples()).enumerate() {
        let (p, snr) = demod.step(a, b);
        phase.push(p);
        let low = k >= settle && snr < snr_threshold;
        let t = k as f64 * dt;
        match (low, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                events.push(UnlockEvent { start: s, end: t });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        events.push(UnlockEvent {
            start: s,
            end: counts1.len() as f64 * dt,
        });
    }
    crate::phase::unwrap_in_place(&mut phase);
    Ok(GlobalDemod {
        phase: TimeSeries::new(dt, phase, Unit::Rad)?,
        insufficient_counts: events,
    })
}

/// Independent phase estimates over consecutive blocks of `window` bins.
pub fn window_phases(counts1: &TimeSeries, counts2: &TimeSeries, beat_clock: &ClockSpec, window: usize) -> Result<Vec<f64>> {
    check_pair(counts1, counts2)?;
    if window == 0 || window > counts1.len() {
        return Err(Error::SegmentTooLong {
            segment: window,
            record: counts1.len(),
        });
    }
    let dt = counts1.dt();
    let w = std::f64::consts::TAU * beat_clock.frequency;
    let mut out = Vec::with_capacity(counts1.len() / window);
    for (blk, (a, b)) in counts1
        .samples()
        .chunks_exact(window)
        .zip(counts2.samples().chunks_exact(window))
        .enumerate()
    {
        let (mut i, mut q) = (0.0, 0.0);
        for (j, (&x1, &x2)) in a.iter().zip(b).enumerate() {
            let t = ((blk * window + j) as f64 + 0.5) * dt;
            let (s, c) = (w * t + beat_clock.phase).sin_cos();
            let x = x1 - x2;
            i += x * c;
            q -= x * s;
        }
        out.push(q.atan2(i));
    }
    Ok(out)
}

fn check_pair(a: &TimeSeries, b: &TimeSeries) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "detector count series",
            left: a.len(),
            right: b.len(),
        });
    }
    if (a.dt() - b.dt()).abs() > 1e-15 * a.dt() {
        return Err(Error::SampleIntervalMismatch {
            left: a.dt(),
            right: b.dt(),
        });
    }
    if a.is_empty() {
        return Err(Error::Degenerate("empty count series".into()));
    }
    Ok(())
}

/// Expected counts of both detectors over `[t, t+bin)` for a beat of phase `psi`.
pub fn expected_counts(rate: f64, visibility: f64, beat: f64, psi: f64, t: f64, bin: f64) -> (f64, f64) {
    let w = std::f64::consts::TAU * beat;
    // Exact integral of cos over the bin.
    let m = if w * bin > 0.0 {
        ((w * (t + bin) + psi).sin() - (w * t + psi).sin()) / (w * bin)
    } else {
        (w * t + psi).cos()
    };
    let base = rate * bin;
    (base * (1.0 + visibility * m), base * (1.0 - visibility * m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    fn clock() -> ClockSpec {
        ClockSpec::new("glob", 1500.0, 0.0).unwrap()
    }

    fn noiseless(rate: f64, psi: f64, n: usize, dt: f64) -> (TimeSeries, TimeSeries) {
        let (a, b): (Vec<f64>, Vec<f64>) = (0..n)
            .map(|k| expected_counts(rate, 0.9, 1500.0, psi, k as f64 * dt, dt))
            .unzip();
        (TimeSeries::new(dt, a, Unit::Counts).unwrap(), TimeSeries::new(dt, b, Unit::Counts).unwrap())
    }

    #[test]
    fn noiseless_zero_phase_demodulates_to_zero() {
        let (a, b) = noiseless(1e5, 0.0, 20_000, 1e-4);
        let d = snspd_global_demod(&a, &b, &clock()).unwrap();
        let tail = &d.phase.samples()[10_000..];
        let worst = tail.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        assert!(worst < 1e-3, "{worst}");
        assert!(d.insufficient_counts.is_empty());
    }

    #[test]
    fn common_scale_leaves_phase_unchanged() {
        let (a, b) = noiseless(1e5, 0.7, 10_000, 1e-4);
        let d1 = snspd_global_demod(&a, &b, &clock()).unwrap();
        let d2 = snspd_global_demod(&a.map(|x| 2.0 * x), &b.map(|x| 2.0 * x), &clock()).unwrap();
        for (p, q) in d1.phase.samples().iter().zip(d2.phase.samples()) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((d1.phase.samples()[9_999] - 0.7).abs() < 1e-3);
    }

    #[test]
    fn missing_beat_is_flagged() {
        let n = 20_000;
        let flat = TimeSeries::new(1e-4, vec![10.0; n], Unit::Counts).unwrap();
        let d = snspd_global_demod(&flat, &flat, &clock()).unwrap();
        assert!(!d.insufficient_counts.is_empty());
    }

    #[test]
    fn window_phase_spread_follows_shot_noise() {
        // 500 kHz per detector, 40 bins per beat period. Quadrupling the
        // window should halve the spread.
        let dt = 1.0 / (1500.0 * 40.0);
        let n = 480_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for k in 0..n {
            let (l1, l2) = expected_counts(5e5, 0.9, 1500.0, 0.3, k as f64 * dt, dt);
            a.push(Poisson::new(l1).unwrap().sample(&mut rng));
            b.push(Poisson::new(l2).unwrap().sample(&mut rng));
        }
        let a = TimeSeries::new(dt, a, Unit::Counts).unwrap();
        let b = TimeSeries::new(dt, b, Unit::Counts).unwrap();
        let spread = |w: usize| {
            let p = window_phases(&a, &b, &clock(), w).unwrap();
            crate::series::variance(&p).sqrt()
        };
        let (s1, s4) = (spread(40), spread(160));
        let ratio = s1 / s4;
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }
}
