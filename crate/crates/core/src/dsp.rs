//! Measurement analysis: analytic-signal phase, Welch spectra, cumulative
//! spectral densities, loop identification, fringe fitting and error budgets.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::fmt;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, require, Error, Result};
use crate::phase::unwrap_in_place;
use crate::series::{check_compatible, TimeSeries, Unit};

/// Fraction of a Hilbert phase record discarded at each end before statistics.
pub const HILBERT_EDGE_TRIM: f64 = 0.05;

/// Instantaneous phase of a real band-pass record via the FFT analytic signal, unwrapped.
pub fn hilbert_phase(ts: &TimeSeries) -> Result<TimeSeries> {
    let n = ts.len();
    require(n >= 16, "ts", "the analytic signal needs at least 16 samples")?;
    let m = ts.mean();
    let spread = ts.samples().iter().map(|x| (x - m).abs()).fold(0.0, f64::max);
    if spread <= 1e-12 * m.abs().max(f64::MIN_POSITIVE) || spread == 0.0 {
        return Err(Error::Degenerate("constant input has no instantaneous phase".into()));
    }
    let mut buf: Vec<Complex64> = ts.samples().iter().map(|&x| Complex64::new(x - m, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let w = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *v *= w / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut phase: Vec<f64> = buf.iter().map(|z| z.arg()).collect();
    unwrap_in_place(&mut phase);
    TimeSeries::new(ts.dt(), phase, Unit::Rad)
}

/// Instantaneous frequency (Hz) as the centred derivative of [`hilbert_phase`].
pub fn instantaneous_frequency(ts: &TimeSeries) -> Result<TimeSeries> {
    let p = hilbert_phase(ts)?;
    let x = p.samples();
    let n = x.len();
    let dt = p.dt();
    let f = (0..n)
        .map(|k| {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            (x[b] - x[a]) / ((b - a) as f64 * dt * TAU)
        })
        .collect();
    TimeSeries::new(dt, f, Unit::Hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|k| 0.5 - 0.5 * (TAU * k as f64 / n as f64).cos())
                .collect(),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        })
    }
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub frequencies: Vec<f64>,
    /// unit²/Hz.
    pub density: Vec<f64>,
    pub window: Window,
    pub segment_length: usize,
    pub overlap: f64,
    pub unit: Unit,
}

impl PsdEstimate {
    /// Bin spacing, Hz.
    pub fn resolution(&self) -> f64 {
        if self.frequencies.len() > 1 {
            self.frequencies[1] - self.frequencies[0]
        } else {
            0.0
        }
    }

    /// Total power `Σ P·Δf`.
    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.resolution()
    }

    pub fn total_rms(&self) -> f64 {
        self.integral().sqrt()
    }

    /// RMS of the bins with `lo ≤ f ≤ hi`.
    pub fn band_rms(&self, lo: f64, hi: f64) -> f64 {
        let df = self.resolution();
        self.frequencies
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, p)| p * df)
            .sum::<f64>()
            .sqrt()
    }

    /// Frequency of the largest bin above DC.
    pub fn peak_frequency(&self) -> f64 {
        let k = self
            .density
            .iter()
            .enumerate()
            .skip(1)
            .fold((1, f64::NEG_INFINITY), |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc })
            .0;
        self.frequencies[k.min(self.frequencies.len() - 1)]
    }
}

struct Segments {
    starts: Vec<usize>,
    len: usize,
    window: Vec<f64>,
    win_power: f64,
}

fn segments(n: usize, segment_length: usize, overlap: f64, window: Window) -> Result<Segments> {
    if segment_length > n {
        return Err(Error::SegmentTooLong {
            segment: segment_length,
            record: n,
        });
    }
    require(segment_length >= 2, "segment_length", "segments need at least two samples")?;
    require(
        (0.0..=0.9).contains(&overlap),
        "overlap",
        "overlap must lie in [0, 0.9]",
    )?;
    let step = (segment_length - (overlap * segment_length as f64).round() as usize).max(1);
    let starts = (0..)
        .map(|k| k * step)
        .take_while(|s| s + segment_length <= n)
        .collect();
    let w = window.coefficients(segment_length);
    let win_power = w.iter().map(|x| x * x).sum();
    Ok(Segments {
        starts,
        len: segment_length,
        window: w,
        win_power,
    })
}

fn segment_spectra(x: &[f64], seg: &Segments, planner: &mut FftPlanner<f64>) -> Vec<Vec<Complex64>> {
    let fft = planner.plan_fft_forward(seg.len);
    seg.starts
        .iter()
        .map(|&s| {
            let part = &x[s..s + seg.len];
            let m = part.iter().sum::<f64>() / seg.len as f64;
            let mut buf: Vec<Complex64> = part
                .iter()
                .zip(&seg.window)
                .map(|(v, w)| Complex64::new((v - m) * w, 0.0))
                .collect();
            fft.process(&mut buf);
            buf.truncate(seg.len / 2 + 1);
            buf
        })
        .collect()
}

fn one_sided_scale(k: usize, len: usize) -> f64 {
    if k == 0 || (len.is_multiple_of(2) && k == len / 2) {
        1.0
    } else {
        2.0
    }
}

/// Averaged cross-spectrum `⟨conj(X)·Y⟩` on the one-sided grid, scaled as a density.
fn welch_cross(
    x: &[f64],
    y: &[f64],
    dt: f64,
    seg: &Segments,
    planner: &mut FftPlanner<f64>,
) -> (Vec<Complex64>, Vec<f64>, Vec<f64>) {
    let sx = segment_spectra(x, seg, planner);
    let sy = segment_spectra(y, seg, planner);
    let bins = seg.len / 2 + 1;
    let norm = dt / (seg.win_power * sx.len() as f64);
    let mut pxy = vec![Complex64::new(0.0, 0.0); bins];
    let mut pxx = vec![0.0; bins];
    let mut pyy = vec![0.0; bins];
    for (a, b) in sx.iter().zip(&sy) {
        for k in 0..bins {
            pxy[k] += a[k].conj() * b[k];
            pxx[k] += a[k].norm_sqr();
            pyy[k] += b[k].norm_sqr();
        }
    }
    for k in 0..bins {
        let s = norm * one_sided_scale(k, seg.len);
        pxy[k] *= s;
        pxx[k] *= s;
        pyy[k] *= s;
    }
    (pxy, pxx, pyy)
}

fn frequency_grid(len: usize, dt: f64) -> Vec<f64> {
    (0..=len / 2).map(|k| k as f64 / (len as f64 * dt)).collect()
}

/// Welch averaged periodogram with constant detrending per segment.
///
/// Density is one-sided, `2|X|²/(fs·Σw²)` (DC and Nyquist not doubled), so
/// `Σ P·Δf` equals the variance of the record.
pub fn welch_psd(ts: &TimeSeries, segment_length: usize, overlap: f64, window: Window) -> Result<PsdEstimate> {
    let seg = segments(ts.len(), segment_length, overlap, window)?;
    let mut planner = FftPlanner::new();
    let spectra = segment_spectra(ts.samples(), &seg, &mut planner);
    let norm = ts.dt() / (seg.win_power * spectra.len() as f64);
    let bins = segment_length / 2 + 1;
    let density = (0..bins)
        .map(|k| {
            let s: f64 = spectra.iter().map(|sp| sp[k].norm_sqr()).sum();
            s * norm * one_sided_scale(k, segment_length)
        })
        .collect();
    Ok(PsdEstimate {
        frequencies: frequency_grid(segment_length, ts.dt()),
        density,
        window,
        segment_length,
        overlap,
        unit: ts.unit(),
    })
}

/// [`welch_psd`] with Hann window, 50% overlap and segments of an eighth of the record.
pub fn welch_psd_default(ts: &TimeSeries) -> Result<PsdEstimate> {
    welch_psd(ts, (ts.len() / 8).max(2), 0.5, Window::Hann)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    FromLow,
    FromHigh,
}

/// RMS accumulated over frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCurve {
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
}

/// Running square root of the integrated density, from either end of the band.
///
/// `FromLow` at bin k covers bins `0..=k`, `FromHigh` covers `k..`, so both
/// reach the total RMS at their far end.
pub fn cumulative_csd(psd: &PsdEstimate, direction: Direction) -> SpectralCurve {
    let df = psd.resolution();
    let n = psd.density.len();
    let mut values = vec![0.0; n];
    let mut acc = 0.0;
    match direction {
        Direction::FromLow => {
            for k in 0..n {
                acc += psd.density[k] * df;
                values[k] = acc.sqrt();
            }
        }
        Direction::FromHigh => {
            for k in (0..n).rev() {
                acc += psd.density[k] * df;
                values[k] = acc.sqrt();
            }
        }
    }
    SpectralCurve {
        frequencies: psd.frequencies.clone(),
        values,
    }
}

/// Frequency response estimate with magnitude-squared coherence per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunctionEstimate {
    pub frequencies: Vec<f64>,
    pub response: Vec<Complex64>,
    pub coherence: Vec<f64>,
}

impl TransferFunctionEstimate {
    pub fn magnitude(&self) -> Vec<f64> {
        self.response.iter().map(|h| h.norm()).collect()
    }

    pub fn coherent(&self, threshold: f64) -> Vec<bool> {
        self.coherence.iter().map(|&c| c > threshold).collect()
    }
}

/// H1 estimate `P_xy/P_xx` of the response from `input` to `output`.
pub fn frequency_response(
    input: &TimeSeries,
    output: &TimeSeries,
    segment_length: usize,
    overlap: f64,
) -> Result<TransferFunctionEstimate> {
    check_compatible(input, output)?;
    let seg = segments(input.len(), segment_length, overlap, Window::Hann)?;
    let mut planner = FftPlanner::new();
    let (pxy, pxx, pyy) = welch_cross(input.samples(), output.samples(), input.dt(), &seg, &mut planner);
    let mut response = Vec::with_capacity(pxy.len());
    let mut coherence = Vec::with_capacity(pxy.len());
    for k in 0..pxy.len() {
        if pxx[k] > 0.0 && pyy[k] > 0.0 {
            response.push(pxy[k] / pxx[k]);
            coherence.push((pxy[k].norm_sqr() / (pxx[k] * pyy[k])).clamp(0.0, 1.0));
        } else {
            response.push(Complex64::new(0.0, 0.0));
            coherence.push(0.0);
        }
    }
    Ok(TransferFunctionEstimate {
        frequencies: frequency_grid(segment_length, input.dt()),
        response,
        coherence,
    })
}

/// Identified loop: open-loop gain `L` and suppression `S = 1/(1+L)`.
///
/// Coherence is the lower of the two runs' coherences in each bin.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopEstimate {
    pub open_loop: TransferFunctionEstimate,
    pub sensitivity: TransferFunctionEstimate,
}

/// Half-width of the Hann window's main lobe, in bins.
const HANN_MAIN_LOBE_BINS: usize = 2;

/// Coherence a bin needs before it is used.
pub const COHERENCE_THRESHOLD: f64 = 0.9;

impl LoopEstimate {
    /// Lowest coherent frequency at which `|S|` rises to −3 dB, log-interpolated
    /// between bins. `None` when no coherent bin crosses.
    pub fn suppression_bandwidth(&self) -> Option<f64> {
        let s = &self.sensitivity;
        let pts: Vec<(f64, f64)> = s
            .frequencies
            .iter()
            .zip(&s.response)
            .zip(&s.coherence)
            .filter(|((f, _), c)| **f > 0.0 && **c > COHERENCE_THRESHOLD)
            .map(|((f, h), _)| (*f, h.norm()))
            .collect();
        let first = pts.first()?;
        if first.1 >= FRAC_1_SQRT_2 {
            return None;
        }
        pts.windows(2).find_map(|w| {
            let ((f0, m0), (f1, m1)) = (w[0], w[1]);
            if m1 >= FRAC_1_SQRT_2 {
                let t = (FRAC_1_SQRT_2.ln() - m0.ln()) / (m1.ln() - m0.ln());
                Some((f0.ln() + t * (f1.ln() - f0.ln())).exp())
            } else {
                None
            }
        })
    }
}

/// Default identification segment: a thirty-second of the record.
pub fn default_tf_segment(n: usize) -> usize {
    (n / 32).max(16)
}

/// Loop identification from an injected signal and the responses with
/// feedback on and off.
///
/// The injection enters at the controller input. With feedback off the
/// controller sees only the injection, so `H_off = L`; with feedback on
/// `H_on = L/(1+L)`. Hence `L = H_off/H_on − 1` and `S = H_on/H_off`.
fn difference(x: &TimeSeries) -> Result<TimeSeries> {
    let d: Vec<f64> = x.samples().windows(2).map(|w| w[1] - w[0]).collect();
    TimeSeries::new(x.dt(), d, x.unit())
}

pub fn estimate_tf(injected: &TimeSeries, output_on: &TimeSeries, output_off: &TimeSeries) -> Result<LoopEstimate> {
    estimate_tf_with(injected, output_on, output_off, default_tf_segment(injected.len()), 0.5)
}

pub fn estimate_tf_with(
    injected: &TimeSeries,
    output_on: &TimeSeries,
    output_off: &TimeSeries,
    segment_length: usize,
    overlap: f64,
) -> Result<LoopEstimate> {
    check_compatible(injected, output_on)?;
    check_compatible(injected, output_off)?;
    // The same first difference on input and outputs leaves every ratio
    // unchanged but whitens integrated phase, whose low-frequency power
    // would otherwise leak through the window into every bin.
    let (injected, output_on, output_off) = (difference(injected)?, difference(output_on)?, difference(output_off)?);
    let on = frequency_response(&injected, &output_on, segment_length, overlap)?;
    let off = frequency_response(&injected, &output_off, segment_length, overlap)?;
    // Bins whose Hann main lobe (two bins each side) reaches DC are smeared
    // across a steep response and biased by the removed segment mean.
    let coherence: Vec<f64> = on
        .coherence
        .iter()
        .zip(&off.coherence)
        .enumerate()
        .map(|(k, (a, b))| if k <= HANN_MAIN_LOBE_BINS { 0.0 } else { a.min(*b) })
        .collect();
    let zero = Complex64::new(0.0, 0.0);
    let mut l = Vec::with_capacity(coherence.len());
    let mut s = Vec::with_capacity(coherence.len());
    for (hon, hoff) in on.response.iter().zip(&off.response) {
        if hon.norm() > 0.0 && hoff.norm() > 0.0 {
            l.push(hoff / hon - 1.0);
            s.push(hon / hoff);
        } else {
            l.push(zero);
            s.push(zero);
        }
    }
    Ok(LoopEstimate {
        open_loop: TransferFunctionEstimate {
            frequencies: on.frequencies.clone(),
            response: l,
            coherence: coherence.clone(),
        },
        sensitivity: TransferFunctionEstimate {
            frequencies: on.frequencies,
            response: s,
            coherence,
        },
    })
}

/// Result of a two-detector fringe fit `I± = (1 ± C cos(φ + φ0))/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeFit {
    pub contrast: f64,
    /// rad, wrapped to (−π, π].
    pub phase_offset: f64,
    /// Factors that equalize the detectors' efficiencies, applied to detector 1 and 2.
    pub imbalance_correction: [f64; 2],
    /// RMS of the normalized fit residual.
    pub residual_rms: f64,
}

fn cosine_lsq(phi: &[f64], x: &[f64]) -> (f64, f64) {
    let (mut cc, mut ss, mut cs, mut xc, mut xs) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&p, &v) in phi.iter().zip(x) {
        let (s, c) = p.sin_cos();
        cc += c * c;
        ss += s * s;
        cs += c * s;
        xc += v * c;
        xs += v * s;
    }
    let det = cc * ss - cs * cs;
    ((xc * ss - xs * cs) / det, (xs * cc - xc * cs) / det)
}

/// Joint fit of complementary fringes from two detectors.
///
/// The detector imbalance `κ` is estimated iteratively against the current
/// fringe model, starting from the ratio of mean rates. Each setpoint is then
/// normalized by its corrected total rate, `x = (r1/κ − r2)/(r1/κ + r2)`, and
/// `x = a·cos φ + b·sin φ` is solved by linear least squares.
pub fn fit_fringe(setpoints: &[f64], rates1: &[f64], rates2: &[f64]) -> Result<FringeFit> {
    if setpoints.len() != rates1.len() || setpoints.len() != rates2.len() {
        return Err(Error::LengthMismatch {
            what: "fringe setpoints and rates",
            left: setpoints.len(),
            right: rates1.len().min(rates2.len()),
        });
    }
    let mut distinct: Vec<f64> = setpoints.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if distinct.len() < 5 {
        return Err(Error::Degenerate(format!(
            "a fringe fit needs at least 5 distinct setpoints, got {}",
            distinct.len()
        )));
    }
    let span = distinct[distinct.len() - 1] - distinct[0];
    if span <= PI {
        return Err(Error::Degenerate(format!(
            "setpoints span {span:.3} rad, which does not exceed π"
        )));
    }
    if rates1.iter().chain(rates2).any(|&r| !(r >= 0.0)) {
        return Err(invalid("rates", "count rates must be non-negative"));
    }
    let m1: f64 = rates1.iter().sum();
    let m2: f64 = rates2.iter().sum();
    if !(m1 > 0.0 && m2 > 0.0) {
        return Err(Error::Degenerate("both detectors need counts".into()));
    }

    let normalized = |kappa: f64| -> Vec<f64> {
        rates1
            .iter()
            .zip(rates2)
            .map(|(&a, &b)| {
                let a = a / kappa;
                if a + b > 0.0 {
                    (a - b) / (a + b)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let mut kappa = m1 / m2;
    let (mut a, mut b) = cosine_lsq(setpoints, &normalized(kappa));
    for _ in 0..200 {
        let model: Vec<f64> = setpoints.iter().map(|p| a * p.cos() + b * p.sin()).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for ((&r1, &r2), &x) in rates1.iter().zip(rates2).zip(&model) {
            let u = r1 * (1.0 - x);
            let v = r2 * (1.0 + x);
            num += u * v;
            den += v * v;
        }
        let next = if den > 0.0 { num / den } else { kappa };
        let done = ((next - kappa) / kappa).abs() < 1e-14;
        kappa = next;
        (a, b) = cosine_lsq(setpoints, &normalized(kappa));
        if done {
            break;
        }
    }
    let x = normalized(kappa);
    let residual_rms = (setpoints
        .iter()
        .zip(&x)
        .map(|(p, v)| (v - a * p.cos() - b * p.sin()).powi(2))
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    Ok(FringeFit {
        contrast: a.hypot(b).min(1.0),
        phase_offset: (-b).atan2(a),
        imbalance_correction: [1.0 / kappa, 1.0],
        residual_rms,
    })
}

/// Gaussian phase spread implied by a fringe contrast: `σ = √(−2 ln C)`.
pub fn sigma_from_contrast(contrast: f64) -> Result<f64> {
    if !(contrast > 0.0) {
        return Err(invalid("contrast", "contrast must be positive"));
    }
    if contrast > 1.0 + 1e-12 {
        return Err(invalid("contrast", "contrast cannot exceed 1"));
    }
    Ok((-2.0 * contrast.min(1.0).ln()).max(0.0).sqrt())
}

/// Quadrature sum `√(Σ m·σ²)` of independent components with multiplicities.
pub fn combine_sigmas(components: &[(f64, u32)]) -> Result<f64> {
    let mut acc = 0.0;
    for &(s, m) in components {
        if !(s >= 0.0) {
            return Err(invalid("sigma", "component deviations must be non-negative"));
        }
        acc += f64::from(m) * s * s;
    }
    Ok(acc.sqrt())
}
