//! Uniformly sampled records.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Physical unit attached to a [`TimeSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Rad,
    Hz,
    Counts,
    Meters,
    Kelvin,
    Seconds,
    Volts,
    /// Spectral density of a phase, rad²/Hz.
    RadSquaredPerHz,
    Arb,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Unit::Rad => "rad",
            Unit::Hz => "Hz",
            Unit::Counts => "counts",
            Unit::Meters => "m",
            Unit::Kelvin => "K",
            Unit::Seconds => "s",
            Unit::Volts => "V",
            Unit::RadSquaredPerHz => "rad2/Hz",
            Unit::Arb => "arb",
        };
        f.write_str(s)
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "rad" => Unit::Rad,
            "Hz" | "hz" => Unit::Hz,
            "counts" => Unit::Counts,
            "m" => Unit::Meters,
            "K" => Unit::Kelvin,
            "s" => Unit::Seconds,
            "V" => Unit::Volts,
            "rad2/Hz" => Unit::RadSquaredPerHz,
            "arb" | "" => Unit::Arb,
            other => return Err(Error::Format(format!("unknown unit `{other}`"))),
        })
    }
}

/// A uniformly sampled real-valued record.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    dt: f64,
    samples: Vec<f64>,
    unit: Unit,
}

impl TimeSeries {
    pub fn new(dt: f64, samples: Vec<f64>, unit: Unit) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive and finite, got {dt}")));
        }
        if samples.is_empty() {
            return Err(invalid("samples", "a time series needs at least one sample"));
        }
        Ok(Self { dt, samples, unit })
    }

    pub fn zeros(dt: f64, n: usize, unit: Unit) -> Result<Self> {
        Self::new(dt, vec![0.0; n], unit)
    }

    /// Sample times `k·dt`, s.
    pub fn times(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.samples.len() as f64
    }

    /// Time stamp of sample `i`, starting at zero.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn mean(&self) -> f64 {
        mean(&self.samples)
    }

    /// Population variance about the sample mean.
    pub fn variance(&self) -> f64 {
        variance(&self.samples)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Root mean square about zero.
    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Keeps every `factor`-th sample.
    pub fn decimate(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("factor", "decimation factor must be at least 1"));
        }
        let samples = self.samples.iter().step_by(factor).copied().collect();
        Self::new(self.dt * factor as f64, samples, self.unit)
    }

    /// Drops `fraction` of the record at each end.
    pub fn trim_edges(&self, fraction: f64) -> Result<Self> {
        let skip = (self.samples.len() as f64 * fraction).floor() as usize;
        if 2 * skip >= self.samples.len() {
            return Err(invalid("fraction", "trimming would remove the whole record"));
        }
        Self::new(
            self.dt,
            self.samples[skip..self.samples.len() - skip].to_vec(),
            self.unit,
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dt: self.dt,
            samples: self.samples.iter().map(|&x| f(x)).collect(),
            unit: self.unit,
        }
    }

    pub fn with_unit(mut self, unit: Unit) -> Self {
        self.unit = unit;
        self
    }

    /// Elementwise sum with a series of identical sampling.
    pub fn add(&self, other: &TimeSeries) -> Result<Self> {
        check_compatible(self, other)?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b)
            .collect();
        Self::new(self.dt, samples, self.unit)
    }
}

pub(crate) fn check_compatible(a: &TimeSeries, b: &TimeSeries) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "time series",
            left: a.len(),
            right: b.len(),
        });
    }
    if ((a.dt - b.dt) / a.dt).abs() > 1e-9 {
        return Err(Error::SampleIntervalMismatch {
            left: a.dt,
            right: b.dt,
        });
    }
    Ok(())
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Pearson correlation coefficient. Returns 0 when either input is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Running moments for long streams that are never stored in full.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
    sum_sq: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
        self.sum_sq += x * x;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std_dev(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).sqrt()
        }
    }

    pub fn rms(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.sum_sq / self.n as f64).sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(TimeSeries::new(0.0, vec![1.0], Unit::Rad).is_err());
        assert!(TimeSeries::new(1.0, vec![], Unit::Rad).is_err());
        assert!(TimeSeries::new(f64::NAN, vec![1.0], Unit::Rad).is_err());
    }

    #[test]
    fn running_stats_match_batch() {
        let x: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1 - 3.0).collect();
        let mut s = RunningStats::default();
        x.iter().for_each(|&v| s.push(v));
        assert!((s.mean() - mean(&x)).abs() < 1e-12);
        assert!((s.std_dev() - variance(&x).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn unit_round_trips_through_text() {
        for u in [Unit::Rad, Unit::Hz, Unit::Counts, Unit::Meters, Unit::Kelvin] {
            assert_eq!(u.to_string().parse::<Unit>().unwrap(), u);
        }
    }

    #[test]
    fn correlation_of_scaled_copy_is_one() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = a.iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((correlation(&a, &b) - 1.0).abs() < 1e-12);
    }
}
