//! Plain-text run reports: `key = value` lines grouped under `[section]` headers.

use std::fmt::{Display, Write as _};

use phasesync::io::TOOL_VERSION;
use phasesync::phase::{fidelity_from_phase_error, wrap_phase};

pub struct Report {
    text: String,
}

impl Report {
    pub fn new(kind: &str) -> Self {
        let mut text = String::new();
        let _ = writeln!(text, "# phasesync {TOOL_VERSION} {kind} report");
        Self { text }
    }

    pub fn section(&mut self, name: &str) {
        let _ = writeln!(self.text, "\n[{name}]");
    }

    pub fn value(&mut self, key: &str, v: impl Display) {
        let _ = writeln!(self.text, "{key} = {v}");
    }

    pub fn line(&mut self, s: impl Display) {
        let _ = writeln!(self.text, "{s}");
    }

    /// Counts of `values` in `bins` equal bins over [0, 1], one `lo hi count` line each.
    pub fn histogram(&mut self, values: &[f64], bins: usize) {
        let bins = bins.max(1);
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = ((v * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        self.value("mean", format!("{mean:.5}"));
        for (i, c) in counts.iter().enumerate() {
            self.line(format!("{:.3} {:.3} {c}", i as f64 / bins as f64, (i + 1) as f64 / bins as f64));
        }
    }

    pub fn render(&self) -> &str {
        &self.text
    }
}

/// Fidelity of each sample of the total phase about its circular mean, the
/// constant part being calibrated away by a fringe measurement.
pub fn fidelities(total: &[f64]) -> Vec<f64> {
    let (s, c) = total.iter().fold((0.0, 0.0), |(s, c), x| (s + x.sin(), c + x.cos()));
    let centre = s.atan2(c);
    total
        .iter()
        .map(|x| fidelity_from_phase_error(wrap_phase(x - centre)))
        .collect()
}
