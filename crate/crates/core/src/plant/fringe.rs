//! Fringe sweeps: step the global clock phase and count the reflected light.

use std::f64::consts::TAU;

use crate::dsp::{fit_fringe, sigma_from_contrast, FringeFit};
use crate::error::{invalid, Result};
use crate::phase::wrap_phase;
use crate::series::variance;

use super::sim::{LoopUnlock, SimOutput, Simulator};
use super::model::SystemModel;

/// One pass over all setpoints.
#[derive(Debug, Clone)]
pub struct FringeSweep {
    /// Time the sweep started, s.
    pub start: f64,
    pub setpoints: Vec<f64>,
    pub counts: [Vec<f64>; 2],
    pub fit: FringeFit,
    /// Mean true `θ_err,A − θ_err,B` during the sweep, rad.
    pub theta_err_difference: f64,
}

#[derive(Debug, Clone)]
pub struct FringeReport {
    pub sweeps: Vec<FringeSweep>,
    /// Fit over the counts of all sweeps added per setpoint.
    pub combined: FringeFit,
    /// Phase spread implied by the combined contrast, rad.
    pub sigma: f64,
    /// Standard deviation of the per-sweep phase offsets, rad.
    pub setpoint_spread: f64,
    pub unlocks: Vec<LoopUnlock>,
    pub output: SimOutput,
}

/// Evenly spaced setpoints over one turn.
pub fn sweep_setpoints(n: usize) -> Vec<f64> {
    (0..n).map(|i| TAU * i as f64 / n as f64).collect()
}

/// Per-sweep offsets unwrapped around their circular mean.
pub fn unwrapped_offsets(sweeps: &[FringeSweep]) -> Vec<f64> {
    let (s, c) = sweeps
        .iter()
        .fold((0.0, 0.0), |(s, c), w| (s + w.fit.phase_offset.sin(), c + w.fit.phase_offset.cos()));
    let centre = s.atan2(c);
    sweeps
        .iter()
        .map(|w| centre + wrap_phase(w.fit.phase_offset - centre))
        .collect()
}

/// Runs `repeats` sweeps of `setpoints` steps with the system's settle and dwell times.
pub fn run_fringe(system: &SystemModel, setpoints: usize, repeats: usize) -> Result<FringeReport> {
    if setpoints < 5 {
        return Err(invalid("setpoints", "a fringe sweep needs at least 5 setpoints"));
    }
    if repeats == 0 {
        return Err(invalid("repeats", "need at least one sweep"));
    }
    let f = &system.fringe;
    if !(f.settle >= 0.0 && f.dwell > 0.0) {
        return Err(invalid("fringe", "settle must be non-negative and dwell positive"));
    }
    if system.nodes.iter().any(|n| n.reflected_rate <= 0.0) {
        return Err(invalid("reflected_rate", "fringe sweeps need reflected light at both nodes"));
    }
    let mus = sweep_setpoints(setpoints);
    let mut sim = Simulator::new(system)?;
    let mut sweeps = Vec::with_capacity(repeats);
    let mut total = [vec![0.0; setpoints], vec![0.0; setpoints]];
    for _ in 0..repeats {
        let start = sim.time();
        let mut counts = [Vec::with_capacity(setpoints), Vec::with_capacity(setpoints)];
        let mut err = 0.0;
        for (i, &mu) in mus.iter().enumerate() {
            sim.set_global_setpoint(mu);
            sim.advance(f.settle)?;
            sim.set_zpl_counting(true);
            let before = sim.zpl_counts();
            sim.advance(f.dwell)?;
            let after = sim.zpl_counts();
            sim.set_zpl_counting(false);
            err += sim.theta_err_difference();
            for d in 0..2 {
                let c = after[d] - before[d];
                counts[d].push(c);
                total[d][i] += c;
            }
        }
        let fit = fit_fringe(&mus, &counts[0], &counts[1])?;
        sweeps.push(FringeSweep {
            start,
            setpoints: mus.clone(),
            counts,
            fit,
            theta_err_difference: err / setpoints as f64,
        });
    }
    let combined = fit_fringe(&mus, &total[0], &total[1])?;
    let sigma = sigma_from_contrast(combined.contrast.max(1e-12))?;
    let offsets = unwrapped_offsets(&sweeps);
    let setpoint_spread = if offsets.len() > 1 { variance(&offsets).sqrt() } else { 0.0 };
    let output = sim.finish()?;
    Ok(FringeReport {
        sweeps,
        combined,
        sigma,
        setpoint_spread,
        unlocks: output.unlocks.clone(),
        output,
    })
}
