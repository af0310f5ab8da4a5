//! End-to-end behaviour of the two-node system.

use std::f64::consts::TAU;

use phasesync::noise::{NoiseKind, NoiseProcess};
use phasesync::phase::{unwrap_in_place, wrap_phase};
use phasesync::plant::{build_system, simulate, LoopId, Simulator, SystemModel};
use phasesync::scenario::ScenarioConfig;
use phasesync::Error;

fn reference() -> SystemModel {
    build_system(&ScenarioConfig::reference()).unwrap()
}

fn quiet() -> SystemModel {
    let mut s = reference();
    s.silence();
    s
}

fn with(overrides: &str) -> SystemModel {
    build_system(&ScenarioConfig::from_toml_str(overrides).unwrap()).unwrap()
}

/// Least-squares slope of `y` against sample index, per sample.
fn slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        sxy += (i as f64 - mx) * (v - my);
        sxx += (i as f64 - mx).powi(2);
    }
    sxy / sxx
}

#[test]
fn reference_system_has_five_loops() {
    let s = reference();
    assert_eq!(s.loops(), LoopId::ALL.to_vec());
}

#[test]
fn noiseless_system_holds_its_setpoint() {
    let out = simulate(&quiet(), 0.2).unwrap();
    let eta = out.eta_total.samples();
    for v in eta {
        assert!((v - eta[0]).abs() < 1e-9, "eta_total moved by {}", v - eta[0]);
    }
    assert!(out.unlocks.is_empty());
}

#[test]
fn open_loops_pass_a_laser_walk_through() {
    let mut s = quiet();
    s.set_all_loops(false);
    let walk = NoiseProcess::new(NoiseKind::LaserLinewidth { linewidth: 2e3 }, 77);
    s.nodes[0].excitation_laser.phase_noise = Some(walk.clone());
    let out = simulate(&s, 0.05).unwrap();

    // The record is taken at the start of each record interval, just before
    // that interval's first fast step.
    let per_record = (s.steps.record / s.steps.fast).round() as usize;
    let n = out.eta_total.len();
    let expected = walk.generate(s.steps.fast, n * per_record).unwrap();
    for (k, v) in out.eta_total.samples().iter().enumerate().skip(1) {
        let e = expected.samples()[k * per_record - 1];
        assert!((v - e).abs() < 1e-9, "sample {k}: {v} vs {e}");
    }
}

#[test]
fn total_phase_is_the_sum_of_its_parts() {
    let out = simulate(&reference(), 0.3).unwrap();
    for (a, b) in out.composed_total().iter().zip(out.eta_total.samples()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn runs_are_reproducible() {
    let s = reference();
    assert_eq!(simulate(&s, 0.05).unwrap(), simulate(&s, 0.05).unwrap());
    let mut other = s.clone();
    other.master_seed += 1;
    assert_ne!(simulate(&s, 0.05).unwrap().eta_total, simulate(&other, 0.05).unwrap().eta_total);
}

#[test]
fn global_setpoint_moves_the_total_phase() {
    let mut sim = Simulator::new(&quiet()).unwrap();
    sim.advance(0.05).unwrap();
    let start = sim.eta_total();
    for mu in [0.7, -2.0, 3.0] {
        sim.set_global_setpoint(mu);
        sim.advance(0.1).unwrap();
        let moved = wrap_phase(sim.eta_total() - start - mu);
        assert!(moved.abs() < 1e-3, "setpoint {mu}: off by {moved}");
    }
}

#[test]
fn balanced_plan_leaves_no_beat_on_the_photons() {
    let out = simulate(&reference(), 1.0).unwrap();
    let mut eta = out.eta_total.samples().to_vec();
    unwrap_in_place(&mut eta);
    let f = slope(&eta) / (TAU * out.eta_total.dt());
    assert!(f.abs() < 1.0, "mean frequency {f} Hz");
}

#[test]
fn unbalanced_plan_shows_its_residual_beat() {
    let mut s = quiet();
    s.plan.omega_loc_b += 3;
    let out = simulate(&s, 1.0).unwrap();
    assert_eq!(out.omega_tot, -3.0);
    let mut eta = out.eta_total.samples().to_vec();
    unwrap_in_place(&mut eta);
    let f = slope(&eta) / (TAU * out.eta_total.dt());
    assert!((f + 3.0).abs() < 0.01, "mean frequency {f} Hz");
}

#[test]
fn slip_count_follows_the_fiber_phase() {
    // A fiber warming linearly drags its phase through several turns that
    // the fast loop of arm A must follow.
    let mut s = quiet();
    let rate = 1e-3;
    s.midpoint.arms[0].fiber_temperature = Some(NoiseProcess::new(
        NoiseKind::ThermalDrift {
            rate_rms: 0.0,
            linear_rate: rate,
        },
        1,
    ));
    s.midpoint.arms[0].desaturation = None;
    let duration = 1.0;
    let out = simulate(&s, duration).unwrap();
    let arm = &s.midpoint.arms[0];
    let slips = *out.slip_count[0].last().unwrap();
    let t_end = (out.slip_count[0].len() - 1) as f64 * s.steps.record;
    let turns = arm.phase_per_metre() * arm.expansion * arm.fiber.length * rate * t_end / TAU;
    assert!(turns > 3.0);
    assert!((slips as f64 - turns).abs() <= 1.0, "{slips} slips vs {turns:.2} turns");
}

#[test]
fn zero_length_fibers_are_a_valid_system() {
    let s = with("[midpoint.arms.a.fiber]\nlength = 0.0\n[midpoint.arms.b.fiber]\nlength = 0.0\n");
    assert_eq!(s.midpoint.arms[0].fiber.length, 0.0);
    let out = simulate(&s, 0.1).unwrap();
    assert!(out.unlocks.is_empty());
}

#[test]
fn unknown_profile_is_named() {
    let cfg = ScenarioConfig::from_toml_str("[nodes.a.paths.d1]\nlength = 1.0\nnoise = [\"nope\"]\n").unwrap();
    match build_system(&cfg) {
        Err(Error::UnknownProfile { name, key }) => {
            assert_eq!(name, "nope");
            assert!(key.contains("d1"), "{key}");
        }
        other => panic!("expected an unknown-profile error, got {other:?}"),
    }
}

#[test]
fn reference_residuals_add_in_quadrature() {
    let out = simulate(&reference(), 2.0).unwrap();
    let s = |id| out.stats.get(id).std_dev();
    let budget = (s(LoopId::LocalA).powi(2)
        + s(LoopId::LocalB).powi(2)
        + s(LoopId::FastA).powi(2)
        + s(LoopId::FastB).powi(2)
        + s(LoopId::Global).powi(2))
    .sqrt();
    let total = out.stats.total.std_dev();
    assert!((total / budget - 1.0).abs() < 0.15, "total {total} vs budget {budget}");
}
