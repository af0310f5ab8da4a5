//! Property tests over the library's invariants.

use std::f64::consts::TAU;

use proptest::prelude::*;

use phasesync::control::{mixer_demodulate, pfd_demodulate, Controller, ControllerSpec};
use phasesync::dsp::{cumulative_csd, fit_fringe, sigma_from_contrast, welch_psd_default, Direction};
use phasesync::noise::{gen_laser_phase_noise, gen_mechanical_noise, NoiseKind, NoiseProcess, Resonance};
use phasesync::phase::{
    accumulated_phase, fidelity_from_phase_error, heterodyne_intensity, length_variation_error, phase_slip_error,
    ClockSpec, OpticalFieldSpec, PathId, PathSegment,
};
use phasesync::planner::{check_plan, extend_star, solve_plan, PlanConstraints};
use phasesync::plant::{expected_counts, BeatDemod};
use phasesync::{TimeSeries, Unit};

fn field(frequency: f64, phase: f64) -> OpticalFieldSpec {
    OpticalFieldSpec::new("u", frequency).unwrap().with_phase(phase)
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

proptest! {
    #[test]
    fn heterodyne_is_periodic_and_bounded(
        f1 in 1.0e14..3.0e14f64,
        df in 1.0e3..1.0e9f64,
        th1 in -10.0..10.0f64,
        th2 in -10.0..10.0f64,
        d1 in 0.0..100.0f64,
        d2 in 0.0..100.0f64,
        t in 0.0..1.0e-3f64,
        i0 in 0.1..10.0f64,
    ) {
        let u1 = field(f1, th1).with_intensity(i0).unwrap();
        let u2 = field(f1 + df, th2).with_intensity(i0).unwrap();
        let a = heterodyne_intensity(&u1, &u2, d1, d2, 1.468, t).unwrap();
        let period = 1.0 / (u2.frequency - u1.frequency);
        let b = heterodyne_intensity(&u1, &u2, d1, d2, 1.468, t + period).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * 4.0 * i0, "{} vs {}", a, b);
        prop_assert!((-1e-12..=4.0 * i0 * (1.0 + 1e-12)).contains(&a));
    }

    #[test]
    fn fidelity_is_even(d in -20.0..20.0f64) {
        prop_assert_eq!(fidelity_from_phase_error(d), fidelity_from_phase_error(-d));
    }

    #[test]
    fn slip_error_is_linear_in_slips(m in -10_000i64..10_000, df in -1.0e9..1.0e9f64) {
        let f = 188_691.4e9;
        let one = phase_slip_error(1, f + df, f).unwrap();
        let many = phase_slip_error(m, f + df, f).unwrap();
        prop_assert!((many - m as f64 * one).abs() <= 1e-12 * many.abs().max(1e-300));
    }

    #[test]
    fn length_error_is_linear_in_length(dl in -1.0..1.0f64, k in -100.0..100.0f64, w in 1.0e6..1.0e10f64) {
        let a = length_variation_error(dl, w, 1.468);
        let b = length_variation_error(k * dl, w, 1.468);
        prop_assert!((b - k * a).abs() <= 1e-12 * b.abs().max(1e-300));
    }

    #[test]
    fn phase_adds_over_concatenated_paths(
        l1 in prop::collection::vec(0.0..1000.0f64, 1..5),
        l2 in prop::collection::vec(0.0..1000.0f64, 1..5),
        f in 1.0e14..3.0e14f64,
    ) {
        let p1: Vec<PathSegment> = l1.iter().map(|&l| PathSegment::fiber(PathId::D5, l).unwrap()).collect();
        let p2: Vec<PathSegment> = l2.iter().map(|&l| PathSegment::free_space(PathId::D1, l).unwrap()).collect();
        let both: Vec<PathSegment> = p1.iter().chain(&p2).cloned().collect();
        let u = field(f, 0.0);
        let joined = accumulated_phase(&u, &both, 0.0);
        let split = accumulated_phase(&u, &p1, 0.0) + accumulated_phase(&u, &p2, 0.0);
        prop_assert!((joined - split).abs() <= 1e-12 * joined.abs());
    }

    #[test]
    fn sigma_inverts_gaussian_contrast(sigma in 0.01..3.0f64) {
        let back = sigma_from_contrast((-sigma * sigma / 2.0).exp()).unwrap();
        prop_assert!((back / sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fringe_contrast_ignores_rate_scale(
        c in 0.05..0.99f64,
        phi0 in -3.0..3.0f64,
        kappa in 0.5..2.0f64,
        scale in 1.0e-3..1.0e3f64,
    ) {
        let mus: Vec<f64> = (0..8).map(|k| k as f64 * TAU / 8.0).collect();
        let r1: Vec<f64> = mus.iter().map(|m| 1e4 * kappa * (1.0 + c * (m + phi0).cos())).collect();
        let r2: Vec<f64> = mus.iter().map(|m| 1e4 * (1.0 - c * (m + phi0).cos())).collect();
        let s1: Vec<f64> = r1.iter().map(|r| r * scale).collect();
        let s2: Vec<f64> = r2.iter().map(|r| r * scale).collect();
        let a = fit_fringe(&mus, &r1, &r2).unwrap();
        let b = fit_fringe(&mus, &s1, &s2).unwrap();
        prop_assert!((a.contrast - b.contrast).abs() < 1e-9);
        prop_assert!((a.contrast - c).abs() < 1e-6);
    }

    #[test]
    fn solved_plans_cancel_exactly(
        g in 0i64..10_000,
        fast in 1_000_000i64..1_000_000_000,
        loc in 1_000_000i64..1_000_000_000,
    ) {
        let s = solve_plan(&PlanConstraints::new(g, fast, loc)).unwrap();
        prop_assert_eq!(check_plan(&s.plan).unwrap(), 0);
        prop_assert_eq!(s.plan.omega_glob(), g);
    }

    #[test]
    fn star_pairs_cancel_exactly(n in 2usize..9, g in 1i64..100) {
        let base = solve_plan(&PlanConstraints::new(g, 215_000_000, 400_000_000)).unwrap().plan;
        if let Ok(star) = extend_star(&base, n, 100_000) {
            prop_assert_eq!(star.pairs.len(), n * (n - 1) / 2);
            for p in &star.pairs {
                prop_assert_eq!(check_plan(&p.plan).unwrap(), 0);
            }
        }
    }

    #[test]
    fn anti_windup_holds_the_integral_at_the_limit(
        gain in 0.1..100.0f64,
        corner in 1.0..1.0e3f64,
        limit in 1.0..1.0e3f64,
        err in prop::collection::vec(-50.0..50.0f64, 1..400),
    ) {
        let spec = ControllerSpec::pi(gain, corner).with_limits(-limit, limit);
        let mut c = Controller::new(spec).unwrap();
        for e in err {
            let u = c.step(e, 1e-3);
            prop_assert!(u.abs() <= limit);
            let integral_command = gain * TAU * corner * c.integral();
            prop_assert!(integral_command.abs() <= limit * (1.0 + 1e-12), "{}", integral_command);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cumulative_spectra_are_monotone(seed in any::<u64>()) {
        let ts = gen_mechanical_noise(&[Resonance::new(300.0, 10.0, 0.2)], 1e-4, 4096, seed).unwrap();
        let psd = welch_psd_default(&ts).unwrap();
        let up = cumulative_csd(&psd, Direction::FromLow).values;
        let down = cumulative_csd(&psd, Direction::FromHigh).values;
        prop_assert!(up.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(down.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!((up[up.len() - 1] - down[0]).abs() <= 1e-12 * down[0]);
    }

    #[test]
    fn generators_are_pure(seed in any::<u64>(), linewidth in 0.0..1.0e4f64) {
        let a = gen_laser_phase_noise(linewidth, 1e-6, 512, seed).unwrap();
        let b = gen_laser_phase_noise(linewidth, 1e-6, 512, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mixer_is_linear_for_small_offsets(phi in -0.3..0.3f64) {
        let (f, dt) = (1.0e4, 1.0e-6);
        let clock = ClockSpec::new("c", f, 0.0).unwrap();
        let beat = |p: f64| {
            let x = (0..20_000).map(|k| (TAU * f * k as f64 * dt + p).cos()).collect();
            TimeSeries::new(dt, x, Unit::Arb).unwrap()
        };
        let read = |p| *mixer_demodulate(&beat(p), &clock, 500.0, 0.1).unwrap().phase.samples().last().unwrap();
        let r = read(phi) - read(0.0);
        prop_assert!((r.abs() - phi.abs()).abs() <= 0.02 * phi.abs() + 1e-6, "{} for {}", r, phi);
    }

    #[test]
    fn pfd_is_linear_for_small_offsets(phi in -0.3..0.3f64) {
        let (f, dt) = (1.0e4, 1.0e-7);
        let clock = ClockSpec::new("c", f, 0.0).unwrap();
        let beat = |p: f64| {
            let x = (0..20_000).map(|k| (TAU * f * k as f64 * dt + p).cos()).collect();
            TimeSeries::new(dt, x, Unit::Arb).unwrap()
        };
        let read = |p| *pfd_demodulate(&beat(p), &clock, 0.1).unwrap().phase.samples().last().unwrap();
        let r = read(phi) - read(0.0);
        prop_assert!((r.abs() - phi.abs()).abs() <= 0.02 * phi.abs() + 1e-6, "{} for {}", r, phi);
    }

    #[test]
    fn count_demodulator_is_linear_for_small_offsets(phi in -0.3..0.3f64) {
        let (beat, bin) = (1500.0, 1e-4);
        let clock = ClockSpec::new("g", beat, 0.0).unwrap();
        let read = |p| {
            let mut d = BeatDemod::new(&clock, 300.0, bin).unwrap();
            let mut out = 0.0;
            for k in 0..2000 {
                let (c1, c2) = expected_counts(1e5, 0.9, beat, p, k as f64 * bin, bin);
                out = d.step(c1, c2).0;
            }
            out
        };
        let r = read(phi) - read(0.0);
        prop_assert!((r.abs() - phi.abs()).abs() <= 0.02 * phi.abs() + 1e-6, "{} for {}", r, phi);
    }
}

#[test]
fn generators_with_different_seeds_are_independent() {
    let kinds = [
        NoiseKind::White {
            std: 1.0,
            bandwidth: None,
        },
        NoiseKind::MechanicalResonance {
            resonances: vec![Resonance::new(2e3, 5.0, 1.0)],
        },
        NoiseKind::ShotCounts { mean_rate: 1e6 },
    ];
    for kind in kinds {
        let a = NoiseProcess::new(kind.clone(), 1).generate(1e-5, 100_000).unwrap();
        let b = NoiseProcess::new(kind.clone(), 2).generate(1e-5, 100_000).unwrap();
        let rho = correlation(a.samples(), b.samples());
        assert!(rho.abs() < 0.05, "{}: rho {rho}", kind.name());
    }
}
