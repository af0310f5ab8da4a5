//! Runs the `phasesync` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use phasesync::io::read_table;

fn phasesync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phasesync"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = phasesync(args);
    assert!(
        out.status.success(),
        "{args:?} exited with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn value(report: &str, key: &str) -> String {
    let prefix = format!("{key} = ");
    report
        .lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no `{key}` in report:\n{report}"))
        .to_string()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_reports_every_loop() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let report = run_ok(&["simulate", "--duration", "0.1", "--out", out]);
    for id in ["local-a", "local-b", "fast-a", "fast-b", "global"] {
        let rms: f64 = value(&report, id).parse().unwrap();
        assert!(rms > 0.0 && rms < 90.0, "{id}: {rms}");
    }
    assert!(report.contains("[fidelity histogram of F(eta_total)]"));
    for file in ["timeseries.txt", "psd.txt", "report.txt"] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    let series = read_table(&dir.path().join("timeseries.txt")).unwrap();
    assert!(series.column("eta_total").is_some());
    assert!(series.column("slip_count_a").is_some());
    assert!(series.seed.is_some() && series.dt.is_some());
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = phasesync(&["simulate", "--config", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario.toml"));
}

#[test]
fn unknown_verb_or_loop_is_a_usage_error() {
    assert_eq!(phasesync(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = phasesync(&["identify", "--loop", "middle", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seeds_reproduce_and_differ() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (d, seed) in dirs.iter().zip(["7", "7", "8"]) {
        run_ok(&[
            "simulate",
            "--duration",
            "0.05",
            "--seed",
            seed,
            "--format",
            "binary",
            "--out",
            d.path().to_str().unwrap(),
        ]);
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    for f in ["timeseries.bin", "psd.bin", "report.txt"] {
        assert_eq!(read(&dirs[0], f), read(&dirs[1], f), "{f} differs between identical runs");
    }
    assert_ne!(read(&dirs[0], "timeseries.bin"), read(&dirs[2], "timeseries.bin"));
    let t = read_table(&dirs[0].path().join("timeseries.bin")).unwrap();
    assert_eq!(t.seed, Some(7));
}

#[test]
fn identify_measures_the_local_loop() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_ok(&["identify", "--loop", "local-a", "--out", dir.path().to_str().unwrap()]);
    let bw: f64 = value(&report, "bandwidth_hz").parse().unwrap();
    assert!((bw / 3e3 - 1.0).abs() < 0.3, "{bw}");
    assert!(dir.path().join("identify_local-a_tf.txt").exists());
    assert!(dir.path().join("identify_local-a_series.txt").exists());
}

#[test]
fn identify_declines_the_global_loop() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_ok(&[
        "identify",
        "--loop",
        "global",
        "--duration",
        "0.5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(report.contains("declined"), "{report}");
    assert!(dir.path().join("global_residual_psd.txt").exists());
}

#[test]
fn noiseless_fringe_has_full_contrast() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[sim]\ndisable_noise = true\n");
    let report = run_ok(&[
        "fringe",
        "--config",
        &config,
        "--repeats",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let c: f64 = value(&report, "contrast").parse().unwrap();
    assert!((c - 1.0).abs() <= 0.01, "{c}");
}

#[test]
fn fringe_width_matches_the_residual_budget() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_ok(&["fringe", "--repeats", "3", "--out", dir.path().to_str().unwrap()]);
    let sigma: f64 = value(&report, "sigma_deg").parse().unwrap();
    assert!((30.0..=40.0).contains(&sigma), "{sigma}");
    assert!(dir.path().join("fringe_counts.txt").exists());
}

#[test]
fn plan_checks_and_solves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let report = run_ok(&["plan", "--out", out]);
    assert_eq!(value(&report, "omega_tot"), "0");
    assert_eq!(value(&report, "omega_glob"), "1500");

    let report = run_ok(&["plan", "--beat", "3000", "--out", out]);
    assert_eq!(value(&report, "omega_glob"), "3000");
    let solved = std::fs::read_to_string(dir.path().join("plan.toml")).unwrap();
    assert!(solved.contains("omega_fast_a = 215003000"), "{solved}");

    // A plan that leaves the photons beating is rejected.
    let config = write_config(
        dir.path(),
        "[plan]\nomega_loc_a = 399999250\nomega_loc_b = 400000750\nomega_fast_a = 215001501\nomega_fast_b = 215000000\n",
    );
    let out = phasesync(&["plan", "--config", &config, "--out", out]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(phasesync(&["plan", "--beat", "20000000"]).status.code(), Some(1));
}

#[test]
fn analyze_reads_a_written_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["simulate", "--duration", "0.1", "--out", out]);
    let input = dir.path().join("timeseries.txt");
    let report = run_ok(&[
        "analyze",
        "--input",
        input.to_str().unwrap(),
        "--column",
        "eta_total",
        "--band",
        "10",
        "1000",
        "--out",
        out,
    ]);
    assert!(report.contains("eta_total"), "{report}");
    let spectra = read_table(&dir.path().join("timeseries_spectra.txt")).unwrap();
    assert!(spectra.column("frequency").is_some());
}
