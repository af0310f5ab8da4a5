//! Batch front end: simulate, identify, fringe, plan and analyze.
//!
//! Exit status is 0 on success, 1 on any usage, configuration or validation
//! error, and 2 when a run records more unlock events than the scenario
//! tolerates. Outputs are still written in the last case.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use phasesync::dsp::{cumulative_csd, estimate_tf, welch_psd_default, Direction};
use phasesync::io::{extension, read_table, write_table, Column, Table};
use phasesync::plant::{
    build_system, default_injection, global_residuals, run_fringe, run_identification, simulate, LoopId,
    SystemModel,
};
use phasesync::planner::{check_plan, solve_plan, FrequencyPlan, PlanConstraints};
use phasesync::scenario::{DataFormat, ScenarioConfig};
use phasesync::{Error, TimeSeries, Unit};

use report::Report;

#[derive(Parser, Debug)]
#[command(name = "phasesync", version, about = "Simulate and analyse cascaded optical phase-synchronization loops")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario file; the bundled reference scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the simulated duration, s.
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data file format.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Format {
    Text,
    Binary,
}

impl From<Format> for DataFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => DataFormat::Text,
            Format::Binary => DataFormat::Binary,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full system and report per-loop residuals, slips and fidelity.
    Simulate(Common),
    /// Identify one loop by broadband injection with feedback on and off.
    Identify {
        #[command(flatten)]
        common: Common,
        /// local-a, local-b, fast-a, fast-b or global.
        #[arg(long = "loop")]
        loop_id: String,
        /// Samples per run; the scenario's value when omitted.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Sweep the global setpoint over one turn and fit the fringe.
    Fringe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        setpoints: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Check the scenario's clock plan, or solve one for a global beat.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Global beat to solve for, Hz.
        #[arg(long)]
        beat: Option<i64>,
        /// Centre of the fast clocks, Hz.
        #[arg(long, default_value_t = 215_000_000)]
        fast_center: i64,
        /// Centre of the local clocks, Hz.
        #[arg(long, default_value_t = 400_000_000)]
        loc_center: i64,
    },
    /// Spectra and RMS of the columns of a recorded data file.
    Analyze {
        /// Data file written by this tool, text or binary.
        #[arg(long)]
        input: PathBuf,
        /// Columns to analyse; every column but the first when omitted.
        #[arg(long = "column")]
        columns: Vec<String>,
        /// Band for the band-limited RMS, Hz.
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        band: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

enum Failure {
    Validation(Error),
    Unlocked(usize, usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Validation(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(c) => cmd_simulate(&c),
        Command::Identify {
            common,
            loop_id,
            samples,
        } => cmd_identify(&common, &loop_id, samples),
        Command::Fringe {
            common,
            setpoints,
            repeats,
        } => cmd_fringe(&common, setpoints, repeats),
        Command::Plan {
            common,
            beat,
            fast_center,
            loc_center,
        } => cmd_plan(&common, beat, fast_center, loc_center),
        Command::Analyze {
            input,
            columns,
            band,
            out,
            format,
        } => cmd_analyze(&input, &columns, band.as_deref(), out.as_deref(), format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Unlocked(n, max)) => {
            eprintln!("error: {n} unlock events, more than the {max} tolerated");
            ExitCode::from(2)
        }
    }
}

/// Scenario with command-line overrides applied and validated.
fn load(c: &Common) -> Result<ScenarioConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::reference(),
    };
    if let Some(s) = c.seed {
        cfg.sim.master_seed = s;
    }
    if let Some(d) = c.duration {
        cfg.sim.duration = d;
    }
    if let Some(o) = &c.out {
        cfg.outputs.directory = o.to_string_lossy().into_owned();
    }
    if let Some(f) = c.format {
        cfg.outputs.format = f.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Sink {
    dir: PathBuf,
    format: DataFormat,
}

impl Sink {
    fn new(dir: impl Into<PathBuf>, format: DataFormat) -> Result<Self, Error> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { dir, format })
    }

    fn from_config(cfg: &ScenarioConfig) -> Result<Self, Error> {
        Self::new(&cfg.outputs.directory, cfg.outputs.format)
    }

    fn table(&self, stem: &str, t: &Table) -> Result<PathBuf, Error> {
        let path = self.dir.join(format!("{stem}.{}", extension(self.format)));
        write_table(&path, t, self.format)?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    fn report(&self, stem: &str, r: &Report) -> Result<(), Error> {
        let path = self.dir.join(format!("{stem}.txt"));
        std::fs::write(&path, r.render()).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        print!("{}", r.render());
        Ok(())
    }
}

/// One-sided densities of several series on a shared frequency grid.
fn psd_table(kind: &str, series: &[(&str, &TimeSeries)]) -> Result<Table, Error> {
    let mut t = Table::new(kind);
    for (i, (name, s)) in series.iter().enumerate() {
        let p = welch_psd_default(s)?;
        if i == 0 {
            t.push(Column::new("frequency", Unit::Hz, p.frequencies.clone()))?;
        }
        t.push(Column::new(*name, Unit::RadSquaredPerHz, p.density))?;
    }
    Ok(t)
}

fn check_unlocks(n: usize, system: &SystemModel) -> Outcome {
    if n > system.max_unlock_events {
        Err(Failure::Unlocked(n, system.max_unlock_events))
    } else {
        Ok(())
    }
}

fn cmd_simulate(c: &Common) -> Outcome {
    let cfg = load(c)?;
    let system = build_system(&cfg)?;
    let sink = Sink::from_config(&cfg)?;
    log::info!("simulating {} s with seed {}", cfg.sim.duration, system.master_seed);
    let out = simulate(&system, cfg.sim.duration)?;

    let mut series = Table::from_series("simulate", &out.columns())?.with_seed(out.seed);
    for (x, name) in ["slip_count_a", "slip_count_b"].into_iter().enumerate() {
        series.push(Column::new(name, Unit::Arb, out.slip_count[x].iter().map(|&v| v as f64).collect()))?;
    }
    sink.table("timeseries", &series)?;

    let residuals = [
        ("eta_local_a", &out.eta_local[0]),
        ("eta_local_b", &out.eta_local[1]),
        ("eta_fast_a", &out.eta_fast[0]),
        ("eta_fast_b", &out.eta_fast[1]),
        ("eta_global", &out.eta_global),
        ("eta_total", &out.eta_total),
    ];
    sink.table("psd", &psd_table("psd", &residuals)?.with_seed(out.seed))?;

    let mut r = Report::new("simulate");
    r.value("seed", out.seed);
    r.value("duration_s", cfg.sim.duration);
    r.section("loop residual RMS, deg");
    for id in LoopId::ALL {
        r.value(id.as_str(), format!("{:.3}", out.stats.get(id).std_dev().to_degrees()));
    }
    r.value("total", format!("{:.3}", out.stats.total.std_dev().to_degrees()));
    r.section("phase slips");
    for (x, arm) in ["a", "b"].iter().enumerate() {
        r.value(&format!("slip_count_{arm}"), out.slip_count[x].last().copied().unwrap_or(0));
    }
    r.section("unlocks");
    r.value("events", out.unlock_count());
    for u in &out.unlocks {
        r.line(format!("{} {:.6e} {:.6e}", u.loop_id, u.event.start, u.event.end));
    }
    r.section("fidelity histogram of F(eta_total)");
    r.histogram(&report::fidelities(out.eta_total.samples()), cfg.outputs.histogram_bins);
    sink.report("report", &r)?;
    check_unlocks(out.unlock_count(), &system)
}

fn cmd_identify(c: &Common, loop_id: &str, samples: Option<usize>) -> Outcome {
    let id: LoopId = loop_id.parse()?;
    let cfg = load(c)?;
    let system = build_system(&cfg)?;
    let sink = Sink::from_config(&cfg)?;
    let mut r = Report::new("identify");
    r.value("loop", id);
    r.value("seed", system.master_seed);

    if id == LoopId::Global {
        let reason = match default_injection(&system, id) {
            Err(Error::IdentificationDeclined(_, why)) => why,
            _ => unreachable!("the global loop is never identified by injection"),
        };
        r.value("identification", "declined");
        r.value("reason", &reason);
        let (on, off) = global_residuals(&system, cfg.sim.duration)?;
        let t = psd_table("residual-psd", &[("closed", &on), ("open", &off)])?.with_seed(system.master_seed);
        sink.table("global_residual_psd", &t)?;
        r.section("residual RMS, deg");
        r.value("closed", format!("{:.3}", on.std_dev().to_degrees()));
        r.value("open", format!("{:.3}", off.std_dev().to_degrees()));
        sink.report("identify_global", &r)?;
        return Ok(());
    }

    let injection = default_injection(&system, id)?;
    let n = samples.unwrap_or(system.identification.samples);
    let ident = run_identification(&system, id, &injection, n)?;
    let series = Table::from_series(
        "identify",
        &[
            ("injected", &ident.injected),
            ("measured_on", &ident.measured_on),
            ("measured_off", &ident.measured_off),
        ],
    )?
    .with_seed(system.master_seed)
    .with_meta("loop", id);
    sink.table(&format!("identify_{id}_series"), &series)?;

    let est = estimate_tf(&ident.injected, &ident.measured_on, &ident.measured_off)?;
    let f = est.open_loop.frequencies.clone();
    let model_l: Vec<f64> = f.iter().map(|&f| ident.model.open_loop(f).norm()).collect();
    let model_s: Vec<f64> = f.iter().map(|&f| ident.model.sensitivity(f).norm()).collect();
    let mut tf = Table::new("transfer-function").with_seed(system.master_seed).with_meta("loop", id);
    tf.push(Column::new("frequency", Unit::Hz, f))?;
    tf.push(Column::new("open_loop_mag", Unit::Arb, est.open_loop.magnitude()))?;
    tf.push(Column::new(
        "open_loop_phase",
        Unit::Rad,
        est.open_loop.response.iter().map(|h| h.arg()).collect(),
    ))?;
    tf.push(Column::new("suppression_mag", Unit::Arb, est.sensitivity.magnitude()))?;
    tf.push(Column::new("coherence", Unit::Arb, est.sensitivity.coherence.clone()))?;
    tf.push(Column::new("model_open_loop_mag", Unit::Arb, model_l))?;
    tf.push(Column::new("model_suppression_mag", Unit::Arb, model_s))?;
    sink.table(&format!("identify_{id}_tf"), &tf)?;

    let fmt_bw = |b: Option<f64>| b.map_or_else(|| "none".to_string(), |b| format!("{b:.1}"));
    r.value("samples", n);
    r.value("bandwidth_hz", fmt_bw(est.suppression_bandwidth()));
    r.value("model_bandwidth_hz", fmt_bw(ident.model.suppression_bandwidth()));
    let (gm, pm) = ident.model.margins();
    r.value("model_gain_margin", format!("{gm:.3}"));
    r.value("model_phase_margin_deg", format!("{:.2}", pm.to_degrees()));
    r.value("unlocks_feedback_off", ident.unlocks_off.len());
    sink.report(&format!("identify_{id}"), &r)?;
    Ok(())
}

fn cmd_fringe(c: &Common, setpoints: Option<usize>, repeats: Option<usize>) -> Outcome {
    let cfg = load(c)?;
    let system = build_system(&cfg)?;
    let sink = Sink::from_config(&cfg)?;
    let n = setpoints.unwrap_or(system.fringe.setpoints);
    let reps = repeats.unwrap_or(system.fringe.repeats);
    let f = run_fringe(&system, n, reps)?;

    let mut counts = Table::new("fringe").with_seed(system.master_seed);
    let rows = f.sweeps.iter().flat_map(|s| s.setpoints.iter().enumerate().map(move |(i, &mu)| (s, i, mu)));
    let (mut sweep, mut mu, mut c1, mut c2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, (s, i, m)) in rows.enumerate() {
        sweep.push((k / n) as f64);
        mu.push(m);
        c1.push(s.counts[0][i]);
        c2.push(s.counts[1][i]);
    }
    counts.push(Column::new("sweep", Unit::Arb, sweep))?;
    counts.push(Column::new("setpoint", Unit::Rad, mu))?;
    counts.push(Column::new("counts_1", Unit::Counts, c1))?;
    counts.push(Column::new("counts_2", Unit::Counts, c2))?;
    sink.table("fringe_counts", &counts)?;

    let offsets = phasesync::plant::unwrapped_offsets(&f.sweeps);
    let mut per = Table::new("fringe-sweeps").with_seed(system.master_seed);
    per.push(Column::new("start", Unit::Seconds, f.sweeps.iter().map(|s| s.start).collect()))?;
    per.push(Column::new("contrast", Unit::Arb, f.sweeps.iter().map(|s| s.fit.contrast).collect()))?;
    per.push(Column::new("phase_offset", Unit::Rad, offsets))?;
    per.push(Column::new(
        "theta_err_difference",
        Unit::Rad,
        f.sweeps.iter().map(|s| s.theta_err_difference).collect(),
    ))?;
    sink.table("fringe_sweeps", &per)?;

    let mut r = Report::new("fringe");
    r.value("seed", system.master_seed);
    r.value("setpoints", n);
    r.value("repeats", reps);
    r.value("contrast", format!("{:.4}", f.combined.contrast));
    r.value("phase_offset_deg", format!("{:.3}", f.combined.phase_offset.to_degrees()));
    r.value("sigma_deg", format!("{:.3}", f.sigma.to_degrees()));
    r.value("setpoint_spread_deg", format!("{:.3}", f.setpoint_spread.to_degrees()));
    r.value("unlocks", f.unlocks.len());
    for u in &f.unlocks {
        r.line(format!("{} {:.6e} {:.6e}", u.loop_id, u.event.start, u.event.end));
    }
    sink.report("fringe", &r)?;
    check_unlocks(f.unlocks.len(), &system)
}

fn cmd_plan(c: &Common, beat: Option<i64>, fast_center: i64, loc_center: i64) -> Outcome {
    let cfg = load(c)?;
    let sink = Sink::from_config(&cfg)?;
    let mut r = Report::new("plan");
    let plan: FrequencyPlan = match beat {
        Some(g) => {
            let s = solve_plan(&PlanConstraints::new(g, fast_center, loc_center))?;
            for w in &s.warnings {
                r.value("warning", w);
            }
            s.plan
        }
        None => cfg.plan,
    };
    let residual = check_plan(&plan)?;
    r.value("omega_loc_a", plan.omega_loc_a);
    r.value("omega_loc_b", plan.omega_loc_b);
    r.value("omega_fast_a", plan.omega_fast_a);
    r.value("omega_fast_b", plan.omega_fast_b);
    r.value("omega_glob", plan.omega_glob());
    r.value("omega_tot", residual);
    let path = sink.dir.join("plan.toml");
    std::fs::write(&path, plan_toml(&plan)).map_err(|source| Error::Io { path, source })?;
    sink.report("plan", &r)?;
    if residual != 0 {
        return Err(Failure::Validation(Error::Infeasible(format!(
            "the single photons differ by {residual} Hz"
        ))));
    }
    Ok(())
}

fn plan_toml(plan: &FrequencyPlan) -> String {
    format!(
        "[plan]\nomega_loc_a = {}\nomega_loc_b = {}\nomega_fast_a = {}\nomega_fast_b = {}\n",
        plan.omega_loc_a, plan.omega_loc_b, plan.omega_fast_a, plan.omega_fast_b
    )
}

fn cmd_analyze(input: &Path, columns: &[String], band: Option<&[f64]>, out: Option<&Path>, format: Option<Format>) -> Outcome {
    let t = read_table(input)?;
    let names: Vec<String> = if columns.is_empty() {
        t.columns.iter().skip(1).map(|c| c.name.clone()).collect()
    } else {
        columns.to_vec()
    };
    if names.is_empty() {
        return Err(Failure::Validation(Error::Format("no columns to analyse".into())));
    }
    let series = names.iter().map(|n| t.series(n)).collect::<Result<Vec<_>, _>>()?;
    let dir = out.map_or_else(|| input.parent().unwrap_or(Path::new(".")).to_path_buf(), Path::to_path_buf);
    let fmt = format.map_or(DataFormat::Text, Into::into);
    let sink = Sink::new(dir, fmt)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("input");

    let mut r = Report::new("analyze");
    r.value("input", input.display());
    let mut spectra = Table::new("analyze");
    spectra.seed = t.seed;
    for (i, (name, s)) in names.iter().zip(&series).enumerate() {
        let p = welch_psd_default(s)?;
        let cum = cumulative_csd(&p, Direction::FromLow);
        if i == 0 {
            spectra.push(Column::new("frequency", Unit::Hz, p.frequencies.clone()))?;
        }
        let density_unit = if s.unit() == Unit::Rad { Unit::RadSquaredPerHz } else { Unit::Arb };
        spectra.push(Column::new(format!("psd_{name}"), density_unit, p.density.clone()))?;
        spectra.push(Column::new(format!("cumulative_{name}"), s.unit(), cum.values))?;
        r.section(name);
        r.value("rms", format!("{:e}", s.std_dev()));
        r.value("psd_rms", format!("{:e}", p.total_rms()));
        if let Some([lo, hi]) = band.map(|b| [b[0], b[1]]) {
            r.value(&format!("band_rms_{lo}_{hi}_hz"), format!("{:e}", p.band_rms(lo, hi)));
        }
        r.value("peak_frequency_hz", format!("{:e}", p.peak_frequency()));
    }
    sink.table(&format!("{stem}_spectra"), &spectra)?;
    sink.report(&format!("{stem}_analysis"), &r)?;
    Ok(())
}
