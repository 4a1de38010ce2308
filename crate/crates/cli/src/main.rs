//! `cryolna` command-line front end.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cryolna::metrics::{extract_p1db, P1dbOptions, PowerSweep};
use cryolna::network::{
    read_touchstone, read_trace_csv, write_touchstone, DataFormat, FrequencyGrid, ScalarTrace, Unit,
};
use cryolna::noise::{build_loss_tables_split, extract_dut_noise, hot_temperature, ChainModel, EnrTable};
use cryolna::protocol::{
    load_record, operating_point, render_report, run_phase1, run_phase2, save_record, simulate, ReportFormat,
    RunRecord, SpecLimits, Verdict,
};
use cryolna::simlab::Scenario;
use cryolna::thermal::{fit_lumped_temperature, CableThermalSpec, Reference, ThermalProfile};
use cryolna::trl::{deembed, solve_trl, verify_cal, TrlStandardsMeasurement, DEFAULT_VERIFY_TOLERANCE_DB};
use cryolna::uncertainty::{
    monte_carlo_tdut_with, propagate_tdut_with, OperatingPoint, PropagationOptions, UncertaintyBudget, MIN_MC_SAMPLES,
};
use cryolna::Execution;
use serde::Deserialize;
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cryolna", version, about = "Cryogenic LNA characterization toolkit")]
struct Cli {
    /// JSON configuration for the selected command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the scenario or Monte Carlo run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Markdown,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Markdown => ReportFormat::Markdown,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve TRL error boxes from raw standard measurements.
    Calibrate {
        #[arg(long)]
        thru: PathBuf,
        #[arg(long)]
        line: PathBuf,
        /// Two-port file whose S11/S22 hold the REFLECT measurements.
        #[arg(long)]
        reflect: PathBuf,
        /// Independent THRU re-measurement for verification.
        #[arg(long)]
        verify: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_VERIFY_TOLERANCE_DB)]
        tolerance_db: f64,
    },
    /// Remove the error boxes from a raw DUT measurement.
    Deembed {
        #[arg(long)]
        error_model: PathBuf,
        #[arg(long)]
        raw: PathBuf,
    },
    /// Y-factor noise temperature from hot/cold power-density traces.
    Noise(NoiseArgs),
    /// Extract P1dB from a power sweep CSV.
    P1db {
        #[arg(long)]
        sweep: PathBuf,
    },
    /// Cable temperature profile, effective noise temperature and lumped fit.
    Thermal {
        #[arg(long, default_value_t = 2.0)]
        start_ghz: f64,
        #[arg(long, default_value_t = 10.0)]
        stop_ghz: f64,
        #[arg(long, default_value_t = 161)]
        points: usize,
    },
    /// Propagate the uncertainty budget to T_DUT.
    Uncertainty {
        /// Monte Carlo sample count (0 disables).
        #[arg(long, default_value_t = MIN_MC_SAMPLES)]
        mc: usize,
    },
    /// Run a scenario on the simulated testbed.
    Simulate(ScenarioArgs),
    /// Qualify the test setup with the control amplifier.
    Phase1 {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Error added to the before-DUT loss table, dB.
        #[arg(long)]
        loss_offset_db: Option<f64>,
    },
    /// Evaluate a device against specification limits.
    Phase2 {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Passing Phase-1 record of the same setup.
        #[arg(long)]
        phase1: Option<PathBuf>,
        /// Specification limits JSON; defaults to the scenario's limits.
        #[arg(long)]
        limits: Option<PathBuf>,
    },
    /// Render a stored run record.
    Report {
        #[arg(long)]
        record: PathBuf,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Built-in scenario used when --config is absent.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct NoiseArgs {
    /// Hot-state receiver power density, dBm/Hz.
    #[arg(long)]
    hot: PathBuf,
    #[arg(long)]
    cold: PathBuf,
    /// System THRU insertion loss, dB.
    #[arg(long)]
    thru_loss: PathBuf,
    /// ENR table (`freq_hz,enr_db`); overrides --enr-db.
    #[arg(long)]
    enr: Option<PathBuf>,
    #[arg(long, default_value_t = 15.0)]
    enr_db: f64,
    #[arg(long, default_value_t = 296.0)]
    t_off: f64,
    #[arg(long, default_value_t = 30.0)]
    attenuator_db: f64,
    /// Physical temperature of the cold attenuator and lumped losses, K.
    #[arg(long, default_value_t = 3.2)]
    t_loss: f64,
    #[arg(long, default_value_t = 300.0)]
    t_receiver: f64,
    /// Fraction of the THRU loss placed before the DUT.
    #[arg(long, default_value_t = 0.5)]
    split: f64,
    /// Receiver gain removed from the power traces, dB.
    #[arg(long, default_value_t = 0.0)]
    receiver_gain_db: f64,
}

/// What a command produced: a JSON summary, traces for CSV output and an
/// optional verdict.
struct Outcome {
    name: &'static str,
    summary: Value,
    traces: Vec<(String, ScalarTrace)>,
    verdict: Option<Verdict>,
}

impl Outcome {
    fn new(name: &'static str, summary: Value) -> Self {
        Outcome { name, summary, traces: Vec::new(), verdict: None }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Some(v)) if !v.passed() => ExitCode::from(1),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<Option<Verdict>> {
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let outcome = match &cli.command {
        Command::Calibrate { thru, line, reflect, verify, tolerance_db } => {
            calibrate(cli, thru, line, reflect, verify.as_deref(), *tolerance_db)?
        }
        Command::Deembed { error_model, raw } => deembed_cmd(cli, error_model, raw)?,
        Command::Noise(a) => noise(a)?,
        Command::P1db { sweep } => p1db(cli, sweep)?,
        Command::Thermal { start_ghz, stop_ghz, points } => thermal(cli, *start_ghz, *stop_ghz, *points)?,
        Command::Uncertainty { mc } => uncertainty(cli, *mc)?,
        Command::Simulate(s) => {
            let sc = load_scenario(cli, s, "lna_c")?;
            let rec = simulate(&sc)?;
            let mut o = Outcome::new("simulation", serde_json::from_str(&rec.canonical_json()?)?);
            o.traces = rec.measurements.traces.iter().map(|t| (t.name.clone(), t.trace.clone())).collect();
            o
        }
        Command::Phase1 { scenario, loss_offset_db } => {
            let mut sc = load_scenario(cli, scenario, "lna_c")?;
            if let Some(d) = loss_offset_db {
                sc.run.loss_table_offset_db = *d;
            }
            return finish_run(cli, &run_phase1(&sc)?);
        }
        Command::Phase2 { scenario, phase1, limits } => {
            let sc = load_scenario(cli, scenario, "lna_t")?;
            let limits: SpecLimits = match limits {
                Some(p) => read_json(p)?,
                None => sc.limits.clone().ok_or_else(|| anyhow!("scenario has no limits; pass --limits"))?,
            };
            let p1 = phase1.as_deref().map(load_record).transpose()?;
            return finish_run(cli, &run_phase2(&sc, &limits, p1.as_ref())?);
        }
        Command::Report { record } => {
            let rec = load_record(record)?;
            for p in render_report(&rec, cli.format.into(), &cli.out)? {
                println!("{}", p.display());
            }
            return Ok(Some(rec.verdict));
        }
    };
    emit(cli, &outcome)?;
    Ok(outcome.verdict)
}

fn finish_run(cli: &Cli, rec: &RunRecord) -> Result<Option<Verdict>> {
    let saved = save_record(rec, &cli.out)?;
    let files = render_report(rec, cli.format.into(), &cli.out)?;
    println!("run {} phase {}: {}", rec.run_id, rec.phase, rec.verdict);
    if !rec.causes.is_empty() {
        println!("causes: {}", rec.causes.join(", "));
    }
    println!("record {}", saved.display());
    for p in files {
        println!("report {}", p.display());
    }
    Ok(Some(rec.verdict))
}

fn emit(cli: &Cli, o: &Outcome) -> Result<()> {
    match cli.format {
        Format::Json => {
            let text = serde_json::to_string_pretty(&o.summary)?;
            fs::write(cli.out.join(format!("{}.json", o.name)), &text)?;
            println!("{text}");
        }
        Format::Markdown => {
            let mut s = format!("# {}\n\n| Field | Value |\n|---|---|\n", o.name);
            if let Some(map) = o.summary.as_object() {
                for (k, v) in map {
                    if !v.is_object() && !v.is_array() {
                        s.push_str(&format!("| {k} | {v} |\n"));
                    }
                }
            }
            fs::write(cli.out.join(format!("{}.md", o.name)), &s)?;
            print!("{s}");
        }
        Format::Csv => {
            if o.traces.is_empty() {
                bail!("{} produces no traces for CSV output", o.name);
            }
            for (name, t) in &o.traces {
                let p = cli.out.join(format!("{name}.csv"));
                fs::write(&p, t.to_csv())?;
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_trace(path: &Path) -> Result<ScalarTrace> {
    read_trace_csv(path).with_context(|| format!("reading {}", path.display()))
}

fn load_scenario(cli: &Cli, args: &ScenarioArgs, fallback: &str) -> Result<Scenario> {
    let mut sc = match (&cli.config, &args.preset) {
        (Some(_), Some(_)) => bail!("--config and --preset are mutually exclusive"),
        (Some(p), None) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Scenario::from_json(&text)?
        }
        (None, p) => Scenario::preset(p.as_deref().unwrap_or(fallback))?,
    };
    if let Some(s) = cli.seed {
        sc.testbed.seed = s;
    }
    sc.validate()?;
    Ok(sc)
}

fn calibrate(cli: &Cli, thru: &Path, line: &Path, reflect: &Path, verify: Option<&Path>, tol: f64) -> Result<Outcome> {
    let m_thru = read_touchstone(thru)?;
    let meas = TrlStandardsMeasurement::with_reflect_network(
        m_thru.clone(),
        read_touchstone(line)?,
        &read_touchstone(reflect)?,
    )?;
    let em = solve_trl(&meas)?;
    let path = cli.out.join("error_model.json");
    fs::write(&path, em.to_json()?)?;
    let check = match verify {
        Some(p) => read_touchstone(p)?,
        None => m_thru,
    };
    let v = verify_cal(&em, &check, tol)?;
    let (in_loss, out_loss) = em.box_losses_db();
    let mut o = Outcome::new(
        "calibration",
        json!({
            "error_model": path,
            "verify_max_residual_db": v.max_abs_residual_db,
            "verify_tolerance_db": tol,
            "verify_pass": v.pass,
            "ill_conditioned_freqs_hz": em.ill_conditioned_freqs(),
        }),
    );
    o.traces = vec![
        ("verify_residual_db".into(), v.residual),
        ("input_box_loss_db".into(), in_loss),
        ("output_box_loss_db".into(), out_loss),
    ];
    o.verdict = Some(if v.pass { Verdict::Pass } else { Verdict::Fail });
    Ok(o)
}

fn deembed_cmd(cli: &Cli, em_path: &Path, raw: &Path) -> Result<Outcome> {
    let em = cryolna::trl::ErrorModel::from_json(&fs::read_to_string(em_path)?)?;
    let dut = deembed(&em, &read_touchstone(raw)?)?;
    let path = cli.out.join("deembedded.s2p");
    fs::write(&path, write_touchstone(&dut, DataFormat::Ri, 12))?;
    let db = |i, j| ScalarTrace::new(dut.grid().clone(), dut.param_db(i, j), Unit::Db);
    let mut o = Outcome::new("deembed", json!({ "file": path, "points": dut.len() }));
    o.traces = vec![
        ("s11_db".into(), db(1, 1)?),
        ("s21_db".into(), db(2, 1)?),
        ("s12_db".into(), db(1, 2)?),
        ("s22_db".into(), db(2, 2)?),
    ];
    Ok(o)
}

fn noise(a: &NoiseArgs) -> Result<Outcome> {
    let shift = |t: ScalarTrace| t.map(Unit::DbmPerHz, |p| p - a.receiver_gain_db);
    let hot = shift(read_trace(&a.hot)?);
    let cold = shift(read_trace(&a.cold)?);
    let grid = hot.grid.clone();
    let thru = read_trace(&a.thru_loss)?.resample(&grid)?;
    let enr = match &a.enr {
        Some(p) => EnrTable::from_csv(&fs::read_to_string(p)?, a.t_off)?,
        None => EnrTable::constant(grid.clone(), a.enr_db, a.t_off)?,
    };
    let t_hot = hot_temperature(&enr).resample(&grid)?;
    let t_cold = ScalarTrace::constant(grid.clone(), a.t_off, Unit::Kelvin);
    let att = ScalarTrace::constant(grid.clone(), a.attenuator_db, Unit::Db);
    let tables = build_loss_tables_split(&thru, &att, a.t_loss, a.split)?;
    let chain =
        ChainModel::from_loss_tables(&tables, &ScalarTrace::constant(grid.clone(), a.t_receiver, Unit::Kelvin))?;
    let x = extract_dut_noise(&hot, &cold, &t_hot, &t_cold, &chain)?;
    let t = &x.t_dut.t.values;
    let mut o = Outcome::new(
        "noise",
        json!({
            "points": grid.len(),
            "t_dut_min_k": t.iter().copied().fold(f64::INFINITY, f64::min),
            "t_dut_max_k": t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            "all_valid": x.t_dut.all_valid(),
        }),
    );
    o.traces = vec![("t_dut_k".into(), x.t_dut.t), ("gain_db".into(), x.gain_db), ("y".into(), x.y.y)];
    Ok(o)
}

fn p1db(cli: &Cli, sweep: &Path) -> Result<Outcome> {
    let s = PowerSweep::from_csv(&fs::read_to_string(sweep).with_context(|| format!("reading {}", sweep.display()))?)?;
    let opts: P1dbOptions = match &cli.config {
        Some(p) => read_json(p)?,
        None => P1dbOptions::default(),
    };
    let r = extract_p1db(&s, &opts)?;
    Ok(Outcome::new("p1db", serde_json::to_value(r)?))
}

fn thermal(cli: &Cli, start: f64, stop: f64, n: usize) -> Result<Outcome> {
    let spec: CableThermalSpec = match &cli.config {
        Some(p) => read_json(p)?,
        None => CableThermalSpec::default_input(),
    };
    let grid = FrequencyGrid::linspace(start * 1e9, stop * 1e9, n)?;
    let prof = ThermalProfile::build(&spec, &grid, Execution::default())?;
    let t_eff = prof.effective_temperature_trace(Reference::Input)?;
    let loss = prof.total_loss_trace();
    let fit = fit_lumped_temperature(&t_eff, &loss)?;
    let loss_db = loss.to_db(Unit::Db)?;
    let mut o = Outcome::new(
        "thermal",
        json!({
            "elements": prof.temperatures.len(),
            "t_cable_fit_k": fit,
            "loss_db_min": loss_db.values.iter().copied().fold(f64::INFINITY, f64::min),
            "loss_db_max": loss_db.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }),
    );
    o.traces = vec![("t_eff_k".into(), t_eff), ("loss_db".into(), loss_db)];
    Ok(o)
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct UncertaintyConfig {
    budget: UncertaintyBudget,
    operating_point: Option<OperatingPoint>,
    options: PropagationOptions,
}

fn uncertainty(cli: &Cli, mc: usize) -> Result<Outcome> {
    let cfg: UncertaintyConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => UncertaintyConfig::default(),
    };
    let op = match cfg.operating_point {
        Some(op) => op,
        None => {
            let sc = Scenario::preset("lna_c")?;
            let mut op = operating_point(&sc, 6e9)?;
            op.t_cable = 210.0;
            op
        }
    };
    let p = propagate_tdut_with(&cfg.budget, &op, &cfg.options)?;
    let mut summary = json!({
        "operating_point": op,
        "t_dut_k": p.t_dut_k,
        "sigma_k": p.sigma_k,
        "terms": p.terms,
    });
    if mc > 0 {
        let r = monte_carlo_tdut_with(&cfg.budget, &op, mc, cli.seed.unwrap_or(0), &cfg.options, Execution::default())?;
        summary["monte_carlo"] = serde_json::to_value(r)?;
    }
    Ok(Outcome::new("uncertainty", summary))
}
