//! Two-phase qualification runner.
//!
//! Phase 1 measures a control amplifier with known parameters and accepts
//! the test setup only if the results agree with the known values. Phase 2
//! measures a device under evaluation against specification limits and
//! refuses to run unless it is handed a passing Phase-1 record taken on the
//! same setup.

mod report;

pub use report::{load_record, render_report, save_record, ReportFormat};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{
    band_extrema, extract_p1db, gain_flatness, repeatability_ci, BandSpec, P1dbOptions, P1dbResult, PowerSweep,
    Relation,
};
use crate::network::{db_to_power, ScalarTrace, TwoPortNetwork, Unit};
use crate::noise::{enr_to_hot, extract_dut_noise, ChainModel, InputModel};
use crate::simlab::{sweep_points, Bias, DutModel, Port, Scenario, SourceState, SwitchState, Testbed};
use crate::thermal::{fit_lumped_temperature, Reference, ThermalProfile};
use crate::trl::{deembed_with, solve_trl_with, verify_cal, TrlStandardsMeasurement};
use crate::uncertainty::{
    monte_carlo_tdut_with, propagate_tdut_with, MonteCarloResult, OperatingPoint, Propagation, PropagationOptions,
    UncertaintyBudget,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

pub const RECORD_SCHEMA: u32 = 1;

/// Deviations at or below this are treated as exact agreement when a
/// tolerance is zero.
pub const EXACT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecLimits {
    pub band: BandSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_gain_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_gain_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_flatness_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_noise_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_op1db_dbm: Option<f64>,
    /// S11 and S22 must stay below this, dB.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub return_loss_db: Option<f64>,
    /// S12 must stay below this, dB.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isolation_db: Option<f64>,
    /// Band for the return-loss limit when it differs from `band`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub return_loss_band: Option<BandSpec>,
}

impl SpecLimits {
    pub fn new(band: BandSpec) -> Self {
        SpecLimits {
            band,
            min_gain_db: None,
            max_gain_db: None,
            max_flatness_db: None,
            max_noise_k: None,
            min_op1db_dbm: None,
            return_loss_db: None,
            isolation_db: None,
            return_loss_band: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        BandSpec::new(self.band.f_low_hz, self.band.f_high_hz)?;
        if let Some(b) = self.return_loss_band {
            BandSpec::new(b.f_low_hz, b.f_high_hz)?;
        }
        if self.entries().is_empty() {
            return Err(Error::invalid("spec limits define no limit"));
        }
        Ok(())
    }

    /// Present limits as `(name, value)`.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        [
            ("min_gain_db", self.min_gain_db),
            ("max_gain_db", self.max_gain_db),
            ("max_flatness_db", self.max_flatness_db),
            ("max_noise_k", self.max_noise_k),
            ("min_op1db_dbm", self.min_op1db_dbm),
            ("return_loss_db", self.return_loss_db),
            ("isolation_db", self.isolation_db),
        ]
        .into_iter()
        .filter_map(|(n, v)| v.map(|v| (n, v)))
        .collect()
    }
}

/// Phase-1 agreement tolerances between measured and known control values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlTolerances {
    pub gain_db: f64,
    pub flatness_db: f64,
    pub noise_k: f64,
    pub op1db_db: f64,
    pub reflection_db: f64,
    pub verify_db: f64,
}

impl Default for ControlTolerances {
    fn default() -> Self {
        ControlTolerances {
            gain_db: 0.1,
            flatness_db: 0.1,
            noise_k: 0.25,
            op1db_db: 0.2,
            reflection_db: 0.5,
            verify_db: crate::trl::DEFAULT_VERIFY_TOLERANCE_DB,
        }
    }
}

impl ControlTolerances {
    pub fn zero() -> Self {
        ControlTolerances {
            gain_db: 0.0,
            flatness_db: 0.0,
            noise_k: 0.0,
            op1db_db: 0.0,
            reflection_db: 0.0,
            verify_db: 0.0,
        }
    }
}

fn default_marginal() -> f64 {
    2.0
}
fn default_mc() -> usize {
    10_000
}
fn default_sweep() -> (f64, f64, f64) {
    (-80.0, -20.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// A failed limit is marginal when it misses by at most this multiple of
    /// the expanded (k = 2) uncertainty.
    #[serde(default = "default_marginal")]
    pub marginal_factor: f64,
    /// Error added to the before-DUT loss table, dB (fault injection).
    #[serde(default)]
    pub loss_table_offset_db: f64,
    #[serde(default)]
    pub budget: UncertaintyBudget,
    #[serde(default)]
    pub propagation: PropagationOptions,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    /// Start, stop and step of the VNA power sweep, dBm.
    #[serde(default = "default_sweep")]
    pub sweep_dbm: (f64, f64, f64),
    #[serde(default)]
    pub p1db: P1dbOptions,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for RunOptions {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    #[serde(rename = "FAIL->FAILURE_ANALYSIS")]
    FailureAnalysis,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::FailureAnalysis => "FAIL→FAILURE_ANALYSIS",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTrace {
    pub name: String,
    pub trace: ScalarTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub error_model_hash: String,
    pub verify_max_residual_db: f64,
    pub verify_tolerance_db: f64,
    pub pass: bool,
    pub ill_conditioned_freqs_hz: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub band: BandSpec,
    pub flatness_db: f64,
    pub peak_gain_db: f64,
    pub min_gain_db: f64,
    pub noise_min_k: f64,
    pub noise_max_k: f64,
    pub noise_mean_k: f64,
    /// Largest in-band repeatability (2σ) of the noise temperature.
    pub noise_repeatability_k: f64,
    pub noise_repeats: usize,
    pub s11_max_db: f64,
    pub s22_max_db: f64,
    pub s12_max_db: f64,
    /// Lumped temperature fitted to the input cable model.
    pub t_cable_fit_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    pub budget: UncertaintyBudget,
    /// Breakdown at the grid point nearest the band centre.
    pub center: Propagation,
    pub center_freq_hz: f64,
    pub monte_carlo: MonteCarloResult,
    /// In-band maximum of the one-sigma noise temperature uncertainty.
    pub max_sigma_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitOutcome {
    pub name: String,
    pub limit: f64,
    /// Worst in-band value.
    pub measured: f64,
    pub pass: bool,
    /// How far the measured value is past the limit (0 when passing).
    pub exceedance: f64,
    /// Expanded (k = 2) uncertainty of the measured value.
    pub expanded_uncertainty: f64,
    pub marginal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub name: String,
    /// Largest in-band |measured − known|.
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: u32,
    pub run_id: String,
    pub timestamp: String,
    pub phase: u8,
    pub scenario: String,
    pub config_hash: String,
    pub testbed_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase1_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Bias>,
    pub calibration: CalibrationSummary,
    pub metrics: RunMetrics,
    pub p1db: Vec<P1dbResult>,
    pub uncertainty: UncertaintySummary,
    pub reference_checks: Vec<ReferenceCheck>,
    pub limits: Vec<LimitOutcome>,
    pub verdict: Verdict,
    pub causes: Vec<String>,
    pub traces: Vec<NamedTrace>,
}

impl RunRecord {
    /// JSON with the timestamp removed and keys sorted.
    pub fn canonical_json(&self) -> Result<String> {
        canonical(self, &["timestamp"])
    }

    fn content_id(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(m) = v.as_object_mut() {
            m.remove("timestamp");
            m.remove("run_id");
        }
        Ok(short_hash(serde_json::to_string(&v)?.as_bytes()))
    }

    pub fn trace(&self, name: &str) -> Option<&ScalarTrace> {
        self.traces.iter().find(|t| t.name == name).map(|t| &t.trace)
    }
}

fn canonical<T: Serialize>(value: &T, drop: &[&str]) -> Result<String> {
    // serde_json's Map is ordered by key, so re-serialising a Value sorts it
    let mut v = serde_json::to_value(value)?;
    if let Some(m) = v.as_object_mut() {
        for k in drop {
            m.remove(*k);
        }
    }
    Ok(serde_json::to_string(&v)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn short_hash(bytes: &[u8]) -> String {
    sha256_hex(bytes)[..16].to_string()
}

pub fn scenario_hash(sc: &Scenario) -> Result<String> {
    Ok(sha256_hex(canonical(sc, &[])?.as_bytes()))
}

/// Identity of the test setup: the testbed without its seed.
pub fn testbed_hash(sc: &Scenario) -> Result<String> {
    let mut tb = sc.testbed.clone();
    tb.seed = 0;
    Ok(sha256_hex(canonical(&tb, &[])?.as_bytes()))
}

/// Everything measured and derived in one pass over the testbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    pub calibration: CalibrationSummary,
    pub metrics: RunMetrics,
    pub p1db: Vec<P1dbResult>,
    pub uncertainty: UncertaintySummary,
    pub traces: Vec<NamedTrace>,
    #[serde(skip)]
    pub sweeps: Vec<PowerSweep>,
}

impl Measurements {
    pub fn trace(&self, name: &str) -> Option<&ScalarTrace> {
        self.traces.iter().find(|t| t.name == name).map(|t| &t.trace)
    }
}

/// Record of a `simulate` run: measurements without limits or verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub measurements: Measurements,
}

impl SimulationRecord {
    pub fn canonical_json(&self) -> Result<String> {
        canonical(self, &[])
    }
}

pub fn simulate(sc: &Scenario) -> Result<SimulationRecord> {
    sc.validate()?;
    let band = scenario_band(sc)?;
    Ok(SimulationRecord {
        scenario: sc.name.clone(),
        config_hash: scenario_hash(sc)?,
        seed: sc.testbed.seed,
        measurements: measure(sc, &band)?,
    })
}

fn scenario_band(sc: &Scenario) -> Result<BandSpec> {
    match &sc.limits {
        Some(l) => Ok(l.band),
        None => {
            let g = sc.testbed.grid.build()?;
            BandSpec::new(g.first(), g.last())
        }
    }
}

fn named(name: &str, trace: ScalarTrace) -> NamedTrace {
    NamedTrace { name: name.into(), trace }
}

fn db_trace(net: &TwoPortNetwork, i: usize, j: usize) -> Result<ScalarTrace> {
    ScalarTrace::new(net.grid().clone(), net.param_db(i, j), Unit::Db)
}

fn nearest_index(points: &[f64], f: f64) -> usize {
    (0..points.len()).min_by(|&a, &b| (points[a] - f).abs().total_cmp(&(points[b] - f).abs())).unwrap_or(0)
}

/// Lumped per-frequency temperature `T_eff(f)/(L(f) − 1)` of a cable run.
fn lumped_trace(p: &ThermalProfile) -> Result<ScalarTrace> {
    let v = (0..p.grid.len())
        .map(|k| {
            let l = p.total_loss(k);
            let t = p.effective_temperature(k, Reference::Input)?;
            Ok(if l > 1.0 { t / (l - 1.0) } else { 0.0 })
        })
        .collect::<Result<Vec<_>>>()?;
    ScalarTrace::new(p.grid.clone(), v, Unit::Kelvin)
}

fn p1db_freqs(sc: &Scenario, band: &BandSpec, grid: &[f64]) -> Vec<usize> {
    let wanted: Vec<f64> = if sc.p1db_freqs_ghz.is_empty() {
        (0..5).map(|i| band.f_low_hz + (band.f_high_hz - band.f_low_hz) * i as f64 / 4.0).collect()
    } else {
        sc.p1db_freqs_ghz.iter().map(|g| g * 1e9).collect()
    };
    let mut idx: Vec<usize> = wanted.iter().map(|&f| nearest_index(grid, f)).collect();
    idx.dedup();
    idx
}

/// Calibrate, measure S-parameters, power sweeps and noise, and propagate
/// the uncertainty budget.
pub fn measure(sc: &Scenario, band: &BandSpec) -> Result<Measurements> {
    let opts = &sc.run;
    let exec = opts.execution;
    let mut tb = Testbed::with_execution(sc.testbed.clone(), exec)?;
    let grid = tb.grid().clone();
    let f = grid.points().to_vec();
    let dut = &sc.dut;

    // TRL calibration with an independent THRU for verification
    let m_thru = tb.vna(SwitchState::both(Port::Thru), None)?;
    let m_line = tb.vna(SwitchState::both(Port::Line), None)?;
    let m_reflect = tb.vna(SwitchState::both(Port::Reflect), None)?;
    let m_verify = tb.vna(SwitchState::both(Port::Thru), None)?;
    let meas = TrlStandardsMeasurement::with_reflect_network(m_thru.clone(), m_line, &m_reflect)?;
    let em = solve_trl_with(&meas, exec)?;
    let verify = verify_cal(&em, &m_verify, sc.tolerances.verify_db)?;
    let calibration = CalibrationSummary {
        error_model_hash: sha256_hex(em.to_json()?.as_bytes()),
        verify_max_residual_db: verify.max_abs_residual_db,
        verify_tolerance_db: verify.tolerance_db,
        pass: within(verify.max_abs_residual_db, verify.tolerance_db),
        ill_conditioned_freqs_hz: em.ill_conditioned_freqs(),
    };

    // S-parameters
    let raw = tb.vna(SwitchState::both(Port::Dut), Some(dut))?;
    let s = deembed_with(&em, &raw, exec)?;
    let gain = db_trace(&s, 2, 1)?;
    let s11 = db_trace(&s, 1, 1)?;
    let s22 = db_trace(&s, 2, 2)?;
    let s12 = db_trace(&s, 1, 2)?;

    // power sweeps, referred to the DUT planes with the calibrated box losses
    let (box_in, box_out) = em.box_losses_db();
    let (p0, p1, step) = opts.sweep_dbm;
    let pins = sweep_points(p0, p1, step)?;
    let mut p1db = Vec::new();
    let mut sweeps = Vec::new();
    for k in p1db_freqs(sc, band, &f) {
        let raw_sweep = tb.power_sweep(dut, f[k], &pins)?;
        let sweep = raw_sweep.shifted(-box_in.values[k], box_out.values[k]);
        p1db.push(extract_p1db(&sweep, &opts.p1db)?);
        sweeps.push(sweep);
    }

    // noise: loss tables from the raw THRU split evenly about the DUT
    let cfg = tb.config().clone();
    let sys_db: Vec<f64> = m_thru.param_db(2, 1).iter().map(|d| -d).collect();
    let lin = |v: Vec<f64>| ScalarTrace::new(grid.clone(), v, Unit::Linear);
    let l_in = lin(sys_db.iter().map(|d| db_to_power(d / 2.0 + opts.loss_table_offset_db)).collect())?;
    let l_after = lin(sys_db.iter().map(|d| db_to_power(d / 2.0)).collect())?;
    let t_in_cable = lumped_trace(tb.input_profile())?;
    let t_out_cable = lumped_trace(tb.output_profile())?;
    let chain = ChainModel {
        l_cable_in: l_in,
        t_cable_in: t_in_cable,
        l_attenuator: ScalarTrace::constant(grid.clone(), db_to_power(cfg.attenuator.loss_db), Unit::Linear),
        t_attenuator: cfg.attenuator.t_a_k,
        l_after,
        t_after: t_out_cable,
        t_receiver: ScalarTrace::constant(grid.clone(), cfg.receiver.t_receiver_k, Unit::Kelvin),
        input_model: InputModel::Full,
    };
    let ns = &cfg.noise_source;
    let t_src_hot = ScalarTrace::from_fn(grid.clone(), Unit::Kelvin, |x| enr_to_hot(ns.enr_db.at(x), ns.t_off_k));
    let t_src_cold = ScalarTrace::constant(grid.clone(), ns.t_off_k, Unit::Kelvin);
    let rx_gain = cfg.receiver.gain_db;
    let mut t_runs = Vec::with_capacity(sc.noise_repeats);
    let mut y_sum = vec![0.0; grid.len()];
    let mut g_sum = vec![0.0; grid.len()];
    for _ in 0..sc.noise_repeats {
        let hot = tb.sa(SourceState::Hot, Some(dut))?.map(Unit::DbmPerHz, |p| p - rx_gain);
        let cold = tb.sa(SourceState::Cold, Some(dut))?.map(Unit::DbmPerHz, |p| p - rx_gain);
        let x = extract_dut_noise(&hot, &cold, &t_src_hot, &t_src_cold, &chain)?;
        for k in 0..grid.len() {
            y_sum[k] += x.y.y.values[k];
            g_sum[k] += x.gain_db.values[k];
        }
        t_runs.push(x.t_dut.t);
    }
    let n_rep = sc.noise_repeats as f64;
    let (t_mean, t_2sigma) = if t_runs.len() >= 2 {
        let r = repeatability_ci(&t_runs)?;
        (r.mean, r.two_sigma)
    } else {
        (t_runs[0].clone(), ScalarTrace::constant(grid.clone(), 0.0, Unit::Kelvin))
    };
    let noise_gain = ScalarTrace::new(grid.clone(), g_sum.iter().map(|g| g / n_rep).collect(), Unit::Db)?;

    // uncertainty at every grid point
    let l_model = tb.input_profile().total_loss_trace();
    let t_eff_in = tb.input_profile().effective_temperature_trace(Reference::Input)?;
    let t_cable_fit = fit_lumped_temperature(&t_eff_in, &l_model)?;
    let op_at = |k: usize| OperatingPoint {
        y: y_sum[k] / n_rep,
        t_hot: t_src_hot.values[k],
        t_cold: t_src_cold.values[k],
        l_a: chain.l_attenuator.values[k],
        l_cable: chain.l_cable_in.values[k],
        t_cable: t_cable_fit,
        t_a: chain.t_attenuator,
        g_dut: db_to_power(noise_gain.values[k]),
        t_second_stage: chain.second_stage_temperature(k),
    };
    let sigma: Vec<f64> = (0..grid.len())
        .map(|k| propagate_tdut_with(&opts.budget, &op_at(k), &opts.propagation).map(|p| p.sigma_k).unwrap_or(f64::NAN))
        .collect();
    let sigma = ScalarTrace::new(grid.clone(), sigma, Unit::Kelvin)?;
    let kc = nearest_index(&f, 0.5 * (band.f_low_hz + band.f_high_hz));
    let center = propagate_tdut_with(&opts.budget, &op_at(kc), &opts.propagation)?;
    let mc = monte_carlo_tdut_with(&opts.budget, &op_at(kc), opts.mc_samples, cfg.seed, &opts.propagation, exec)?;
    let (_, max_sigma) = band_extrema(&sigma, band)?;

    let (g_lo, g_hi) = band_extrema(&gain, band)?;
    let (t_lo, t_hi) = band_extrema(&t_mean, band)?;
    let idx = band.indices(&grid)?;
    let t_avg = idx.iter().map(|&i| t_mean.values[i]).sum::<f64>() / idx.len() as f64;
    let (_, rep) = band_extrema(&t_2sigma, band)?;
    let rl_band = sc.limits.as_ref().and_then(|l| l.return_loss_band).unwrap_or(*band);
    let metrics = RunMetrics {
        band: *band,
        flatness_db: gain_flatness(&gain, band)?,
        peak_gain_db: g_hi,
        min_gain_db: g_lo,
        noise_min_k: t_lo,
        noise_max_k: t_hi,
        noise_mean_k: t_avg,
        noise_repeatability_k: rep,
        noise_repeats: sc.noise_repeats,
        s11_max_db: band_extrema(&s11, &rl_band)?.1,
        s22_max_db: band_extrema(&s22, &rl_band)?.1,
        s12_max_db: band_extrema(&s12, band)?.1,
        t_cable_fit_k: t_cable_fit,
    };

    let traces = vec![
        named("gain_db", gain),
        named("s11_db", s11),
        named("s22_db", s22),
        named("s12_db", s12),
        named("t_dut_k", t_mean),
        named("t_dut_2sigma_k", t_2sigma),
        named("t_dut_sigma_budget_k", sigma),
        named("noise_gain_db", noise_gain),
        named("verify_residual_db", verify.residual),
        named("input_box_loss_db", box_in),
        named("output_box_loss_db", box_out),
    ];
    Ok(Measurements {
        calibration,
        metrics,
        p1db,
        uncertainty: UncertaintySummary {
            budget: opts.budget,
            center,
            center_freq_hz: f[kc],
            monte_carlo: mc,
            max_sigma_k: max_sigma,
        },
        traces,
        sweeps,
    })
}

fn evaluate_limits(m: &Measurements, limits: &SpecLimits, marginal_factor: f64) -> Result<Vec<LimitOutcome>> {
    let budget = &m.uncertainty.budget;
    let u_gain = 2.0 * budget.g_dut_db;
    let t = m.trace("t_dut_k").expect("noise trace");
    let sigma = m.trace("t_dut_sigma_budget_k").expect("sigma trace");
    let mut out = Vec::new();
    for (name, limit) in limits.entries() {
        let (measured, relation, u) = match name {
            "min_gain_db" => (m.metrics.min_gain_db, Relation::Above, u_gain),
            "max_gain_db" => (m.metrics.peak_gain_db, Relation::Below, u_gain),
            "max_flatness_db" => (m.metrics.flatness_db, Relation::Below, u_gain * 2f64.sqrt()),
            "max_noise_k" => {
                let idx = limits.band.indices(&t.grid)?;
                let worst = idx.iter().copied().max_by(|&a, &b| t.values[a].total_cmp(&t.values[b])).expect("band");
                (t.values[worst], Relation::Below, 2.0 * sigma.values[worst])
            }
            "min_op1db_dbm" => {
                let worst = m.p1db.iter().map(|r| r.op1db_dbm.unwrap_or(f64::INFINITY)).fold(f64::INFINITY, f64::min);
                (worst, Relation::Above, u_gain)
            }
            "return_loss_db" => (m.metrics.s11_max_db.max(m.metrics.s22_max_db), Relation::Below, u_gain),
            "isolation_db" => (m.metrics.s12_max_db, Relation::Below, u_gain),
            _ => unreachable!("unknown limit {name}"),
        };
        let pass = match (name, relation) {
            // reflection limits use the strict band-compliance rule
            ("return_loss_db" | "isolation_db", Relation::Below) => measured < limit,
            (_, Relation::Below) => measured <= limit,
            (_, Relation::Above) => measured >= limit,
        };
        let exceedance = if pass { 0.0 } else { (measured - limit).abs() };
        out.push(LimitOutcome {
            name: name.into(),
            limit,
            measured,
            pass,
            exceedance,
            expanded_uncertainty: u,
            marginal: !pass && exceedance <= marginal_factor * u,
        });
    }
    Ok(out)
}

fn within(deviation: f64, tol: f64) -> bool {
    deviation <= tol + EXACT_FLOOR
}

fn max_dev(measured: &ScalarTrace, known: impl Fn(f64) -> f64, band: &BandSpec) -> Result<f64> {
    Ok(band
        .indices(&measured.grid)?
        .into_iter()
        .map(|i| (measured.values[i] - known(measured.grid.points()[i])).abs())
        .fold(0.0, f64::max))
}

/// Compare Phase-1 measurements against the control device's known values.
fn reference_checks(m: &Measurements, dut: &DutModel, tol: &ControlTolerances) -> Result<Vec<ReferenceCheck>> {
    let band = &m.metrics.band;
    let gain = m.trace("gain_db").expect("gain");
    let known_gain = ScalarTrace::from_fn(gain.grid.clone(), Unit::Db, |f| dut.gain_at(f));
    let check = |name: &str, deviation: f64, tolerance: f64| ReferenceCheck {
        name: name.into(),
        deviation,
        tolerance,
        pass: within(deviation, tolerance),
    };
    let mut out = vec![
        check("gain_db", max_dev(gain, |f| dut.gain_at(f), band)?, tol.gain_db),
        check("flatness_db", (m.metrics.flatness_db - gain_flatness(&known_gain, band)?).abs(), tol.flatness_db),
        check(
            "noise_k",
            max_dev(m.trace("t_dut_k").expect("noise"), |f| dut.noise_temperature_at(f), band)?,
            tol.noise_k,
        ),
        check("s11_db", max_dev(m.trace("s11_db").expect("s11"), |f| dut.s11_db.at(f), band)?, tol.reflection_db),
        check("s22_db", max_dev(m.trace("s22_db").expect("s22"), |f| dut.s22_db.at(f), band)?, tol.reflection_db),
    ];
    let mut op_dev: f64 = 0.0;
    for (sweep, r) in m.sweeps.iter().zip(&m.p1db) {
        let ideal = PowerSweep::new(
            sweep.freq_hz,
            sweep.pin_dbm.clone(),
            sweep.pin_dbm.iter().map(|&p| dut.output_power(sweep.freq_hz, p)).collect(),
        )?;
        let known = extract_p1db(&ideal, &P1dbOptions::default())?;
        op_dev = op_dev.max(match (r.op1db_dbm, known.op1db_dbm) {
            (Some(a), Some(b)) => (a - b).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        });
    }
    if !m.p1db.is_empty() {
        out.push(check("op1db_dbm", op_dev, tol.op1db_db));
    }
    Ok(out)
}

fn finish(
    sc: &Scenario,
    phase: u8,
    phase1_ref: Option<String>,
    m: Measurements,
    reference_checks: Vec<ReferenceCheck>,
    limits: Vec<LimitOutcome>,
) -> Result<RunRecord> {
    let mut causes = Vec::new();
    if !m.calibration.pass {
        causes.push("CALIBRATION".to_string());
    }
    causes.extend(reference_checks.iter().filter(|c| !c.pass).map(|c| format!("reference:{}", c.name)));
    causes.extend(limits.iter().filter(|l| !l.pass).map(|l| format!("limit:{}", l.name)));
    let verdict = if causes.is_empty() {
        Verdict::Pass
    } else if phase == 2
        && m.calibration.pass
        && reference_checks.iter().all(|c| c.pass)
        && limits.iter().all(|l| l.pass || l.marginal)
    {
        Verdict::FailureAnalysis
    } else {
        Verdict::Fail
    };
    let mut rec = RunRecord {
        schema: RECORD_SCHEMA,
        run_id: String::new(),
        timestamp: chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        phase,
        scenario: sc.name.clone(),
        config_hash: scenario_hash(sc)?,
        testbed_hash: testbed_hash(sc)?,
        seed: sc.testbed.seed,
        phase1_ref,
        bias: sc.dut.bias,
        calibration: m.calibration,
        metrics: m.metrics,
        p1db: m.p1db,
        uncertainty: m.uncertainty,
        reference_checks,
        limits,
        verdict,
        causes,
        traces: m.traces,
    };
    rec.run_id = rec.content_id()?;
    Ok(rec)
}

/// Noise-free operating point of the scenario's DUT at the grid point
/// nearest `f_hz`, for uncertainty studies.
pub fn operating_point(sc: &Scenario, f_hz: f64) -> Result<OperatingPoint> {
    sc.validate()?;
    let tb = Testbed::with_execution(sc.testbed.clone(), sc.run.execution)?;
    let cfg = tb.config();
    let k = nearest_index(tb.grid().points(), f_hz);
    let f = tb.grid().points()[k];
    let t_rx = cfg.receiver.t_receiver_k;
    let th = tb.receiver_input_temperature(k, SourceState::Hot, Some(&sc.dut))? + t_rx;
    let tc = tb.receiver_input_temperature(k, SourceState::Cold, Some(&sc.dut))? + t_rx;
    let inp = tb.input_profile();
    let t_cable = fit_lumped_temperature(&inp.effective_temperature_trace(Reference::Input)?, &inp.total_loss_trace())?;
    let out = tb.output_profile();
    let l_out = out.total_loss(k);
    let ns = &cfg.noise_source;
    Ok(OperatingPoint {
        y: th / tc,
        t_hot: enr_to_hot(ns.enr_db.at(f), ns.t_off_k),
        t_cold: ns.t_off_k,
        l_a: db_to_power(cfg.attenuator.loss_db),
        l_cable: inp.total_loss(k),
        t_cable,
        t_a: cfg.attenuator.t_a_k,
        g_dut: db_to_power(sc.dut.gain_at(f)),
        t_second_stage: out.effective_temperature(k, Reference::Input)? + l_out * t_rx,
    })
}

/// Phase 1: qualify the test setup on the control device in `sc`.
pub fn run_phase1(sc: &Scenario) -> Result<RunRecord> {
    sc.validate()?;
    let band = scenario_band(sc)?;
    let m = measure(sc, &band)?;
    let refs = reference_checks(&m, &sc.dut, &sc.tolerances)?;
    let limits = match &sc.limits {
        Some(l) => evaluate_limits(&m, l, sc.run.marginal_factor)?,
        None => Vec::new(),
    };
    finish(sc, 1, None, m, refs, limits)
}

/// Phase 2: measure the device in `sc` against `limits`. Requires a passing
/// Phase-1 record from the same test setup.
pub fn run_phase2(sc: &Scenario, limits: &SpecLimits, phase1: Option<&RunRecord>) -> Result<RunRecord> {
    let p1 = phase1.ok_or_else(|| Error::Protocol("Phase 2 requires a Phase-1 record".into()))?;
    if p1.phase != 1 {
        return Err(Error::Protocol(format!("record {} is from phase {}, not phase 1", p1.run_id, p1.phase)));
    }
    if !p1.verdict.passed() {
        return Err(Error::Protocol(format!("Phase-1 record {} has verdict {}", p1.run_id, p1.verdict)));
    }
    sc.validate()?;
    limits.validate()?;
    if p1.testbed_hash != testbed_hash(sc)? {
        return Err(Error::Protocol(format!("Phase-1 record {} was taken on a different test setup", p1.run_id)));
    }
    let m = measure(sc, &limits.band)?;
    let outcomes = evaluate_limits(&m, limits, sc.run.marginal_factor)?;
    finish(sc, 2, Some(p1.run_id.clone()), m, Vec::new(), outcomes)
}
