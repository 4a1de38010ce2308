//! Simulated cryostat testbed: fixture networks, an SP6T switch pair with
//! TRL standards, a calibrated noise source and virtual VNA / SA.
//!
//! Every virtual measurement draws its noise from a ChaCha stream keyed by
//! `(seed, call index)`, so results are reproducible whatever order or
//! thread they are produced on.

mod dut;

pub use dut::{Bias, Compression, DutModel, Spectrum};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::PowerSweep;
use crate::network::{cascade, db_to_amplitude, FrequencyGrid, Mat2, ScalarTrace, TwoPortNetwork, Unit};
use crate::noise::{enr_to_hot, BOLTZMANN, DEFAULT_T_OFF};
use crate::protocol::{ControlTolerances, RunOptions, SpecLimits};
use crate::thermal::{CableThermalSpec, Reference, ThermalProfile};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_10, PI};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start_ghz: f64,
    pub stop_ghz: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { start_ghz: 2.0, stop_ghz: 10.0, points: 161 }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::linspace(self.start_ghz * 1e9, self.stop_ghz * 1e9, self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attenuator {
    pub loss_db: f64,
    /// Physical temperature as read by its thermometer.
    pub t_a_k: f64,
}

impl Default for Attenuator {
    fn default() -> Self {
        Attenuator { loss_db: 30.0, t_a_k: 3.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrlStandards {
    pub line_delay_ps: f64,
    #[serde(default)]
    pub line_loss_db: f64,
    /// Actual reflection of the REFLECT standard.
    pub reflect_gamma: Complex64,
}

impl Default for TrlStandards {
    fn default() -> Self {
        // quarter wave at the 6 GHz band centre
        TrlStandards { line_delay_ps: 1e12 / (4.0 * 6e9), line_loss_db: 0.0, reflect_gamma: Complex64::new(-1.0, 0.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub enr_db: Spectrum,
    pub t_off_k: f64,
}

impl Default for NoiseSource {
    fn default() -> Self {
        NoiseSource { enr_db: Spectrum::constant(15.0), t_off_k: DEFAULT_T_OFF }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Receiver {
    pub t_receiver_k: f64,
    #[serde(default)]
    pub gain_db: f64,
}

impl Default for Receiver {
    fn default() -> Self {
        Receiver { t_receiver_k: 300.0, gain_db: 0.0 }
    }
}

/// Standing-wave ripple on fixture transmission, as extra loss
/// `a·(1 + sin(2πf/P))/2` dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ripple {
    pub amplitude_db: f64,
    pub period_ghz: f64,
}

fn default_cable_delay() -> f64 {
    10.0
}
fn default_vna_noise() -> f64 {
    0.005
}
fn default_base() -> f64 {
    2.74
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestbedConfig {
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "CableThermalSpec::default_input")]
    pub input_cable: CableThermalSpec,
    #[serde(default = "CableThermalSpec::default_output")]
    pub output_cable: CableThermalSpec,
    /// Electrical delay of each cable run.
    #[serde(default = "default_cable_delay")]
    pub cable_delay_ns: f64,
    /// Real reflection of the connectors at the outer ends of the fixture.
    #[serde(default)]
    pub connector_gamma: f64,
    #[serde(default)]
    pub attenuator: Attenuator,
    #[serde(default)]
    pub trl: TrlStandards,
    #[serde(default)]
    pub noise_source: NoiseSource,
    #[serde(default)]
    pub receiver: Receiver,
    /// One-sigma VNA trace noise, dB.
    #[serde(default = "default_vna_noise")]
    pub vna_noise_db: f64,
    /// One-sigma SA power noise, dB.
    #[serde(default = "default_vna_noise")]
    pub sa_noise_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ripple: Option<Ripple>,
    #[serde(default = "default_base")]
    pub base_temperature_k: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl TestbedConfig {
    pub fn noiseless(mut self) -> Self {
        self.vna_noise_db = 0.0;
        self.sa_noise_db = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.input_cable.validate()?;
        self.output_cable.validate()?;
        self.noise_source.enr_db.validate("ENR")?;
        let temps = [self.attenuator.t_a_k, self.noise_source.t_off_k, self.base_temperature_k];
        if temps.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::invalid("testbed temperatures must be > 0"));
        }
        if !(self.receiver.t_receiver_k >= 0.0) {
            return Err(Error::invalid("receiver noise temperature must be ≥ 0"));
        }
        if !(self.attenuator.loss_db >= 0.0) {
            return Err(Error::invalid("attenuator loss must be ≥ 0 dB"));
        }
        if !(0.0..1.0).contains(&self.connector_gamma.abs()) {
            return Err(Error::invalid("connector reflection must satisfy |Γ| < 1"));
        }
        if !(self.vna_noise_db >= 0.0 && self.sa_noise_db >= 0.0) {
            return Err(Error::invalid("instrument noise must be ≥ 0"));
        }
        if self.trl.reflect_gamma.norm() > 1.0 || !(self.trl.line_loss_db >= 0.0) {
            return Err(Error::invalid("TRL standards must be passive"));
        }
        if let Some(r) = self.ripple {
            if !(r.amplitude_db >= 0.0 && r.period_ghz > 0.0) {
                return Err(Error::invalid("ripple needs amplitude ≥ 0 and period > 0"));
            }
        }
        self.grid.build().map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Port {
    Thru,
    Reflect,
    Line,
    Dut,
    Spare,
}

/// Selected throw on the input and output SP6T switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchState {
    pub input: Port,
    pub output: Port,
}

impl SwitchState {
    pub fn both(p: Port) -> Self {
        SwitchState { input: p, output: p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceState {
    Hot,
    Cold,
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn connector(gamma: f64) -> Mat2 {
    let t = Complex64::from((1.0 - gamma * gamma).sqrt());
    let g = Complex64::from(gamma);
    Mat2::new(g, t, t, -g)
}

fn matched_line(loss_db: f64, delay_s: f64, f: f64) -> Mat2 {
    let t = Complex64::from_polar(db_to_amplitude(-loss_db), -2.0 * PI * f * delay_s);
    Mat2::new(Complex64::ZERO, t, t, Complex64::ZERO)
}

/// Two-port reflection seen through `boxed` terminated by `gamma` on the
/// side facing the standard.
fn reflection_through(boxed: &Mat2, gamma: Complex64, port: usize) -> Complex64 {
    let [[s11, s12], [s21, s22]] = boxed.0;
    let one = Complex64::ONE;
    if port == 1 {
        s11 + s12 * s21 * gamma / (one - s22 * gamma)
    } else {
        s22 + s12 * s21 * gamma / (one - s11 * gamma)
    }
}

/// Testbed with the thermal profiles of both cable runs built once.
#[derive(Debug, Clone)]
pub struct Testbed {
    cfg: TestbedConfig,
    grid: FrequencyGrid,
    input_profile: ThermalProfile,
    output_profile: ThermalProfile,
    calls: u64,
}

impl Testbed {
    pub fn new(cfg: TestbedConfig) -> Result<Self> {
        Self::with_execution(cfg, Execution::default())
    }

    pub fn with_execution(cfg: TestbedConfig, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid.build()?;
        let input_profile = ThermalProfile::build(&cfg.input_cable, &grid, exec)?;
        let output_profile = ThermalProfile::build(&cfg.output_cable, &grid, exec)?;
        Ok(Testbed { cfg, grid, input_profile, output_profile, calls: 0 })
    }

    pub fn config(&self) -> &TestbedConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn input_profile(&self) -> &ThermalProfile {
        &self.input_profile
    }

    pub fn output_profile(&self) -> &ThermalProfile {
        &self.output_profile
    }

    /// Number of measurements taken so far (the next stream index).
    pub fn calls(&self) -> u64 {
        self.calls
    }

    fn next_stream(&mut self) -> u64 {
        let s = self.calls;
        self.calls += 1;
        s
    }

    fn ripple_db(&self, f: f64) -> f64 {
        self.cfg.ripple.map_or(0.0, |r| r.amplitude_db * (1.0 + (2.0 * PI * f / (r.period_ghz * 1e9)).sin()) / 2.0)
    }

    /// Input and output fixture error boxes at `f`.
    pub fn fixture_at(&self, f: f64) -> Result<(Mat2, Mat2)> {
        let tau = self.cfg.cable_delay_ns * 1e-9;
        let c = connector(self.cfg.connector_gamma);
        let a_line = matched_line(self.cfg.input_cable.total_loss_db(f)? + self.ripple_db(f), tau, f);
        let b_line = matched_line(self.cfg.output_cable.total_loss_db(f)?, tau, f);
        let singular = || Error::Singular { freq_hz: f, what: "fixture transmission is zero".into() };
        Ok((c.then(&a_line).ok_or_else(singular)?, b_line.then(&c).ok_or_else(singular)?))
    }

    pub fn fixture(&self) -> Result<(TwoPortNetwork, TwoPortNetwork)> {
        let boxes = self.grid.points().iter().map(|&f| self.fixture_at(f)).collect::<Result<Vec<_>>>()?;
        let (a, b): (Vec<Mat2>, Vec<Mat2>) = boxes.into_iter().unzip();
        Ok((TwoPortNetwork::new_passive(self.grid.clone(), a)?, TwoPortNetwork::new_passive(self.grid.clone(), b)?))
    }

    /// The ideal element selected by `state`, without fixture.
    pub fn element(&self, state: SwitchState, dut: Option<&DutModel>) -> Result<TwoPortNetwork> {
        if state.input != state.output {
            return Err(Error::invalid(format!(
                "switches disagree: input on {:?}, output on {:?}",
                state.input, state.output
            )));
        }
        match (state.input, dut) {
            (Port::Dut, None) => Err(Error::invalid("DUT port selected but no DUT installed")),
            (Port::Dut, Some(d)) => {
                d.validate()?;
                d.network(&self.grid)
            }
            (_, Some(_)) => Err(Error::invalid("DUT supplied but switches do not select the DUT port")),
            (Port::Spare, None) => Err(Error::invalid("spare port has nothing installed")),
            (Port::Thru, None) => Ok(TwoPortNetwork::thru(self.grid.clone())),
            (Port::Line, None) => {
                let t = &self.cfg.trl;
                TwoPortNetwork::from_fn(self.grid.clone(), |f| matched_line(t.line_loss_db, t.line_delay_ps * 1e-12, f))
            }
            (Port::Reflect, None) => {
                let g = self.cfg.trl.reflect_gamma;
                TwoPortNetwork::from_fn(self.grid.clone(), |_| Mat2::new(g, Complex64::ZERO, Complex64::ZERO, g))
            }
        }
    }

    /// Raw VNA measurement on noise stream `stream`.
    pub fn vna_on_stream(&self, state: SwitchState, dut: Option<&DutModel>, stream: u64) -> Result<TwoPortNetwork> {
        let x = self.element(state, dut)?;
        let (a, b) = self.fixture()?;
        let raw = if state.input == Port::Reflect {
            let g = self.cfg.trl.reflect_gamma;
            let s = a
                .s()
                .iter()
                .zip(b.s())
                .map(|(ma, mb)| {
                    Mat2::new(
                        reflection_through(ma, g, 1),
                        Complex64::ZERO,
                        Complex64::ZERO,
                        reflection_through(mb, g, 2),
                    )
                })
                .collect();
            TwoPortNetwork::new(self.grid.clone(), s)?
        } else {
            cascade(&cascade(&a, &x)?, &b)?
        };
        let sigma = self.cfg.vna_noise_db * LN_10 / 20.0;
        if sigma == 0.0 {
            return Ok(raw);
        }
        let mut rng = substream(self.cfg.seed, stream);
        let noisy = raw
            .s()
            .iter()
            .map(|m| {
                let mut out = *m;
                for row in out.0.iter_mut() {
                    for v in row.iter_mut() {
                        let z = Complex64::new(gauss(&mut rng), gauss(&mut rng));
                        *v *= Complex64::ONE + sigma * z;
                    }
                }
                out
            })
            .collect();
        TwoPortNetwork::new(self.grid.clone(), noisy)
    }

    pub fn vna(&mut self, state: SwitchState, dut: Option<&DutModel>) -> Result<TwoPortNetwork> {
        let s = self.next_stream();
        self.vna_on_stream(state, dut, s)
    }

    /// Noise temperature reaching the receiver input, K.
    pub fn receiver_input_temperature(&self, k: usize, source: SourceState, dut: Option<&DutModel>) -> Result<f64> {
        let f = self.grid.points()[k];
        let ns = &self.cfg.noise_source;
        let mut t = match source {
            SourceState::Hot => enr_to_hot(ns.enr_db.at(f), ns.t_off_k),
            SourceState::Cold => ns.t_off_k,
        };
        let l_in = self.input_profile.total_loss(k);
        t = (t + self.input_profile.effective_temperature(k, Reference::Input)?) / l_in;
        let l_a = 10f64.powf(self.cfg.attenuator.loss_db / 10.0);
        t = t / l_a + (1.0 - 1.0 / l_a) * self.cfg.attenuator.t_a_k;
        if let Some(d) = dut {
            t = 10f64.powf(d.gain_at(f) / 10.0) * (t + d.noise_temperature_at(f));
        }
        let l_out = self.output_profile.total_loss(k);
        Ok((t + self.output_profile.effective_temperature(k, Reference::Input)?) / l_out)
    }

    /// SA noise power density, dBm/Hz, on noise stream `stream`.
    pub fn sa_on_stream(&self, source: SourceState, dut: Option<&DutModel>, stream: u64) -> Result<ScalarTrace> {
        if let Some(d) = dut {
            d.validate()?;
        }
        let mut rng = substream(self.cfg.seed, stream);
        let rx = self.cfg.receiver;
        let sigma = self.cfg.sa_noise_db;
        let v = (0..self.grid.len())
            .map(|k| {
                let t = self.receiver_input_temperature(k, source, dut)? + rx.t_receiver_k;
                let p = 10.0 * (BOLTZMANN * t * 1e3).log10() + rx.gain_db;
                Ok(if sigma > 0.0 { p + sigma * gauss(&mut rng) } else { p })
            })
            .collect::<Result<Vec<_>>>()?;
        ScalarTrace::new(self.grid.clone(), v, Unit::DbmPerHz)
    }

    pub fn sa(&mut self, source: SourceState, dut: Option<&DutModel>) -> Result<ScalarTrace> {
        let s = self.next_stream();
        self.sa_on_stream(source, dut, s)
    }

    /// Power sweep at the VNA ports: source power `pin` at the input
    /// reference plane, received power at the output reference plane.
    pub fn power_sweep_on_stream(&self, dut: &DutModel, f: f64, pin: &[f64], stream: u64) -> Result<PowerSweep> {
        dut.validate()?;
        let (a, b) = self.fixture_at(f)?;
        let l_in = -20.0 * a.0[1][0].norm().log10();
        let l_out = -20.0 * b.0[1][0].norm().log10();
        let mut rng = substream(self.cfg.seed, stream);
        let sigma = self.cfg.vna_noise_db;
        let pout = pin
            .iter()
            .map(|&p| {
                let v = dut.output_power(f, p - l_in) - l_out;
                if sigma > 0.0 {
                    v + sigma * gauss(&mut rng)
                } else {
                    v
                }
            })
            .collect();
        PowerSweep::new(f, pin.to_vec(), pout)
    }

    pub fn power_sweep(&mut self, dut: &DutModel, f: f64, pin: &[f64]) -> Result<PowerSweep> {
        let s = self.next_stream();
        self.power_sweep_on_stream(dut, f, pin, s)
    }
}

/// Input powers from `start` to `stop` inclusive in steps of `step`.
pub fn sweep_points(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && stop > start) {
        return Err(Error::invalid("sweep needs stop > start and step > 0"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

pub fn virtual_vna_measure(
    cfg: &TestbedConfig,
    state: SwitchState,
    dut: Option<&DutModel>,
    stream: u64,
) -> Result<TwoPortNetwork> {
    Testbed::new(cfg.clone())?.vna_on_stream(state, dut, stream)
}

pub fn virtual_sa_measure(
    cfg: &TestbedConfig,
    source: SourceState,
    dut: Option<&DutModel>,
    stream: u64,
) -> Result<ScalarTrace> {
    Testbed::new(cfg.clone())?.sa_on_stream(source, dut, stream)
}

pub fn virtual_power_sweep(
    cfg: &TestbedConfig,
    dut: &DutModel,
    f: f64,
    pin_start: f64,
    pin_stop: f64,
    step: f64,
    stream: u64,
) -> Result<PowerSweep> {
    let pins = sweep_points(pin_start, pin_stop, step)?;
    Testbed::new(cfg.clone())?.power_sweep_on_stream(dut, f, &pins, stream)
}

fn default_repeats() -> usize {
    9
}

/// Testbed, device and qualification settings in one versioned file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub testbed: TestbedConfig,
    pub dut: DutModel,
    /// Limits for Phase 2, or the control device's specification in Phase 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<SpecLimits>,
    #[serde(default)]
    pub tolerances: ControlTolerances,
    /// Repeated hot/cold noise measurements averaged per run.
    #[serde(default = "default_repeats")]
    pub noise_repeats: usize,
    /// Frequencies for power sweeps; defaults to five points across the band.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p1db_freqs_ghz: Vec<f64>,
    #[serde(default)]
    pub run: RunOptions,
}

pub const PRESETS: [&str; 2] = ["lna_c", "lna_t"];

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported scenario schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if self.noise_repeats == 0 {
            return Err(Error::invalid("noise_repeats must be ≥ 1"));
        }
        self.testbed.validate()?;
        self.dut.validate()?;
        if let Some(l) = &self.limits {
            l.validate()?;
        }
        Ok(())
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "lna_c" => include_str!("../../presets/lna_c.json"),
            "lna_t" => include_str!("../../presets/lna_t.json"),
            other => {
                return Err(Error::invalid(format!("unknown preset '{other}' (available: {})", PRESETS.join(", "))))
            }
        };
        Self::from_json(text)
    }
}
