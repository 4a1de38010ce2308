//! Cold-attenuator Y-factor noise extraction.
//!
//! The source is seen through the input cable and a cold attenuator, so the
//! temperatures presented to the DUT are far below the diode's hot/off
//! temperatures. [`input_noise_temperature`] computes them, [`y_factor`] and
//! [`dut_noise_temperature`] give the system noise temperature at the DUT
//! input, and [`extract_dut_noise`] removes the post-DUT chain.

use crate::error::{Error, Result};
use crate::network::{db_to_power, FrequencyGrid, ScalarTrace, Unit};
use crate::thermal;
use serde::{Deserialize, Serialize};

/// Reference temperature of ENR and noise figure, K.
pub const T0: f64 = 290.0;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const DEFAULT_T_OFF: f64 = 296.0;

/// Noise power density of a matched load at `t` kelvin, dBm/Hz.
pub fn kelvin_to_dbm_per_hz(t: f64) -> f64 {
    10.0 * (BOLTZMANN * t * 1e3).log10()
}

pub fn dbm_per_hz_to_watts(p: f64) -> f64 {
    10f64.powf(p / 10.0) * 1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrTable {
    pub enr_db: ScalarTrace,
    /// Physical temperature of the diode when off, K.
    #[serde(default = "default_t_off")]
    pub t_off_k: f64,
}

fn default_t_off() -> f64 {
    DEFAULT_T_OFF
}

impl EnrTable {
    pub fn new(enr_db: ScalarTrace, t_off_k: f64) -> Result<Self> {
        if enr_db.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ENR values must be finite"));
        }
        if !(t_off_k > 0.0) {
            return Err(Error::invalid("off-state temperature must be > 0"));
        }
        Ok(EnrTable { enr_db: ScalarTrace { unit: Unit::Db, ..enr_db }, t_off_k })
    }

    pub fn constant(grid: FrequencyGrid, enr_db: f64, t_off_k: f64) -> Result<Self> {
        Self::new(ScalarTrace::constant(grid, enr_db, Unit::Db), t_off_k)
    }

    /// `freq_hz,enr_db` rows.
    pub fn from_csv(text: &str, t_off_k: f64) -> Result<Self> {
        Self::new(ScalarTrace::from_csv_or(text, Unit::Db)?, t_off_k)
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.enr_db.grid
    }

    pub fn hot_temperature(&self) -> ScalarTrace {
        self.enr_db.map(Unit::Kelvin, |e| enr_to_hot(e, self.t_off_k))
    }

    pub fn cold_temperature(&self) -> ScalarTrace {
        ScalarTrace::constant(self.grid().clone(), self.t_off_k, Unit::Kelvin)
    }
}

/// `T_hot = 290·10^(ENR/10) + T_off`.
pub fn enr_to_hot(enr_db: f64, t_off: f64) -> f64 {
    T0 * db_to_power(enr_db) + t_off
}

pub fn hot_temperature(enr: &EnrTable) -> ScalarTrace {
    enr.hot_temperature()
}

/// Per-frequency Y-factor with a validity mask (`Y > 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YFactor {
    pub y: ScalarTrace,
    pub valid: Vec<bool>,
}

fn to_linear_power(t: &ScalarTrace) -> Result<Vec<f64>> {
    match t.unit {
        Unit::DbmPerHz | Unit::Dbm | Unit::Db => Ok(t.values.iter().map(|v| db_to_power(*v)).collect()),
        Unit::Linear => Ok(t.values.clone()),
        Unit::Kelvin => Err(Error::invalid("noise powers must be dBm/Hz, dBm or linear")),
    }
}

/// `Y = N_hot / N_cold`, elementwise. Logarithmic inputs are converted first.
pub fn y_factor(n_hot: &ScalarTrace, n_cold: &ScalarTrace) -> Result<YFactor> {
    n_hot.grid.ensure_same(&n_cold.grid, "Y-factor")?;
    let h = to_linear_power(n_hot)?;
    let c = to_linear_power(n_cold)?;
    let mut y = Vec::with_capacity(h.len());
    for (k, (a, b)) in h.iter().zip(&c).enumerate() {
        if !(*b > 0.0) {
            return Err(Error::domain(format!("cold noise power {b} ≤ 0 at {} Hz", n_cold.grid.points()[k])));
        }
        y.push(a / b);
    }
    let valid = y.iter().map(|v| *v > 1.0).collect();
    Ok(YFactor { y: ScalarTrace::new(n_hot.grid.clone(), y, Unit::Linear)?, valid })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Valid,
    /// Finite but below zero kelvin: a calibration fault upstream.
    Negative,
    /// `Y ≤ 1`; the value is NaN.
    InvalidY,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTemperature {
    pub t: ScalarTrace,
    pub status: Vec<PointStatus>,
}

impl NoiseTemperature {
    pub fn all_valid(&self) -> bool {
        self.status.iter().all(|s| *s == PointStatus::Valid)
    }
}

/// `(T_hot − Y·T_cold)/(Y − 1)`; NaN when `Y ≤ 1`.
pub fn y_factor_temperature(y: f64, t_hot: f64, t_cold: f64) -> f64 {
    if y > 1.0 {
        (t_hot - y * t_cold) / (y - 1.0)
    } else {
        f64::NAN
    }
}

fn classify(t: f64) -> PointStatus {
    if t.is_nan() {
        PointStatus::InvalidY
    } else if t < 0.0 {
        PointStatus::Negative
    } else {
        PointStatus::Valid
    }
}

pub fn dut_noise_temperature(y: &ScalarTrace, t_hot: &ScalarTrace, t_cold: &ScalarTrace) -> Result<NoiseTemperature> {
    y.grid.ensure_same(&t_hot.grid, "Y vs T_hot")?;
    y.grid.ensure_same(&t_cold.grid, "Y vs T_cold")?;
    let v: Vec<f64> =
        (0..y.len()).map(|k| y_factor_temperature(y.values[k], t_hot.values[k], t_cold.values[k])).collect();
    let status = v.iter().map(|t| classify(*t)).collect();
    Ok(NoiseTemperature { t: ScalarTrace::new(y.grid.clone(), v, Unit::Kelvin)?, status })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputModel {
    /// Cable and attenuator as separate lumps at their own temperatures.
    #[default]
    Full,
    /// Both losses at the single equivalent loss temperature.
    Lumped,
}

/// Noise temperature presented to the DUT input by a source at `t_s`.
pub fn input_noise_temperature(
    t_s: f64,
    l_a: f64,
    t_a: f64,
    l_cable: f64,
    t_cable: f64,
    mode: InputModel,
) -> Result<f64> {
    if !(l_a >= 1.0 && l_cable >= 1.0) {
        return Err(Error::domain(format!("losses must be ≥ 1 (attenuator {l_a}, cable {l_cable})")));
    }
    let l = l_a * l_cable;
    match mode {
        InputModel::Full => Ok(t_s / l + (1.0 - 1.0 / l_cable) * t_cable / l_a + (1.0 - 1.0 / l_a) * t_a),
        InputModel::Lumped => {
            if l == 1.0 {
                return Ok(t_s);
            }
            let tl = thermal::t_loss(l_cable, t_cable, l_a, t_a)?;
            Ok(t_s / l + (1.0 - 1.0 / l) * tl)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTables {
    pub before_db: ScalarTrace,
    pub after_db: ScalarTrace,
    pub t_loss_k: f64,
}

/// Split the system THRU loss evenly and add the attenuator before the DUT.
pub fn build_loss_tables(
    system_thru_loss_db: &ScalarTrace,
    attenuator_db: &ScalarTrace,
    t_loss_k: f64,
) -> Result<LossTables> {
    build_loss_tables_split(system_thru_loss_db, attenuator_db, t_loss_k, 0.5)
}

/// As [`build_loss_tables`] with `before_fraction` of the system loss
/// assigned before the DUT.
pub fn build_loss_tables_split(
    system_thru_loss_db: &ScalarTrace,
    attenuator_db: &ScalarTrace,
    t_loss_k: f64,
    before_fraction: f64,
) -> Result<LossTables> {
    system_thru_loss_db.grid.ensure_same(&attenuator_db.grid, "loss tables")?;
    if !(0.0..=1.0).contains(&before_fraction) {
        return Err(Error::invalid(format!("split fraction {before_fraction} outside [0, 1]")));
    }
    if system_thru_loss_db.values.iter().chain(&attenuator_db.values).any(|v| !(*v >= 0.0)) {
        return Err(Error::domain("loss values must be ≥ 0 dB"));
    }
    let before = system_thru_loss_db.zip_with(attenuator_db, Unit::Db, |s, a| before_fraction * s + a)?;
    let after = system_thru_loss_db.map(Unit::Db, |s| s - before_fraction * s);
    Ok(LossTables { before_db: before, after_db: after, t_loss_k })
}

/// Remove a second stage of noise `t_receiver` behind a gain `g_dut`.
pub fn second_stage_correction(t_measured: f64, g_dut: f64, t_receiver: f64) -> Result<f64> {
    if !(g_dut > 0.0) {
        return Err(Error::domain(format!("gain must be > 0, got {g_dut}")));
    }
    Ok(t_measured - t_receiver / g_dut)
}

pub fn noise_figure_from_temperature(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("noise temperature must be ≥ 0, got {t}")));
    }
    Ok(10.0 * (1.0 + t / T0).log10())
}

/// Everything between the noise source and the receiver apart from the DUT,
/// as the extraction sees it. Cable temperatures are per-frequency lumped
/// temperatures: input-referred `T_eff(f)/(L(f) − 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    /// Source-side cable loss, linear.
    pub l_cable_in: ScalarTrace,
    pub t_cable_in: ScalarTrace,
    /// Cold attenuator loss, linear.
    pub l_attenuator: ScalarTrace,
    pub t_attenuator: f64,
    /// Receiver-side loss, linear.
    pub l_after: ScalarTrace,
    pub t_after: ScalarTrace,
    pub t_receiver: ScalarTrace,
    #[serde(default)]
    pub input_model: InputModel,
}

impl ChainModel {
    /// Analyzer-style chain from loss tables: the whole before-DUT loss sits
    /// at `T_Loss`, as does the after-DUT loss.
    pub fn from_loss_tables(tables: &LossTables, t_receiver: &ScalarTrace) -> Result<Self> {
        tables.before_db.grid.ensure_same(&tables.after_db.grid, "loss tables")?;
        tables.before_db.grid.ensure_same(&t_receiver.grid, "receiver temperature")?;
        let grid = tables.before_db.grid.clone();
        let t_loss = ScalarTrace::constant(grid.clone(), tables.t_loss_k, Unit::Kelvin);
        Ok(ChainModel {
            l_cable_in: ScalarTrace::constant(grid.clone(), 1.0, Unit::Linear),
            t_cable_in: t_loss.clone(),
            l_attenuator: tables.before_db.to_linear()?,
            t_attenuator: tables.t_loss_k,
            l_after: tables.after_db.to_linear()?,
            t_after: t_loss,
            t_receiver: t_receiver.clone(),
            input_model: InputModel::Full,
        })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.l_cable_in.grid
    }

    fn check(&self) -> Result<()> {
        let g = self.grid();
        for (t, name) in [
            (&self.t_cable_in, "input cable temperature"),
            (&self.l_attenuator, "attenuator loss"),
            (&self.l_after, "after-DUT loss"),
            (&self.t_after, "after-DUT temperature"),
            (&self.t_receiver, "receiver temperature"),
        ] {
            g.ensure_same(&t.grid, name)?;
        }
        Ok(())
    }

    pub fn input_temperature(&self, k: usize, t_source: f64) -> Result<f64> {
        input_noise_temperature(
            t_source,
            self.l_attenuator.values[k],
            self.t_attenuator,
            self.l_cable_in.values[k],
            self.t_cable_in.values[k],
            self.input_model,
        )
    }

    /// Noise of the after-DUT chain referred to the DUT output plane.
    pub fn second_stage_temperature(&self, k: usize) -> f64 {
        let l = self.l_after.values[k];
        (l - 1.0) * self.t_after.values[k] + l * self.t_receiver.values[k]
    }
}

/// Full pipeline output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseExtraction {
    pub y: YFactor,
    pub t_in_hot: ScalarTrace,
    pub t_in_cold: ScalarTrace,
    /// Noise temperature of DUT plus everything after it, at the DUT input.
    pub t_system: NoiseTemperature,
    pub gain_db: ScalarTrace,
    pub t_dut: NoiseTemperature,
}

/// Y-factor extraction of DUT noise temperature and gain from hot/cold
/// power densities (dBm/Hz at the receiver) and source temperatures.
pub fn extract_dut_noise(
    n_hot: &ScalarTrace,
    n_cold: &ScalarTrace,
    t_source_hot: &ScalarTrace,
    t_source_cold: &ScalarTrace,
    chain: &ChainModel,
) -> Result<NoiseExtraction> {
    chain.check()?;
    let grid = chain.grid().clone();
    for t in [n_hot, n_cold, t_source_hot, t_source_cold] {
        grid.ensure_same(&t.grid, "noise extraction")?;
    }
    if n_hot.unit != Unit::DbmPerHz || n_cold.unit != Unit::DbmPerHz {
        return Err(Error::invalid("receiver noise powers must be in dBm/Hz"));
    }
    let y = y_factor(n_hot, n_cold)?;
    let n = grid.len();
    let mut t_in_h = Vec::with_capacity(n);
    let mut t_in_c = Vec::with_capacity(n);
    let mut gain = Vec::with_capacity(n);
    let mut t_dut = Vec::with_capacity(n);
    for k in 0..n {
        let th = chain.input_temperature(k, t_source_hot.values[k])?;
        let tc = chain.input_temperature(k, t_source_cold.values[k])?;
        let dn = dbm_per_hz_to_watts(n_hot.values[k]) - dbm_per_hz_to_watts(n_cold.values[k]);
        let g_total = dn / (BOLTZMANN * (th - tc));
        let g_dut = g_total * chain.l_after.values[k];
        let t_sys = y_factor_temperature(y.y.values[k], th, tc);
        t_dut.push(if g_dut > 0.0 {
            second_stage_correction(t_sys, g_dut, chain.second_stage_temperature(k))?
        } else {
            f64::NAN
        });
        t_in_h.push(th);
        t_in_c.push(tc);
        gain.push(if g_dut > 0.0 { 10.0 * g_dut.log10() } else { f64::NAN });
    }
    let t_sys_trace = dut_noise_temperature(
        &y.y,
        &ScalarTrace::new(grid.clone(), t_in_h.clone(), Unit::Kelvin)?,
        &ScalarTrace::new(grid.clone(), t_in_c.clone(), Unit::Kelvin)?,
    )?;
    let status = t_dut.iter().map(|t| classify(*t)).collect();
    Ok(NoiseExtraction {
        y,
        t_in_hot: ScalarTrace::new(grid.clone(), t_in_h, Unit::Kelvin)?,
        t_in_cold: ScalarTrace::new(grid.clone(), t_in_c, Unit::Kelvin)?,
        t_system: t_sys_trace,
        gain_db: ScalarTrace::new(grid.clone(), gain, Unit::Db)?,
        t_dut: NoiseTemperature { t: ScalarTrace::new(grid, t_dut, Unit::Kelvin)?, status },
    })
}
