//! Distributed thermal-noise model of coaxial cable runs.
//!
//! Each section carries a constant conductive heat flux, so the conductivity
//! integral Θ(T) = ∫k dT is affine in position. The section is split into
//! elements whose midpoint temperatures follow from inverting Θ; every
//! element is then a matched attenuator at its own temperature and the
//! chain's noise is the Friis cascade of those attenuators.

mod material;

pub use material::{MaterialProperties, BECU, CU_RRR100};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::network::{db_to_power, FrequencyGrid, ScalarTrace, Unit};
use serde::{Deserialize, Serialize};

pub const DEFAULT_ELEMENTS: usize = 1000;

/// Total insertion loss of a section as a function of frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SectionLoss {
    /// Conductor loss growing as √f, given per metre at 1 GHz.
    SkinEffect { db_per_m_at_1ghz: f64 },
    /// Tabulated total section loss in dB, linearly interpolated.
    Trace { trace: ScalarTrace },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Signal enters at the hot end.
    #[default]
    HotFirst,
    ColdFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableSection {
    pub material: MaterialProperties,
    pub length_m: f64,
    pub hot_k: f64,
    pub cold_k: f64,
    pub loss: SectionLoss,
    #[serde(default)]
    pub orientation: Orientation,
}

/// How a section's total dB loss is shared between its elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossWeighting {
    /// Proportional to √ρ(T_i) (surface resistance).
    #[default]
    SqrtResistivity,
    Uniform,
}

impl CableSection {
    pub fn new(
        material: MaterialProperties,
        length_m: f64,
        hot_k: f64,
        cold_k: f64,
        loss: SectionLoss,
    ) -> Result<Self> {
        let s = CableSection { material, length_m, hot_k, cold_k, loss, orientation: Orientation::HotFirst };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0 && self.length_m.is_finite()) {
            return Err(Error::invalid(format!("section length must be > 0, got {}", self.length_m)));
        }
        if !(self.hot_k >= self.cold_k && self.cold_k > 0.0) {
            return Err(Error::invalid(format!(
                "section needs hot ≥ cold > 0, got hot {} K cold {} K",
                self.hot_k, self.cold_k
            )));
        }
        match &self.loss {
            SectionLoss::SkinEffect { db_per_m_at_1ghz } if *db_per_m_at_1ghz < 0.0 => {
                Err(Error::invalid("section loss must be ≥ 0"))
            }
            SectionLoss::Trace { trace } if trace.values.iter().any(|v| *v < 0.0) => {
                Err(Error::invalid("section loss must be ≥ 0"))
            }
            _ => Ok(()),
        }
    }

    /// Total section loss at `f`, dB.
    pub fn loss_db(&self, f: f64) -> Result<f64> {
        match &self.loss {
            SectionLoss::SkinEffect { db_per_m_at_1ghz } => Ok(db_per_m_at_1ghz * self.length_m * (f / 1e9).sqrt()),
            SectionLoss::Trace { trace } => trace.at(f),
        }
    }

    pub fn reversed(&self) -> Self {
        let mut s = self.clone();
        s.orientation = match self.orientation {
            Orientation::HotFirst => Orientation::ColdFirst,
            Orientation::ColdFirst => Orientation::HotFirst,
        };
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableThermalSpec {
    /// Sections in signal order.
    pub sections: Vec<CableSection>,
    #[serde(default = "default_elements")]
    pub elements_per_section: usize,
    #[serde(default)]
    pub weighting: LossWeighting,
}

fn default_elements() -> usize {
    DEFAULT_ELEMENTS
}

/// Default per-metre conductor loss at 1 GHz of the room-temperature copper cable.
pub const DEFAULT_CU_DB_PER_M: f64 = 1.0;
/// Default per-metre conductor loss at 1 GHz of the BeCu cryostat lines.
pub const DEFAULT_BECU_DB_PER_M: f64 = 0.5;

impl CableThermalSpec {
    /// Source-side run: room-temperature Cu, then BeCu 296→50 K and 50→4 K.
    pub fn default_input() -> Self {
        let cu = MaterialProperties::copper_rrr100();
        let becu = MaterialProperties::beryllium_copper();
        let skin = |db| SectionLoss::SkinEffect { db_per_m_at_1ghz: db };
        CableThermalSpec {
            sections: vec![
                CableSection::new(cu, 1.0, 296.0, 296.0, skin(DEFAULT_CU_DB_PER_M)).unwrap(),
                CableSection::new(becu.clone(), 0.5, 296.0, 50.0, skin(DEFAULT_BECU_DB_PER_M)).unwrap(),
                CableSection::new(becu, 0.5, 50.0, 4.0, skin(DEFAULT_BECU_DB_PER_M)).unwrap(),
            ],
            elements_per_section: DEFAULT_ELEMENTS,
            weighting: LossWeighting::SqrtResistivity,
        }
    }

    /// Receiver-side run: the input run traversed from the cold end.
    pub fn default_output() -> Self {
        Self::default_input().reversed()
    }

    pub fn reversed(&self) -> Self {
        CableThermalSpec {
            sections: self.sections.iter().rev().map(CableSection::reversed).collect(),
            elements_per_section: self.elements_per_section,
            weighting: self.weighting,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sections.is_empty() {
            return Err(Error::invalid("cable spec has no sections"));
        }
        if self.elements_per_section == 0 {
            return Err(Error::invalid("elements_per_section must be ≥ 1"));
        }
        self.sections.iter().try_for_each(CableSection::validate)
    }

    pub fn element_count(&self) -> usize {
        self.sections.len() * self.elements_per_section
    }

    pub fn total_loss_db(&self, f: f64) -> Result<f64> {
        self.sections.iter().map(|s| s.loss_db(f)).sum()
    }

    pub fn total_loss_trace(&self, grid: &FrequencyGrid) -> Result<ScalarTrace> {
        let v = grid.points().iter().map(|&f| self.total_loss_db(f)).collect::<Result<Vec<_>>>()?;
        ScalarTrace::new(grid.clone(), v, Unit::Db)
    }
}

/// Element midpoint temperatures in signal order.
pub fn temperature_profile(section: &CableSection, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("element count must be ≥ 1"));
    }
    let m = &section.material;
    let th_hot = m.conductivity_integral(section.hot_k)?;
    let th_cold = m.conductivity_integral(section.cold_k)?;
    let mut temps = (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) / n as f64;
            m.inverse_conductivity_integral(th_hot + x * (th_cold - th_hot))
        })
        .collect::<Result<Vec<_>>>()?;
    if section.orientation == Orientation::ColdFirst {
        temps.reverse();
    }
    Ok(temps)
}

/// Split the section loss at `f` over elements at temperatures `temps`;
/// returns linear per-element losses.
pub fn distribute_loss(section: &CableSection, temps: &[f64], f: f64, weighting: LossWeighting) -> Result<Vec<f64>> {
    let total_db = section.loss_db(f)?;
    let weights = match weighting {
        LossWeighting::Uniform => vec![1.0; temps.len()],
        LossWeighting::SqrtResistivity => {
            temps.iter().map(|&t| section.material.resistivity(t).map(f64::sqrt)).collect::<Result<Vec<_>>>()?
        }
    };
    let sum: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| db_to_power(total_db * w / sum)).collect())
}

/// Input-referred noise temperature of a chain of matched attenuators,
/// element 0 first: `Σ (l_i − 1)·T_i·Π_{j<i} l_j`.
pub fn integrated_cable_noise(temps: &[f64], losses: &[f64]) -> Result<f64> {
    if temps.len() != losses.len() {
        return Err(Error::invalid("temperature and loss arrays differ in length"));
    }
    let mut gain_before = 1.0;
    let mut t_eff = 0.0;
    for (&t, &l) in temps.iter().zip(losses) {
        if !(l >= 1.0) {
            return Err(Error::domain(format!("element loss {l} < 1 in a passive cable")));
        }
        t_eff += (l - 1.0) * t * gain_before;
        gain_before *= l;
    }
    Ok(t_eff)
}

/// Which side of the cable a noise temperature is referred to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Input,
    Output,
}

/// Element temperatures and per-frequency element losses of a whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalProfile {
    pub grid: FrequencyGrid,
    /// Midpoint temperature per element, signal order.
    pub temperatures: Vec<f64>,
    /// `losses[k][i]`: linear loss of element `i` at grid point `k`.
    pub losses: Vec<Vec<f64>>,
}

impl ThermalProfile {
    pub fn build(spec: &CableThermalSpec, grid: &FrequencyGrid, exec: Execution) -> Result<Self> {
        spec.validate()?;
        let n = spec.elements_per_section;
        let per_section = spec.sections.iter().map(|s| temperature_profile(s, n)).collect::<Result<Vec<_>>>()?;
        let f = grid.points();
        let losses = exec::try_map_indexed(grid.len(), exec, |k| {
            let mut row = Vec::with_capacity(spec.element_count());
            for (s, temps) in spec.sections.iter().zip(&per_section) {
                row.extend(distribute_loss(s, temps, f[k], spec.weighting)?);
            }
            Ok::<_, Error>(row)
        })?;
        Ok(ThermalProfile { grid: grid.clone(), temperatures: per_section.concat(), losses })
    }

    pub fn total_loss(&self, k: usize) -> f64 {
        self.losses[k].iter().product()
    }

    pub fn total_loss_trace(&self) -> ScalarTrace {
        let v = (0..self.grid.len()).map(|k| self.total_loss(k)).collect();
        ScalarTrace::new(self.grid.clone(), v, Unit::Linear).expect("grid length")
    }

    pub fn effective_temperature(&self, k: usize, reference: Reference) -> Result<f64> {
        let t = integrated_cable_noise(&self.temperatures, &self.losses[k])?;
        Ok(match reference {
            Reference::Input => t,
            Reference::Output => t / self.total_loss(k),
        })
    }

    pub fn effective_temperature_trace(&self, reference: Reference) -> Result<ScalarTrace> {
        let v = (0..self.grid.len()).map(|k| self.effective_temperature(k, reference)).collect::<Result<Vec<_>>>()?;
        ScalarTrace::new(self.grid.clone(), v, Unit::Kelvin)
    }
}

/// Noise temperature of an isothermal lumped loss: `(L − 1)·T`.
pub fn lumped_effective_temperature(l_cable: f64, t_cable: f64) -> f64 {
    (l_cable - 1.0) * t_cable
}

/// Least-squares lumped temperature matching `t_eff(f) ≈ (L(f) − 1)·T`.
pub fn fit_lumped_temperature(t_eff: &ScalarTrace, l_cable: &ScalarTrace) -> Result<f64> {
    t_eff.grid.ensure_same(&l_cable.grid, "lumped temperature fit")?;
    let (mut num, mut den) = (0.0, 0.0);
    for (&t, &l) in t_eff.values.iter().zip(&l_cable.values) {
        num += (l - 1.0) * t;
        den += (l - 1.0) * (l - 1.0);
    }
    if den == 0.0 {
        return Err(Error::domain("cable loss is 0 dB everywhere; lumped temperature undefined"));
    }
    Ok(num / den)
}

/// Single loss temperature covering cable and cold attenuator together.
pub fn t_loss(l_cable: f64, t_cable: f64, l_a: f64, t_a: f64) -> Result<f64> {
    if !(l_cable >= 1.0 && l_a >= 1.0) {
        return Err(Error::domain(format!("losses must be ≥ 1 (cable {l_cable}, attenuator {l_a})")));
    }
    let den = l_a * l_cable - 1.0;
    if den == 0.0 {
        return Err(Error::domain("combined loss is unity; loss temperature undefined"));
    }
    Ok(((l_cable - 1.0) * t_cable + l_cable * (l_a - 1.0) * t_a) / den)
}
