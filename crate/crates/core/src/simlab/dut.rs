use crate::error::{Error, Result};
use crate::network::{db_to_amplitude, FrequencyGrid, Mat2, TwoPortNetwork};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Piecewise-linear function of frequency given as `[f_GHz, value]`
/// breakpoints; held constant outside the first and last breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Spectrum(pub Vec<[f64; 2]>);

impl Spectrum {
    pub fn constant(v: f64) -> Self {
        Spectrum(vec![[1.0, v]])
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::invalid(format!("{what}: spectrum has no breakpoints")));
        }
        if self.0.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::invalid(format!("{what}: breakpoint frequencies must increase")));
        }
        if self.0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{what}: non-finite breakpoint")));
        }
        Ok(())
    }

    pub fn at(&self, f_hz: f64) -> f64 {
        let g = f_hz / 1e9;
        let p = &self.0;
        if g <= p[0][0] {
            return p[0][1];
        }
        let last = p[p.len() - 1];
        if g >= last[0] {
            return last[1];
        }
        let i = p.partition_point(|q| q[0] <= g);
        let ([x0, y0], [x1, y1]) = (p[i - 1], p[i]);
        y0 + (y1 - y0) * (g - x0) / (x1 - x0)
    }

    pub fn values(&self, grid: &FrequencyGrid) -> Vec<f64> {
        grid.points().iter().map(|&f| self.at(f)).collect()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Compression {
    #[default]
    None,
    /// `min(Pin + G, Psat)`.
    Hard { psat_dbm: f64 },
    /// Rapp soft limiter on output power; larger `smoothness` gives a
    /// sharper knee.
    Rapp { psat_dbm: f64, smoothness: f64 },
}

impl Compression {
    pub fn output_power(&self, pin_dbm: f64, gain_db: f64) -> f64 {
        let linear = pin_dbm + gain_db;
        match *self {
            Compression::None => linear,
            Compression::Hard { psat_dbm } => linear.min(psat_dbm),
            Compression::Rapp { psat_dbm, smoothness: p } => {
                // log-domain evaluation so large p cannot overflow
                let ln_x = (linear - psat_dbm) * std::f64::consts::LN_10 / 10.0;
                let ln_den = ln_1p_exp(p * ln_x) / p;
                psat_dbm + 10.0 * (ln_x - ln_den) / std::f64::consts::LN_10
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Compression::Rapp { smoothness, .. } if !(smoothness > 0.0) => {
                Err(Error::invalid("Rapp smoothness must be > 0"))
            }
            _ => Ok(()),
        }
    }
}

fn ln_1p_exp(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Bias point, recorded verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bias {
    pub vd_v: f64,
    pub id_ma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vg_v: Option<f64>,
}

/// Synthetic amplifier: small-signal S-matrix, scalar input-referred noise
/// temperature and an output-power compression law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutModel {
    pub name: String,
    pub gain_db: Spectrum,
    #[serde(default)]
    pub group_delay_ns: f64,
    pub noise_temperature_k: Spectrum,
    pub s11_db: Spectrum,
    #[serde(default)]
    pub s11_phase_deg: f64,
    pub s22_db: Spectrum,
    #[serde(default)]
    pub s22_phase_deg: f64,
    pub s12_db: Spectrum,
    #[serde(default)]
    pub compression: Compression,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Bias>,
}

impl DutModel {
    pub fn validate(&self) -> Result<()> {
        self.gain_db.validate("gain")?;
        self.noise_temperature_k.validate("noise temperature")?;
        for (s, n) in [(&self.s11_db, "S11"), (&self.s22_db, "S22"), (&self.s12_db, "S12")] {
            s.validate(n)?;
        }
        if self.noise_temperature_k.min() < 0.0 {
            return Err(Error::invalid("DUT noise temperature must be ≥ 0"));
        }
        if self.s11_db.max() >= 0.0 || self.s22_db.max() >= 0.0 {
            return Err(Error::invalid("DUT reflections must satisfy |Γ| < 1"));
        }
        self.compression.validate()
    }

    pub fn gain_at(&self, f: f64) -> f64 {
        self.gain_db.at(f)
    }

    pub fn noise_temperature_at(&self, f: f64) -> f64 {
        self.noise_temperature_k.at(f)
    }

    pub fn s_matrix(&self, f: f64) -> Mat2 {
        let deg = PI / 180.0;
        let tau = self.group_delay_ns * 1e-9;
        let phase = -2.0 * PI * f * tau;
        Mat2::new(
            Complex64::from_polar(db_to_amplitude(self.s11_db.at(f)), self.s11_phase_deg * deg),
            Complex64::from_polar(db_to_amplitude(self.s12_db.at(f)), phase),
            Complex64::from_polar(db_to_amplitude(self.gain_db.at(f)), phase),
            Complex64::from_polar(db_to_amplitude(self.s22_db.at(f)), self.s22_phase_deg * deg),
        )
    }

    pub fn network(&self, grid: &FrequencyGrid) -> Result<TwoPortNetwork> {
        TwoPortNetwork::from_fn(grid.clone(), |f| self.s_matrix(f))
    }

    /// Output power for input power `pin_dbm` at the DUT plane.
    pub fn output_power(&self, f: f64, pin_dbm: f64) -> f64 {
        self.compression.output_power(pin_dbm, self.gain_at(f))
    }
}
