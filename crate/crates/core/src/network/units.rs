//! Decibel conventions.
//!
//! Power quantities use 10·log10, amplitude quantities (S-parameter
//! magnitudes) use 20·log10.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DbKind {
    Power,
    Amplitude,
}

impl DbKind {
    fn factor(self) -> f64 {
        match self {
            DbKind::Power => 10.0,
            DbKind::Amplitude => 20.0,
        }
    }

    pub fn to_db(self, linear: f64) -> Result<f64> {
        if !(linear > 0.0) || !linear.is_finite() {
            return Err(Error::domain(format!("dB conversion needs a finite positive ratio, got {linear}")));
        }
        Ok(self.factor() * linear.log10())
    }

    pub fn from_db(self, db: f64) -> f64 {
        10f64.powf(db / self.factor())
    }
}

pub fn power_to_db(ratio: f64) -> Result<f64> {
    DbKind::Power.to_db(ratio)
}

pub fn db_to_power(db: f64) -> f64 {
    DbKind::Power.from_db(db)
}

pub fn amplitude_to_db(ratio: f64) -> Result<f64> {
    DbKind::Amplitude.to_db(ratio)
}

pub fn db_to_amplitude(db: f64) -> f64 {
    DbKind::Amplitude.from_db(db)
}
