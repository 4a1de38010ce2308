use super::grid::FrequencyGrid;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "dB")]
    Db,
    #[serde(rename = "dBm")]
    Dbm,
    #[serde(rename = "dBm_per_Hz")]
    DbmPerHz,
    #[serde(rename = "kelvin")]
    Kelvin,
    #[serde(rename = "linear")]
    Linear,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Db => "dB",
            Unit::Dbm => "dBm",
            Unit::DbmPerHz => "dBm_per_Hz",
            Unit::Kelvin => "kelvin",
            Unit::Linear => "linear",
        }
    }

    pub fn is_logarithmic(self) -> bool {
        matches!(self, Unit::Db | Unit::Dbm | Unit::DbmPerHz)
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Unit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dB" => Ok(Unit::Db),
            "dBm" => Ok(Unit::Dbm),
            "dBm_per_Hz" => Ok(Unit::DbmPerHz),
            "kelvin" | "K" => Ok(Unit::Kelvin),
            "linear" => Ok(Unit::Linear),
            other => Err(Error::invalid(format!("unknown unit '{other}'"))),
        }
    }
}

/// Real-valued per-frequency trace with a unit tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarTrace {
    pub grid: FrequencyGrid,
    #[serde(deserialize_with = "nullable_values")]
    pub values: Vec<f64>,
    pub unit: Unit,
}

/// JSON has no NaN; serde_json writes it as `null`, read it back as NaN.
fn nullable_values<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    let raw: Vec<Option<f64>> = Deserialize::deserialize(d)?;
    Ok(raw.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
}

impl ScalarTrace {
    pub fn new(grid: FrequencyGrid, values: Vec<f64>, unit: Unit) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::invalid(format!("{} values for a {}-point grid", values.len(), grid.len())));
        }
        Ok(ScalarTrace { grid, values, unit })
    }

    pub fn constant(grid: FrequencyGrid, value: f64, unit: Unit) -> Self {
        let values = vec![value; grid.len()];
        ScalarTrace { grid, values, unit }
    }

    pub fn from_fn(grid: FrequencyGrid, unit: Unit, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().iter().map(|&x| f(x)).collect();
        ScalarTrace { grid, values, unit }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn freqs(&self) -> &[f64] {
        self.grid.points()
    }

    pub fn map(&self, unit: Unit, f: impl Fn(f64) -> f64) -> Self {
        ScalarTrace { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect(), unit }
    }

    /// Elementwise combination; grids must be identical.
    pub fn zip_with(&self, other: &ScalarTrace, unit: Unit, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.ensure_same(&other.grid, "trace arithmetic")?;
        Ok(ScalarTrace {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
            unit,
        })
    }

    /// dB-family values to linear power ratios (10^(v/10)).
    pub fn to_linear(&self) -> Result<Self> {
        if !self.unit.is_logarithmic() {
            return Err(Error::invalid(format!("cannot convert {} to linear", self.unit)));
        }
        Ok(self.map(Unit::Linear, |v| 10f64.powf(v / 10.0)))
    }

    /// Linear power ratios to a dB-family unit.
    pub fn to_db(&self, unit: Unit) -> Result<Self> {
        if self.unit != Unit::Linear || !unit.is_logarithmic() {
            return Err(Error::invalid(format!("cannot convert {} to {unit}", self.unit)));
        }
        let values = self.values.iter().map(|&v| super::units::power_to_db(v)).collect::<Result<Vec<_>>>()?;
        ScalarTrace::new(self.grid.clone(), values, unit)
    }

    pub fn resample(&self, grid: &FrequencyGrid) -> Result<Self> {
        let values = grid
            .points()
            .iter()
            .map(|&f| {
                let (lo, w) = self.grid.locate(f)?;
                Ok(self.values[lo] * (1.0 - w) + self.values[lo + 1] * w)
            })
            .collect::<Result<Vec<_>>>()?;
        ScalarTrace::new(grid.clone(), values, self.unit)
    }

    /// Value at `f` by linear interpolation.
    pub fn at(&self, f: f64) -> Result<f64> {
        let (lo, w) = self.grid.locate(f)?;
        Ok(self.values[lo] * (1.0 - w) + self.values[lo + 1] * w)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# unit: {}\nfreq_hz,value\n", self.unit);
        for (f, v) in self.grid.points().iter().zip(&self.values) {
            out.push_str(&format!("{f},{v}\n"));
        }
        out
    }

    /// Parse `# unit: <unit>` followed by `freq_hz,value` rows. A column
    /// header row is optional.
    pub fn from_csv(text: &str) -> Result<Self> {
        Self::parse_csv(text, None)
    }

    /// Like [`from_csv`](Self::from_csv) but `unit` applies when the file
    /// has no `# unit:` header (e.g. `freq_hz,enr_db` tables).
    pub fn from_csv_or(text: &str, unit: Unit) -> Result<Self> {
        Self::parse_csv(text, Some(unit))
    }

    fn parse_csv(text: &str, default_unit: Option<Unit>) -> Result<Self> {
        let mut unit = None;
        let mut freqs = Vec::new();
        let mut values = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(u) = rest.trim().strip_prefix("unit:") {
                    unit = Some(u.parse::<Unit>().map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?);
                }
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(Error::Parse { line: line_no, msg: format!("expected 2 columns, found {}", cols.len()) });
            }
            let (f, v) = match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                (Ok(f), Ok(v)) => (f, v),
                _ if freqs.is_empty() && cols[0].parse::<f64>().is_err() => continue,
                _ => return Err(Error::Parse { line: line_no, msg: format!("not numeric: '{line}'") }),
            };
            if let Some(&prev) = freqs.last() {
                if f <= prev {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("frequency {f} not above previous {prev}"),
                    });
                }
            }
            freqs.push(f);
            values.push(v);
        }
        let unit = unit.or(default_unit).ok_or(Error::Parse { line: 1, msg: "missing '# unit:' header".into() })?;
        let grid = FrequencyGrid::new(freqs)?;
        ScalarTrace::new(grid, values, unit)
    }
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<ScalarTrace> {
    ScalarTrace::from_csv(&std::fs::read_to_string(path)?)
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &ScalarTrace) -> Result<()> {
    std::fs::write(path, trace.to_csv())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_round_trip() {
        let g = FrequencyGrid::linspace(2e9, 10e9, 17).unwrap();
        let t = ScalarTrace::from_fn(g, Unit::Kelvin, |f| 3.0 + f / 1e10 + 1.0 / 3.0);
        let back = ScalarTrace::from_csv(&t.to_csv()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn csv_header_row_optional_and_errors_carry_line() {
        let t = ScalarTrace::from_csv("# unit: dB\n1e9,1\n2e9,2\n").unwrap();
        assert_eq!(t.values, vec![1.0, 2.0]);
        match ScalarTrace::from_csv("# unit: dB\nfreq_hz,value\n1e9,1\n2e9,2,3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(ScalarTrace::from_csv("1e9,1\n2e9,2\n").is_err());
    }

    #[test]
    fn arithmetic_needs_identical_grids() {
        let a = ScalarTrace::constant(FrequencyGrid::new(vec![1.0, 2.0]).unwrap(), 1.0, Unit::Db);
        let b = ScalarTrace::constant(FrequencyGrid::new(vec![1.0, 3.0]).unwrap(), 1.0, Unit::Db);
        assert!(a.zip_with(&b, Unit::Db, |x, y| x + y).is_err());
        let b2 = b.resample(&FrequencyGrid::new(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(a.zip_with(&b2, Unit::Db, |x, y| x + y).unwrap().values, vec![2.0, 2.0]);
    }

    proptest! {
        #[test]
        fn unit_conversion_involutive(vals in proptest::collection::vec(-150.0f64..60.0, 2..20)) {
            let n = vals.len();
            let g = FrequencyGrid::linspace(1e9, 2e9, n).unwrap();
            let t = ScalarTrace::new(g, vals.clone(), Unit::Dbm).unwrap();
            let back = t.to_linear().unwrap().to_db(Unit::Dbm).unwrap();
            for (a, b) in vals.iter().zip(&back.values) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
