use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

const CU_RRR100_CSV: &str = include_str!("../../data/cu_rrr100.csv");
const BECU_CSV: &str = include_str!("../../data/becu.csv");

pub const CU_RRR100: &str = "cu_rrr100";
pub const BECU: &str = "becu";

/// Tabulated thermal conductivity and electrical resistivity.
///
/// Both properties are interpolated linearly in log-log space, so each
/// table segment is a power law `k = k_i (T/T_i)^n`. The conductivity
/// integral and its inverse are evaluated in closed form per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MaterialSpec", into = "MaterialSpec")]
pub struct MaterialProperties {
    name: String,
    temperature_k: Vec<f64>,
    k: Vec<f64>,
    rho: Vec<f64>,
    /// Θ(T_i) − Θ(T_0) at each table node.
    theta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum MaterialSpec {
    Builtin(String),
    Table { name: String, temperature_k: Vec<f64>, k_w_per_m_k: Vec<f64>, rho_ohm_m: Vec<f64> },
}

impl TryFrom<MaterialSpec> for MaterialProperties {
    type Error = Error;
    fn try_from(spec: MaterialSpec) -> Result<Self> {
        match spec {
            MaterialSpec::Builtin(name) => MaterialProperties::builtin(&name),
            MaterialSpec::Table { name, temperature_k, k_w_per_m_k, rho_ohm_m } => {
                MaterialProperties::new(name, temperature_k, k_w_per_m_k, rho_ohm_m)
            }
        }
    }
}

impl From<MaterialProperties> for MaterialSpec {
    fn from(m: MaterialProperties) -> Self {
        if let Ok(b) = MaterialProperties::builtin(&m.name) {
            if b == m {
                return MaterialSpec::Builtin(m.name);
            }
        }
        MaterialSpec::Table { name: m.name, temperature_k: m.temperature_k, k_w_per_m_k: m.k, rho_ohm_m: m.rho }
    }
}

fn exponent(y0: f64, y1: f64, x0: f64, x1: f64) -> f64 {
    (y1 / y0).ln() / (x1 / x0).ln()
}

/// ∫_{t0}^{t} k0 (τ/t0)^n dτ
fn segment_integral(k0: f64, t0: f64, n: f64, t: f64) -> f64 {
    let m = n + 1.0;
    if m.abs() < 1e-12 {
        k0 * t0 * (t / t0).ln()
    } else {
        k0 * t0 / m * ((t / t0).powf(m) - 1.0)
    }
}

fn segment_inverse(k0: f64, t0: f64, n: f64, dtheta: f64) -> f64 {
    let m = n + 1.0;
    if m.abs() < 1e-12 {
        t0 * (dtheta / (k0 * t0)).exp()
    } else {
        t0 * (1.0 + m * dtheta / (k0 * t0)).powf(1.0 / m)
    }
}

impl MaterialProperties {
    pub fn new(name: impl Into<String>, temperature_k: Vec<f64>, k: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let bad = |msg: String| Error::Material(format!("{name}: {msg}"));
        if temperature_k.len() < 2 {
            return Err(bad("property table needs at least two rows".into()));
        }
        if k.len() != temperature_k.len() || rho.len() != temperature_k.len() {
            return Err(bad("column lengths differ".into()));
        }
        if temperature_k.windows(2).any(|w| w[1] <= w[0]) || temperature_k[0] <= 0.0 {
            return Err(bad("temperatures must be positive and strictly increasing".into()));
        }
        if k.iter().chain(&rho).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(bad("k and rho must be positive".into()));
        }
        let mut theta = vec![0.0; temperature_k.len()];
        for i in 1..temperature_k.len() {
            let n = exponent(k[i - 1], k[i], temperature_k[i - 1], temperature_k[i]);
            theta[i] = theta[i - 1] + segment_integral(k[i - 1], temperature_k[i - 1], n, temperature_k[i]);
        }
        Ok(MaterialProperties { name, temperature_k, k, rho, theta })
    }

    /// Material with temperature-independent properties over `[t_min, t_max]`.
    pub fn constant(name: impl Into<String>, k: f64, rho: f64, t_min: f64, t_max: f64) -> Result<Self> {
        Self::new(name, vec![t_min, t_max], vec![k, k], vec![rho, rho])
    }

    pub fn from_csv(name: impl Into<String>, text: &str) -> Result<Self> {
        let (mut t, mut k, mut rho) = (Vec::new(), Vec::new(), Vec::new());
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("temperature") {
                continue;
            }
            let cols = line
                .split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse { line: idx + 1, msg: format!("not numeric: '{c}'") })
                })
                .collect::<Result<Vec<_>>>()?;
            if cols.len() != 3 {
                return Err(Error::Parse { line: idx + 1, msg: format!("expected 3 columns, found {}", cols.len()) });
            }
            t.push(cols[0]);
            k.push(cols[1]);
            rho.push(cols[2]);
        }
        Self::new(name, t, k, rho)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("temperature_k,k_w_per_m_k,rho_ohm_m\n");
        for i in 0..self.temperature_k.len() {
            out.push_str(&format!("{},{},{}\n", self.temperature_k[i], self.k[i], self.rho[i]));
        }
        out
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            CU_RRR100 => Self::from_csv(CU_RRR100, CU_RRR100_CSV),
            BECU => Self::from_csv(BECU, BECU_CSV),
            other => Err(Error::Material(format!("unknown built-in material '{other}'"))),
        }
    }

    pub fn copper_rrr100() -> Self {
        Self::builtin(CU_RRR100).expect("bundled table is valid")
    }

    pub fn beryllium_copper() -> Self {
        Self::builtin(BECU).expect("bundled table is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn range(&self) -> (f64, f64) {
        (self.temperature_k[0], *self.temperature_k.last().unwrap())
    }

    fn check_range(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.range();
        if t.is_finite() && t >= lo && t <= hi {
            Ok(())
        } else {
            Err(Error::Material(format!("{}: temperature {t} K outside table range [{lo}, {hi}] K", self.name)))
        }
    }

    fn segment(&self, t: f64) -> usize {
        let i = self.temperature_k.partition_point(|&x| x <= t);
        i.saturating_sub(1).min(self.temperature_k.len() - 2)
    }

    fn interp(&self, col: &[f64], t: f64) -> Result<f64> {
        self.check_range(t)?;
        let i = self.segment(t);
        let n = exponent(col[i], col[i + 1], self.temperature_k[i], self.temperature_k[i + 1]);
        Ok(col[i] * (t / self.temperature_k[i]).powf(n))
    }

    /// Thermal conductivity, W/(m·K).
    pub fn conductivity(&self, t: f64) -> Result<f64> {
        self.interp(&self.k, t)
    }

    /// Electrical resistivity, Ω·m.
    pub fn resistivity(&self, t: f64) -> Result<f64> {
        self.interp(&self.rho, t)
    }

    /// Θ(T) = ∫ k dT from the bottom of the table, W/m.
    pub fn conductivity_integral(&self, t: f64) -> Result<f64> {
        self.check_range(t)?;
        let i = self.segment(t);
        let (t0, k0) = (self.temperature_k[i], self.k[i]);
        let n = exponent(k0, self.k[i + 1], t0, self.temperature_k[i + 1]);
        Ok(self.theta[i] + segment_integral(k0, t0, n, t))
    }

    /// Temperature whose conductivity integral equals `theta`.
    pub fn inverse_conductivity_integral(&self, theta: f64) -> Result<f64> {
        let top = *self.theta.last().unwrap();
        if !(theta >= 0.0 && theta <= top) {
            return Err(Error::Material(format!("{}: conductivity integral {theta} out of range", self.name)));
        }
        let i = self.theta.partition_point(|&x| x <= theta).saturating_sub(1).min(self.theta.len() - 2);
        let (t0, k0) = (self.temperature_k[i], self.k[i]);
        let n = exponent(k0, self.k[i + 1], t0, self.temperature_k[i + 1]);
        let t = segment_inverse(k0, t0, n, theta - self.theta[i]);
        Ok(t.clamp(t0, self.temperature_k[i + 1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bundled_tables_load() {
        let cu = MaterialProperties::copper_rrr100();
        let becu = MaterialProperties::beryllium_copper();
        assert_eq!(cu.range(), (4.0, 300.0));
        assert_relative_eq!(cu.conductivity(300.0).unwrap(), 396.0);
        // RRR = ρ(300 K)/ρ(4 K)
        let rrr = cu.resistivity(300.0).unwrap() / cu.resistivity(4.0).unwrap();
        assert!((rrr - 100.0).abs() < 1.0);
        assert!(becu.resistivity(4.0).unwrap() > cu.resistivity(296.0).unwrap());
    }

    #[test]
    fn power_law_segment_is_exact() {
        // k = 2T on [1, 10]: Θ(T) = T² − 1
        let m = MaterialProperties::new("lin", vec![1.0, 10.0], vec![2.0, 20.0], vec![1.0, 1.0]).unwrap();
        assert_relative_eq!(m.conductivity(5.0).unwrap(), 10.0, max_relative = 1e-14);
        assert_relative_eq!(m.conductivity_integral(7.0).unwrap(), 48.0, max_relative = 1e-13);
        assert_relative_eq!(m.inverse_conductivity_integral(48.0).unwrap(), 7.0, max_relative = 1e-13);
    }

    #[test]
    fn reciprocal_segment_uses_log_form() {
        // k = 10/T: Θ = 10 ln(T/1)
        let m = MaterialProperties::new("inv", vec![1.0, 10.0], vec![10.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert_relative_eq!(m.conductivity_integral(4.0).unwrap(), 10.0 * 4f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(m.inverse_conductivity_integral(10.0 * 4f64.ln()).unwrap(), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn integral_inverse_round_trip_on_bundled_tables() {
        for m in [MaterialProperties::copper_rrr100(), MaterialProperties::beryllium_copper()] {
            let mut t = 4.0;
            while t <= 300.0 {
                let th = m.conductivity_integral(t).unwrap();
                assert_relative_eq!(m.inverse_conductivity_integral(th).unwrap(), t, max_relative = 1e-10);
                t += 3.7;
            }
        }
    }

    #[test]
    fn out_of_range_rejected() {
        let m = MaterialProperties::beryllium_copper();
        assert!(matches!(m.conductivity(2.0), Err(Error::Material(_))));
        assert!(m.conductivity_integral(301.0).is_err());
    }

    #[test]
    fn invalid_tables_rejected() {
        assert!(MaterialProperties::new("x", vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(MaterialProperties::new("x", vec![1.0, 2.0], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(MaterialProperties::from_csv("x", "temperature_k,k,rho\n1,2\n").is_err());
    }

    #[test]
    fn serde_uses_builtin_name() {
        let json = serde_json::to_string(&MaterialProperties::beryllium_copper()).unwrap();
        assert_eq!(json, "\"becu\"");
        let custom = MaterialProperties::constant("c", 1.0, 2.0, 1.0, 300.0).unwrap();
        let back: MaterialProperties = serde_json::from_str(&serde_json::to_string(&custom).unwrap()).unwrap();
        assert_eq!(back, custom);
    }
}
