//! THRU-REFLECT-LINE calibration (8-term error model).
//!
//! The raw measurement of a two-port `D` is modelled as
//! `T_meas = T_in · T_D · T_out` in transfer parameters, where `T_in` is the
//! error box between VNA port 1 and the DUT plane and `T_out` the box between
//! the DUT plane and VNA port 2. With a zero-length THRU and a matched LINE
//! `diag(λ, 1/λ)`, `λ = e^{-γl}`:
//!
//! ```text
//! T_line · T_thru⁻¹ = T_in · diag(λ, 1/λ) · T_in⁻¹
//! ```
//!
//! so the columns of `T_in` are eigenvectors of the left-hand side. The two
//! column ratios fix `T_in` up to one complex scale `g` and an overall
//! transmission factor; the REFLECT seen at both ports determines `g²`, and
//! the square-root sign is picked so the implied reflect is closest to a
//! short (Γ = −1). The remaining transmission factor only splits
//! `S21_in·S21_out` between the boxes and cancels in de-embedding; it is
//! fixed by making the input box reciprocal.

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::network::{FrequencyGrid, Mat2, ScalarTrace, TwoPortNetwork, Unit};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Line phases closer than this to 0° or 180° are flagged.
pub const CONDITIONING_MARGIN_DEG: f64 = 20.0;

/// Default THRU verification tolerance, dB.
pub const DEFAULT_VERIFY_TOLERANCE_DB: f64 = 0.05;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReflectKind {
    /// Nominal Γ = −1.
    #[default]
    Short,
}

impl ReflectKind {
    pub fn nominal(self) -> Complex64 {
        match self {
            ReflectKind::Short => -ONE,
        }
    }
}

/// Raw (uncorrected) measurements of the three TRL standards.
#[derive(Debug, Clone)]
pub struct TrlStandardsMeasurement {
    pub m_thru: TwoPortNetwork,
    pub m_line: TwoPortNetwork,
    pub m_reflect_p1: Vec<Complex64>,
    pub m_reflect_p2: Vec<Complex64>,
    pub reflect_kind: ReflectKind,
}

impl TrlStandardsMeasurement {
    pub fn new(
        m_thru: TwoPortNetwork,
        m_line: TwoPortNetwork,
        m_reflect_p1: Vec<Complex64>,
        m_reflect_p2: Vec<Complex64>,
    ) -> Result<Self> {
        m_thru.grid().ensure_same(m_line.grid(), "TRL THRU vs LINE")?;
        let n = m_thru.len();
        if m_reflect_p1.len() != n || m_reflect_p2.len() != n {
            return Err(Error::GridMismatch(format!(
                "reflect traces have {} / {} points, THRU has {n}",
                m_reflect_p1.len(),
                m_reflect_p2.len()
            )));
        }
        Ok(TrlStandardsMeasurement { m_thru, m_line, m_reflect_p1, m_reflect_p2, reflect_kind: ReflectKind::Short })
    }

    /// Take the port-1/port-2 reflections from the S11/S22 of a two-port
    /// REFLECT measurement.
    pub fn with_reflect_network(
        m_thru: TwoPortNetwork,
        m_line: TwoPortNetwork,
        m_reflect: &TwoPortNetwork,
    ) -> Result<Self> {
        m_thru.grid().ensure_same(m_reflect.grid(), "TRL THRU vs REFLECT")?;
        Self::new(m_thru, m_line, m_reflect.param(1, 1), m_reflect.param(2, 2))
    }

    pub fn grid(&self) -> &FrequencyGrid {
        self.m_thru.grid()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineConditioning {
    pub freq_hz: f64,
    /// Electrical phase of the LINE relative to the THRU, folded into [0°, 180°].
    pub phase_deg: f64,
    pub ill_conditioned: bool,
}

/// Solved 8-term error model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub input_box: TwoPortNetwork,
    pub output_box: TwoPortNetwork,
    /// `e^{-γl}` of the LINE per frequency.
    pub line_factor: Vec<Complex64>,
    /// Reflect coefficient implied by the solution.
    pub reflect_implied: Vec<Complex64>,
    pub conditioning: Vec<LineConditioning>,
}

impl ErrorModel {
    /// Error boxes equal to ideal THRU halves.
    pub fn identity(grid: FrequencyGrid) -> Self {
        let n = grid.len();
        let conditioning = grid
            .points()
            .iter()
            .map(|&f| LineConditioning { freq_hz: f, phase_deg: 90.0, ill_conditioned: false })
            .collect();
        ErrorModel {
            input_box: TwoPortNetwork::thru(grid.clone()),
            output_box: TwoPortNetwork::thru(grid),
            line_factor: vec![Complex64::new(0.0, -1.0); n],
            reflect_implied: vec![-ONE; n],
            conditioning,
        }
    }

    pub fn grid(&self) -> &FrequencyGrid {
        self.input_box.grid()
    }

    /// `γl` per frequency (principal logarithm).
    pub fn gamma_l(&self) -> Vec<Complex64> {
        self.line_factor.iter().map(|l| -l.ln()).collect()
    }

    pub fn ill_conditioned_freqs(&self) -> Vec<f64> {
        self.conditioning.iter().filter(|c| c.ill_conditioned).map(|c| c.freq_hz).collect()
    }

    /// Insertion loss of each error box, dB (positive = loss).
    pub fn box_losses_db(&self) -> (ScalarTrace, ScalarTrace) {
        let loss = |n: &TwoPortNetwork| {
            let v = n.param_db(2, 1).into_iter().map(|d| -d).collect();
            ScalarTrace::new(n.grid().clone(), v, Unit::Db).expect("grid length")
        };
        (loss(&self.input_box), loss(&self.output_box))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let em: ErrorModel = serde_json::from_str(text)?;
        em.input_box.grid().ensure_same(em.output_box.grid(), "error model boxes")?;
        let n = em.input_box.len();
        if em.line_factor.len() != n || em.conditioning.len() != n || em.reflect_implied.len() != n {
            return Err(Error::invalid("error model arrays do not match the grid"));
        }
        Ok(em)
    }
}

struct PointSolution {
    t_in: Mat2,
    t_out: Mat2,
    lambda: Complex64,
    reflect: Complex64,
}

fn eigenvector(p: &Mat2, mu: Complex64) -> (Complex64, Complex64) {
    let m = &p.0;
    let a = (m[0][1], mu - m[0][0]);
    let b = (mu - m[1][1], m[1][0]);
    if a.0.norm_sqr() + a.1.norm_sqr() >= b.0.norm_sqr() + b.1.norm_sqr() {
        a
    } else {
        b
    }
}

fn solve_point(
    t_thru: Mat2,
    t_line: Mat2,
    w1: Complex64,
    w2: Complex64,
    kind: ReflectKind,
    freq_hz: f64,
) -> Result<PointSolution> {
    let cal_err = |msg: &str| Error::Calibration { freq_hz, msg: msg.into() };
    let p = t_line * t_thru.inverse().ok_or_else(|| cal_err("THRU transfer matrix is singular"))?;

    let tr = p.0[0][0] + p.0[1][1];
    let root = (tr * tr - 4.0 * p.det()).sqrt();
    let mu_a = (tr + root) / 2.0;
    let mu_b = (tr - root) / 2.0;
    let scale = mu_a.norm().max(mu_b.norm()).max(1.0);
    if root.norm() <= 1e-9 * scale {
        return Err(cal_err("degenerate LINE eigenvalues (line phase 0° or 180° with no loss)"));
    }
    let va = eigenvector(&p, mu_a);
    let vb = eigenvector(&p, mu_b);

    // Column 2 of T_in is (S11_in, 1)/S21_in: the eigenvector with the
    // smaller top/bottom ratio. Column 1 has a small bottom/top ratio.
    let ((c1, lambda), c2) =
        if va.0.norm() * vb.1.norm() < vb.0.norm() * va.1.norm() { ((vb, mu_b), va) } else { ((va, mu_a), vb) };
    if c1.0.norm() == 0.0 || c2.1.norm() == 0.0 {
        return Err(cal_err("eigenvector normalisation failed"));
    }
    let q1 = c1.1 / c1.0;
    let r2 = c2.0 / c2.1;

    let t = &t_thru.0;
    let (t11, t12, t21, t22) = (t[0][0], t[0][1], t[1][0], t[1][1]);
    let u1 = (w1 - r2) / (ONE - q1 * w1);
    let v = ((t21 - q1 * t11) + w2 * (t22 - q1 * t12)) / ((t11 - r2 * t21) + w2 * (t12 - r2 * t22));
    if !u1.is_finite() || !v.is_finite() || v.norm() == 0.0 {
        return Err(cal_err("REFLECT measurements inconsistent with THRU/LINE"));
    }
    let gamma0 = (u1 * v).sqrt();
    let nominal = kind.nominal();
    let reflect = if (gamma0 - nominal).norm() <= (-gamma0 - nominal).norm() { gamma0 } else { -gamma0 };
    if reflect.norm() == 0.0 {
        return Err(cal_err("implied reflect is zero"));
    }
    let g = u1 / reflect;

    let n = Mat2::new(g, r2, q1 * g, ONE);
    let det_n = n.det();
    if det_n.norm() == 0.0 {
        return Err(cal_err("input error box is singular"));
    }
    // 1/x22 = S21_in; principal root keeps Re(S21_in) >= 0.
    let x22 = ONE / det_n.sqrt();
    let t_in = Mat2::new(n.0[0][0] * x22, n.0[0][1] * x22, n.0[1][0] * x22, x22);
    let t_out = t_in.inverse().ok_or_else(|| cal_err("input error box is singular"))? * t_thru;
    Ok(PointSolution { t_in, t_out, lambda, reflect })
}

fn fold_phase_deg(lambda: Complex64) -> f64 {
    let phi = (-lambda.arg().to_degrees()).rem_euclid(360.0);
    if phi > 180.0 {
        360.0 - phi
    } else {
        phi
    }
}

pub fn solve_trl(meas: &TrlStandardsMeasurement) -> Result<ErrorModel> {
    solve_trl_with(meas, Execution::default())
}

pub fn solve_trl_with(meas: &TrlStandardsMeasurement, exec: Execution) -> Result<ErrorModel> {
    let grid = meas.grid().clone();
    let t_thru = meas.m_thru.t_params()?;
    let t_line = meas.m_line.t_params()?;
    let f = grid.points();
    let sols = exec::try_map_indexed(grid.len(), exec, |k| {
        solve_point(t_thru[k], t_line[k], meas.m_reflect_p1[k], meas.m_reflect_p2[k], meas.reflect_kind, f[k])
    })?;
    let t_in: Vec<Mat2> = sols.iter().map(|s| s.t_in).collect();
    let t_out: Vec<Mat2> = sols.iter().map(|s| s.t_out).collect();
    let conditioning = sols
        .iter()
        .zip(f)
        .map(|(s, &freq_hz)| {
            let phase_deg = fold_phase_deg(s.lambda);
            LineConditioning {
                freq_hz,
                phase_deg,
                ill_conditioned: !(CONDITIONING_MARGIN_DEG..=180.0 - CONDITIONING_MARGIN_DEG).contains(&phase_deg),
            }
        })
        .collect();
    Ok(ErrorModel {
        input_box: TwoPortNetwork::from_t_params(grid.clone(), &t_in)?,
        output_box: TwoPortNetwork::from_t_params(grid, &t_out)?,
        line_factor: sols.iter().map(|s| s.lambda).collect(),
        reflect_implied: sols.iter().map(|s| s.reflect).collect(),
        conditioning,
    })
}

/// Remove the error boxes: `T_in⁻¹ · T_raw · T_out⁻¹`.
pub fn deembed(em: &ErrorModel, raw: &TwoPortNetwork) -> Result<TwoPortNetwork> {
    deembed_with(em, raw, Execution::Sequential)
}

pub fn deembed_with(em: &ErrorModel, raw: &TwoPortNetwork, exec: Execution) -> Result<TwoPortNetwork> {
    em.grid().ensure_same(raw.grid(), "de-embed")?;
    let t_in = em.input_box.t_params()?;
    let t_out = em.output_box.t_params()?;
    let t_raw = raw.t_params()?;
    let f = raw.grid().points();
    let t = exec::try_map_indexed(raw.len(), exec, |k| {
        let singular = |what: &str| Error::Singular { freq_hz: f[k], what: what.into() };
        let a = t_in[k].inverse().ok_or_else(|| singular("input error box not invertible"))?;
        let b = t_out[k].inverse().ok_or_else(|| singular("output error box not invertible"))?;
        Ok::<_, Error>(a * t_raw[k] * b)
    })?;
    TwoPortNetwork::from_t_params(raw.grid().clone(), &t)
}

/// Forward-embed a DUT between the model's error boxes.
pub fn embed(em: &ErrorModel, dut: &TwoPortNetwork) -> Result<TwoPortNetwork> {
    let inner = crate::network::cascade(&em.input_box, dut)?;
    crate::network::cascade(&inner, &em.output_box)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyResult {
    /// `20·log10|S21|` of the corrected THRU, dB (ideal 0).
    pub residual: ScalarTrace,
    pub max_abs_residual_db: f64,
    pub tolerance_db: f64,
    pub pass: bool,
}

/// Re-measure the THRU, correct it and check the insertion loss is 0 dB.
pub fn verify_cal(em: &ErrorModel, m_thru: &TwoPortNetwork, tolerance_db: f64) -> Result<VerifyResult> {
    let corrected = deembed(em, m_thru)?;
    let residual = ScalarTrace::new(corrected.grid().clone(), corrected.param_db(2, 1), Unit::Db)?;
    let max_abs = residual.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(VerifyResult { residual, max_abs_residual_db: max_abs, tolerance_db, pass: max_abs <= tolerance_db })
}

/// Reflection CSV: `freq_hz,re_p1,im_p1,re_p2,im_p2`, `#` comments allowed.
pub fn parse_reflect_csv(text: &str) -> Result<(FrequencyGrid, Vec<Complex64>, Vec<Complex64>)> {
    let mut f = Vec::new();
    let mut p1 = Vec::new();
    let mut p2 = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("freq") {
            continue;
        }
        let cols = line
            .split(',')
            .map(|c| {
                c.trim().parse::<f64>().map_err(|_| Error::Parse { line: idx + 1, msg: format!("not numeric: '{c}'") })
            })
            .collect::<Result<Vec<_>>>()?;
        if cols.len() != 5 {
            return Err(Error::Parse { line: idx + 1, msg: format!("expected 5 columns, found {}", cols.len()) });
        }
        f.push(cols[0]);
        p1.push(Complex64::new(cols[1], cols[2]));
        p2.push(Complex64::new(cols[3], cols[4]));
    }
    Ok((FrequencyGrid::new(f)?, p1, p2))
}

pub fn write_reflect_csv(grid: &FrequencyGrid, p1: &[Complex64], p2: &[Complex64]) -> String {
    let mut out = String::from("freq_hz,re_p1,im_p1,re_p2,im_p2\n");
    for ((f, a), b) in grid.points().iter().zip(p1).zip(p2) {
        out.push_str(&format!("{f},{},{},{},{}\n", a.re, a.im, b.re, b.im));
    }
    out
}
