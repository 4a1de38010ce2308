use super::grid::FrequencyGrid;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::ops::Mul;

/// Reference impedance used throughout; renormalization is not supported.
pub const REFERENCE_IMPEDANCE: f64 = 50.0;

/// Slack on the largest singular value when checking passivity.
pub const PASSIVITY_TOLERANCE: f64 = 1e-9;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A 2×2 complex matrix, row-major: `m[row][col]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mat2(pub [[Complex64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[ONE, ZERO], [ZERO, ONE]]);

    pub fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub fn det(&self) -> Complex64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d.norm() == 0.0 || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Mat2::new(m[1][1] / d, -m[0][1] / d, -m[1][0] / d, m[0][0] / d))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|z| z.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        self.0.iter().flatten().zip(other.0.iter().flatten()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Largest singular value, from the eigenvalues of SᴴS. Written in terms
    /// of entry differences so unitary matrices come out at 1 to rounding.
    pub fn max_singular_value(&self) -> f64 {
        let [[a, b], [c, d]] = self.0;
        let g11 = a.norm_sqr() + c.norm_sqr();
        let g22 = b.norm_sqr() + d.norm_sqr();
        let g12 = a.conj() * b + c.conj() * d;
        let half_gap = 0.5 * (g11 - g22);
        let lambda = 0.5 * (g11 + g22) + (half_gap * half_gap + g12.norm_sqr()).sqrt();
        lambda.sqrt()
    }

    // S <-> T with [b1; a1] = T [a2; b2], so cascades multiply left to right.

    /// S-matrix of `self` followed by `next`; `None` if either has S21 = 0.
    pub fn then(&self, next: &Mat2) -> Option<Mat2> {
        (self.s_to_t()? * next.s_to_t()?).t_to_s()
    }

    pub(crate) fn s_to_t(&self) -> Option<Mat2> {
        let s = &self.0;
        let s21 = s[1][0];
        if s21.norm() == 0.0 {
            return None;
        }
        let det = self.det();
        Some(Mat2::new(-det / s21, s[0][0] / s21, -s[1][1] / s21, ONE / s21))
    }

    pub(crate) fn t_to_s(&self) -> Option<Mat2> {
        let t = &self.0;
        let t22 = t[1][1];
        if t22.norm() == 0.0 {
            return None;
        }
        Some(Mat2::new(t[0][1] / t22, self.det() / t22, ONE / t22, -t[1][0] / t22))
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, rhs: Mat2) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

/// Per-frequency 2×2 S-parameter matrices on a shared grid.
///
/// `s[k].0[i][j]` is S(i+1)(j+1) at `grid[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPortNetwork {
    grid: FrequencyGrid,
    s: Vec<Mat2>,
    #[serde(default)]
    passive: bool,
}

impl TwoPortNetwork {
    pub fn new(grid: FrequencyGrid, s: Vec<Mat2>) -> Result<Self> {
        if grid.len() != s.len() {
            return Err(Error::invalid(format!("{} S-matrices for a {}-point grid", s.len(), grid.len())));
        }
        if let Some(k) = s.iter().position(|m| !m.is_finite()) {
            return Err(Error::invalid(format!("non-finite S-parameter at {} Hz", grid.points()[k])));
        }
        Ok(TwoPortNetwork { grid, s, passive: false })
    }

    /// Construct and check that every S-matrix is passive.
    pub fn new_passive(grid: FrequencyGrid, s: Vec<Mat2>) -> Result<Self> {
        let mut n = Self::new(grid, s)?;
        if let Some(k) = n.first_active_point() {
            return Err(Error::invalid(format!(
                "network flagged passive has singular value {} at {} Hz",
                n.s[k].max_singular_value(),
                n.grid.points()[k]
            )));
        }
        n.passive = true;
        Ok(n)
    }

    pub fn from_fn(grid: FrequencyGrid, f: impl Fn(f64) -> Mat2) -> Result<Self> {
        let s = grid.points().iter().map(|&x| f(x)).collect();
        Self::new(grid, s)
    }

    /// The ideal zero-length THRU.
    pub fn thru(grid: FrequencyGrid) -> Self {
        let s = vec![Mat2::new(ZERO, ONE, ONE, ZERO); grid.len()];
        TwoPortNetwork { grid, s, passive: true }
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn s(&self) -> &[Mat2] {
        &self.s
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn reference_impedance(&self) -> f64 {
        REFERENCE_IMPEDANCE
    }

    pub fn is_flagged_passive(&self) -> bool {
        self.passive
    }

    fn first_active_point(&self) -> Option<usize> {
        self.s.iter().position(|m| m.max_singular_value() > 1.0 + PASSIVITY_TOLERANCE)
    }

    pub fn is_passive(&self) -> bool {
        self.first_active_point().is_none()
    }

    /// One S-parameter (1-based port indices) across frequency.
    pub fn param(&self, i: usize, j: usize) -> Vec<Complex64> {
        self.s.iter().map(|m| m.0[i - 1][j - 1]).collect()
    }

    /// `20·log10|Sij|`; a zero magnitude maps to negative infinity.
    pub fn param_db(&self, i: usize, j: usize) -> Vec<f64> {
        self.s.iter().map(|m| 20.0 * m.0[i - 1][j - 1].norm().log10()).collect()
    }

    pub fn map(&self, f: impl Fn(usize, f64, &Mat2) -> Mat2) -> Result<Self> {
        let s = self.s.iter().enumerate().map(|(k, m)| f(k, self.grid.points()[k], m)).collect();
        Self::new(self.grid.clone(), s)
    }

    pub fn max_abs_diff(&self, other: &TwoPortNetwork) -> f64 {
        self.s.iter().zip(&other.s).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max)
    }

    /// Resample onto `grid` by linear interpolation of real and imaginary
    /// parts. Points outside the current grid are an error.
    pub fn resample(&self, grid: &FrequencyGrid) -> Result<Self> {
        let s = grid
            .points()
            .iter()
            .map(|&f| {
                let (lo, w) = self.grid.locate(f)?;
                let a = &self.s[lo].0;
                let b = &self.s[lo + 1].0;
                let mut out = [[ZERO; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        out[i][j] = a[i][j] * (1.0 - w) + b[i][j] * w;
                    }
                }
                Ok(Mat2(out))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid.clone(), s)
    }

    /// Transfer matrices, failing on S21 = 0.
    pub(crate) fn t_params(&self) -> Result<Vec<Mat2>> {
        self.s
            .iter()
            .zip(self.grid.points())
            .map(|(m, &f)| {
                m.s_to_t().ok_or_else(|| Error::Singular {
                    freq_hz: f,
                    what: "S21 = 0, transfer parameters undefined".into(),
                })
            })
            .collect()
    }

    pub(crate) fn from_t_params(grid: FrequencyGrid, t: &[Mat2]) -> Result<Self> {
        let s = t
            .iter()
            .zip(grid.points())
            .map(|(m, &f)| {
                m.t_to_s().ok_or_else(|| Error::Singular { freq_hz: f, what: "T22 = 0, S-parameters undefined".into() })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, s)
    }
}

/// `a` followed by `b` (port 2 of `a` connected to port 1 of `b`).
pub fn cascade(a: &TwoPortNetwork, b: &TwoPortNetwork) -> Result<TwoPortNetwork> {
    cascade_with(a, b, Execution::Sequential)
}

pub fn cascade_with(a: &TwoPortNetwork, b: &TwoPortNetwork, exec: Execution) -> Result<TwoPortNetwork> {
    a.grid.ensure_same(&b.grid, "cascade")?;
    let f = a.grid.points();
    let s = exec::try_map_indexed(a.len(), exec, |k| {
        let singular = |what: &str| Error::Singular { freq_hz: f[k], what: what.into() };
        let ta = a.s[k].s_to_t().ok_or_else(|| singular("first network has S21 = 0"))?;
        let tb = b.s[k].s_to_t().ok_or_else(|| singular("second network has S21 = 0"))?;
        (ta * tb).t_to_s().ok_or_else(|| singular("cascade has T22 = 0"))
    })?;
    let mut out = TwoPortNetwork::new(a.grid.clone(), s)?;
    out.passive = a.passive && b.passive;
    Ok(out)
}
