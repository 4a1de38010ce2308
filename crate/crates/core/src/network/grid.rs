use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Strictly increasing list of positive frequencies in Hz (at least two).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Grid(format!("need at least 2 points, got {}", points.len())));
        }
        for (i, &f) in points.iter().enumerate() {
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::Grid(format!("point {i} is not a positive frequency: {f}")));
            }
            if i > 0 && f <= points[i - 1] {
                return Err(Error::Grid(format!("not strictly increasing at index {i}: {} then {f}", points[i - 1])));
            }
        }
        Ok(FrequencyGrid { points })
    }

    /// `n` evenly spaced points from `start` to `stop` inclusive.
    pub fn linspace(start: f64, stop: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Grid("linspace needs n >= 2".into()));
        }
        let step = (stop - start) / (n - 1) as f64;
        let mut pts: Vec<f64> = (0..n).map(|i| start + step * i as f64).collect();
        pts[n - 1] = stop;
        Self::new(pts)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.first() && f <= self.last()
    }

    /// Indices of grid points inside `[lo, hi]`.
    pub fn indices_in(&self, lo: f64, hi: f64) -> Vec<usize> {
        self.points.iter().enumerate().filter(|(_, &f)| f >= lo && f <= hi).map(|(i, _)| i).collect()
    }

    pub fn ensure_same(&self, other: &FrequencyGrid, ctx: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{ctx}: grids differ ({} pts {}..{} Hz vs {} pts {}..{} Hz)",
                self.len(),
                self.first(),
                self.last(),
                other.len(),
                other.first(),
                other.last()
            )))
        }
    }

    /// Bracketing index and weight for linear interpolation at `f`, or an
    /// error when `f` lies outside the grid (no extrapolation).
    pub(crate) fn locate(&self, f: f64) -> Result<(usize, f64)> {
        if !self.contains(f) {
            return Err(Error::Grid(format!("{f} Hz outside grid {}..{} Hz", self.first(), self.last())));
        }
        let pts = &self.points;
        let hi = pts.partition_point(|&p| p < f).max(1).min(pts.len() - 1);
        let lo = hi - 1;
        let w = (f - pts[lo]) / (pts[hi] - pts[lo]);
        Ok((lo, w))
    }
}

impl TryFrom<Vec<f64>> for FrequencyGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        FrequencyGrid::new(v)
    }
}

impl From<FrequencyGrid> for Vec<f64> {
    fn from(g: FrequencyGrid) -> Self {
        g.points
    }
}
