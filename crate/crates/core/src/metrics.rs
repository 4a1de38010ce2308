//! Figures of merit computed from corrected traces and power sweeps.

use crate::error::{Error, Result};
use crate::network::{FrequencyGrid, ScalarTrace, Unit};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub f_low_hz: f64,
    pub f_high_hz: f64,
}

impl BandSpec {
    pub fn new(f_low_hz: f64, f_high_hz: f64) -> Result<Self> {
        if !(f_low_hz > 0.0 && f_low_hz < f_high_hz) {
            return Err(Error::invalid(format!("band needs 0 < f_low < f_high, got [{f_low_hz}, {f_high_hz}]")));
        }
        Ok(BandSpec { f_low_hz, f_high_hz })
    }

    pub fn ghz(lo: f64, hi: f64) -> Result<Self> {
        Self::new(lo * 1e9, hi * 1e9)
    }

    /// Grid indices inside the band; errors if the band leaves the grid.
    pub fn indices(&self, grid: &FrequencyGrid) -> Result<Vec<usize>> {
        // allow for decimal rounding of band edges given in GHz
        let slack = 1e-9 * self.f_high_hz;
        if self.f_low_hz < grid.first() - slack || self.f_high_hz > grid.last() + slack {
            return Err(Error::Grid(format!(
                "band [{}, {}] Hz outside grid [{}, {}] Hz",
                self.f_low_hz,
                self.f_high_hz,
                grid.first(),
                grid.last()
            )));
        }
        let idx = grid.indices_in(self.f_low_hz - slack, self.f_high_hz + slack);
        if idx.is_empty() {
            return Err(Error::Grid("no grid points inside band".into()));
        }
        Ok(idx)
    }
}

/// Max − min of `gain` over the band.
pub fn gain_flatness(gain: &ScalarTrace, band: &BandSpec) -> Result<f64> {
    let (lo, hi) = band_extrema(gain, band)?;
    Ok(hi - lo)
}

pub fn band_extrema(trace: &ScalarTrace, band: &BandSpec) -> Result<(f64, f64)> {
    let idx = band.indices(&trace.grid)?;
    Ok(idx
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(trace.values[i]), hi.max(trace.values[i]))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Below,
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compliance {
    pub pass: bool,
    pub violations: Vec<f64>,
}

/// Strict comparison of every in-band point against `threshold`.
pub fn band_compliance(trace: &ScalarTrace, threshold: f64, relation: Relation, band: &BandSpec) -> Result<Compliance> {
    let violations: Vec<f64> = band
        .indices(&trace.grid)?
        .into_iter()
        .filter(|&i| {
            let v = trace.values[i];
            !match relation {
                Relation::Below => v < threshold,
                Relation::Above => v > threshold,
            }
        })
        .map(|i| trace.grid.points()[i])
        .collect();
    Ok(Compliance { pass: violations.is_empty(), violations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSweep {
    pub freq_hz: f64,
    pub pin_dbm: Vec<f64>,
    pub pout_dbm: Vec<f64>,
}

pub const MIN_SWEEP_POINTS: usize = 8;

impl PowerSweep {
    pub fn new(freq_hz: f64, pin_dbm: Vec<f64>, pout_dbm: Vec<f64>) -> Result<Self> {
        if pin_dbm.len() != pout_dbm.len() {
            return Err(Error::invalid("input and output power columns differ in length"));
        }
        if pin_dbm.len() < MIN_SWEEP_POINTS {
            return Err(Error::invalid(format!("power sweep needs ≥ {MIN_SWEEP_POINTS} points")));
        }
        if pin_dbm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("input powers must be strictly increasing"));
        }
        if pin_dbm.iter().chain(&pout_dbm).any(|v| !v.is_finite()) {
            return Err(Error::invalid("power sweep contains non-finite values"));
        }
        Ok(PowerSweep { freq_hz, pin_dbm, pout_dbm })
    }

    /// `# freq_hz: <f>` line, then `pin_dbm,pout_dbm` rows.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut freq = None;
        let (mut pin, mut pout) = (Vec::new(), Vec::new());
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let perr = |msg: String| Error::Parse { line: idx + 1, msg };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("freq_hz:") {
                    freq = Some(v.trim().parse::<f64>().map_err(|_| perr(format!("bad frequency '{v}'")))?);
                }
                continue;
            }
            if line.starts_with("pin") {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(perr(format!("expected 2 columns, found {}", cols.len())));
            }
            match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    pin.push(a);
                    pout.push(b);
                }
                _ => return Err(perr(format!("not numeric: '{line}'"))),
            }
        }
        let freq = freq.ok_or(Error::Parse { line: 1, msg: "missing '# freq_hz:' header".into() })?;
        Self::new(freq, pin, pout)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# freq_hz: {}\npin_dbm,pout_dbm\n", self.freq_hz);
        for (a, b) in self.pin_dbm.iter().zip(&self.pout_dbm) {
            out.push_str(&format!("{a},{b}\n"));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.pin_dbm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pin_dbm.is_empty()
    }

    /// Same sweep with both axes shifted (e.g. fixture loss removed).
    pub fn shifted(&self, d_in_db: f64, d_out_db: f64) -> Self {
        PowerSweep {
            freq_hz: self.freq_hz,
            pin_dbm: self.pin_dbm.iter().map(|p| p + d_in_db).collect(),
            pout_dbm: self.pout_dbm.iter().map(|p| p + d_out_db).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SlopeMode {
    /// Pure gain, slope fixed at 1 dB/dB.
    #[default]
    Unit,
    /// Ordinary least squares slope and intercept.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P1dbOptions {
    pub fit_window_dbm: (f64, f64),
    pub slope: SlopeMode,
    pub compression_db: f64,
    /// Output above the line by more than this is reported as expansion.
    pub expansion_flag_db: f64,
}

impl Default for P1dbOptions {
    fn default() -> Self {
        P1dbOptions {
            fit_window_dbm: (-80.0, -60.0),
            slope: SlopeMode::Unit,
            compression_db: 1.0,
            expansion_flag_db: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1dbResult {
    pub freq_hz: f64,
    pub small_signal_gain_db: f64,
    pub fit_slope: f64,
    /// `None` when compression never reaches the target.
    pub ip1db_dbm: Option<f64>,
    pub op1db_dbm: Option<f64>,
    /// Largest excursion of the output above the fitted line, dB.
    pub max_expansion_db: f64,
    pub expansion: bool,
}

impl P1dbResult {
    pub fn found(&self) -> bool {
        self.ip1db_dbm.is_some()
    }
}

pub fn extract_p1db(sweep: &PowerSweep, opts: &P1dbOptions) -> Result<P1dbResult> {
    let (lo, hi) = opts.fit_window_dbm;
    let win: Vec<usize> = (0..sweep.len()).filter(|&i| sweep.pin_dbm[i] >= lo && sweep.pin_dbm[i] <= hi).collect();
    if win.len() < 3 {
        return Err(Error::invalid(format!("fit window [{lo}, {hi}] dBm holds {} points, need ≥ 3", win.len())));
    }
    let m = win.len() as f64;
    let (slope, intercept) = match opts.slope {
        SlopeMode::Unit => (1.0, win.iter().map(|&i| sweep.pout_dbm[i] - sweep.pin_dbm[i]).sum::<f64>() / m),
        SlopeMode::Free => {
            let mx = win.iter().map(|&i| sweep.pin_dbm[i]).sum::<f64>() / m;
            let my = win.iter().map(|&i| sweep.pout_dbm[i]).sum::<f64>() / m;
            let sxy: f64 = win.iter().map(|&i| (sweep.pin_dbm[i] - mx) * (sweep.pout_dbm[i] - my)).sum();
            let sxx: f64 = win.iter().map(|&i| (sweep.pin_dbm[i] - mx).powi(2)).sum();
            let b = sxy / sxx;
            (b, my - b * mx)
        }
    };
    let dev: Vec<f64> = (0..sweep.len()).map(|i| slope * sweep.pin_dbm[i] + intercept - sweep.pout_dbm[i]).collect();
    let max_expansion = dev.iter().fold(0.0f64, |a, d| a.max(-d));
    let small_signal_gain_db = intercept + (slope - 1.0) * 0.5 * (lo + hi);

    // first index from which the deviation stays at or beyond the target
    let mut k = dev.len();
    while k > 0 && dev[k - 1] >= opts.compression_db {
        k -= 1;
    }
    let (ip, op) = if k == dev.len() {
        (None, None)
    } else if k == 0 {
        return Err(Error::invalid("output is already compressed at the first sweep point"));
    } else {
        let (d0, d1) = (dev[k - 1], dev[k]);
        let t = (opts.compression_db - d0) / (d1 - d0);
        let lerp = |v: &[f64]| v[k - 1] + t * (v[k] - v[k - 1]);
        (Some(lerp(&sweep.pin_dbm)), Some(lerp(&sweep.pout_dbm)))
    };
    Ok(P1dbResult {
        freq_hz: sweep.freq_hz,
        small_signal_gain_db,
        fit_slope: slope,
        ip1db_dbm: ip,
        op1db_dbm: op,
        max_expansion_db: max_expansion,
        expansion: max_expansion > opts.expansion_flag_db,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repeatability {
    pub mean: ScalarTrace,
    /// Two sample standard deviations (n − 1 normalisation).
    pub two_sigma: ScalarTrace,
    pub count: usize,
}

pub fn repeatability_ci(traces: &[ScalarTrace]) -> Result<Repeatability> {
    if traces.len() < 2 {
        return Err(Error::invalid("repeatability needs at least two traces"));
    }
    let first = &traces[0];
    for t in &traces[1..] {
        first.grid.ensure_same(&t.grid, "repeatability")?;
    }
    let n = traces.len() as f64;
    let mut mean = vec![0.0; first.len()];
    let mut two_sigma = vec![0.0; first.len()];
    for k in 0..first.len() {
        let m = traces.iter().map(|t| t.values[k]).sum::<f64>() / n;
        let var = traces.iter().map(|t| (t.values[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
        mean[k] = m;
        two_sigma[k] = 2.0 * var.sqrt();
    }
    Ok(Repeatability {
        mean: ScalarTrace::new(first.grid.clone(), mean, first.unit)?,
        two_sigma: ScalarTrace::new(first.grid.clone(), two_sigma, first.unit)?,
        count: traces.len(),
    })
}

/// Trace value at the grid point nearest `f`.
pub fn value_near(trace: &ScalarTrace, f: f64) -> f64 {
    let p = trace.grid.points();
    let i = (0..p.len()).min_by(|&a, &b| (p[a] - f).abs().total_cmp(&(p[b] - f).abs())).unwrap_or(0);
    trace.values[i]
}

pub fn linear_trace_to_db(trace: &ScalarTrace) -> Result<ScalarTrace> {
    trace.to_db(Unit::Db)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn grid() -> FrequencyGrid {
        FrequencyGrid::linspace(2e9, 10e9, 81).unwrap()
    }

    /// Power-form Rapp amplifier in dBm.
    pub(crate) fn rapp_pout(pin_dbm: f64, gain_db: f64, psat_dbm: f64, p: f64) -> f64 {
        let lin = 10f64.powf((pin_dbm + gain_db - psat_dbm) / 10.0);
        psat_dbm + 10.0 * (lin / (1.0 + lin.powf(p)).powf(1.0 / p)).log10()
    }

    fn sweep_of(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> PowerSweep {
        let n = ((hi - lo) / step).round() as usize;
        let pin: Vec<f64> = (0..=n).map(|i| lo + i as f64 * step).collect();
        let pout = pin.iter().map(|&p| f(p)).collect();
        PowerSweep::new(6e9, pin, pout).unwrap()
    }

    #[test]
    fn flatness_cases() {
        let g = grid();
        let band = BandSpec::ghz(4.0, 8.0).unwrap();
        assert_eq!(gain_flatness(&ScalarTrace::constant(g.clone(), 30.0, Unit::Db), &band).unwrap(), 0.0);
        let t = ScalarTrace::from_fn(g.clone(), Unit::Db, |f| 30.0 + (f / 1e9 - 6.0));
        assert_relative_eq!(gain_flatness(&t, &band).unwrap(), 4.0, epsilon = 1e-12);
        let shifted = t.map(Unit::Db, |v| v - 17.0);
        assert_relative_eq!(gain_flatness(&shifted, &band).unwrap(), 4.0, epsilon = 1e-12);
        assert!(gain_flatness(&t, &BandSpec::ghz(1.0, 8.0).unwrap()).is_err());
    }

    #[test]
    fn compliance_cases() {
        let g = grid();
        let band = BandSpec::ghz(3.2, 7.3).unwrap();
        let flat = ScalarTrace::constant(g.clone(), -15.0, Unit::Db);
        let c = band_compliance(&flat, -10.0, Relation::Below, &band).unwrap();
        assert!(c.pass && c.violations.is_empty());
        // crosses above −10 dB for f ≥ 6.5 GHz
        let t = ScalarTrace::from_fn(g.clone(), Unit::Db, |f| if f >= 6.5e9 { -9.0 } else { -12.0 });
        let c = band_compliance(&t, -10.0, Relation::Below, &band).unwrap();
        let expect: Vec<f64> = g.points().iter().copied().filter(|&f| (6.5e9..=7.3e9 + 1.0).contains(&f)).collect();
        assert_eq!(c.violations, expect);
        assert!(!c.pass);
        let c = band_compliance(&t, -13.0, Relation::Above, &band).unwrap();
        assert!(c.pass);
    }

    #[test]
    fn linear_device_not_found() {
        let s = sweep_of(|p| p + 30.0, -80.0, -20.0, 1.0);
        let r = extract_p1db(&s, &P1dbOptions::default()).unwrap();
        assert!(!r.found());
        assert_relative_eq!(r.small_signal_gain_db, 30.0, epsilon = 1e-12);
        assert!(!r.expansion);
    }

    #[test]
    fn hard_limiter_closed_form() {
        let (g, psat) = (35.0, -5.0);
        let s = sweep_of(|p| (p + g).min(psat), -80.0, -20.0, 0.25);
        let r = extract_p1db(&s, &P1dbOptions::default()).unwrap();
        assert!((r.ip1db_dbm.unwrap() - (psat - g + 1.0)).abs() < 0.05);
        assert!((r.op1db_dbm.unwrap() - psat).abs() < 0.05);
    }

    #[test]
    fn too_few_window_points() {
        let s = sweep_of(|p| p + 30.0, -70.0, -22.0, 6.0);
        assert!(extract_p1db(&s, &P1dbOptions::default()).is_err());
    }

    #[test]
    fn noisy_dip_before_compression_ignored() {
        let mut s = sweep_of(|p| (p + 30.0).min(0.0), -80.0, -20.0, 1.0);
        // an isolated 1.2 dB glitch at −50 dBm must not count
        let i = s.pin_dbm.iter().position(|&p| p == -50.0).unwrap();
        s.pout_dbm[i] -= 1.2;
        let r = extract_p1db(&s, &P1dbOptions::default()).unwrap();
        assert!((r.ip1db_dbm.unwrap() - (-29.0)).abs() < 0.05);
    }

    #[test]
    fn expansion_is_flagged() {
        let s = sweep_of(|p| p + 30.0 + if p > -40.0 { 0.5 } else { 0.0 }, -80.0, -20.0, 1.0);
        let r = extract_p1db(&s, &P1dbOptions::default()).unwrap();
        assert!(r.expansion && !r.found());
        assert_relative_eq!(r.max_expansion_db, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn free_slope_mode_fits_line() {
        let s = sweep_of(|p| 0.9 * p + 25.0, -80.0, -20.0, 1.0);
        let r = extract_p1db(&s, &P1dbOptions { slope: SlopeMode::Free, ..Default::default() }).unwrap();
        assert_relative_eq!(r.fit_slope, 0.9, epsilon = 1e-12);
        assert!(!r.found());
    }

    #[test]
    fn sweep_csv_round_trip() {
        let s = sweep_of(|p| rapp_pout(p, 30.0, 0.0, 2.0), -80.0, -20.0, 2.0);
        assert_eq!(PowerSweep::from_csv(&s.to_csv()).unwrap(), s);
        assert!(PowerSweep::from_csv("pin_dbm,pout_dbm\n1,2\n").is_err());
    }

    /// Dense brute-force reference: same definition evaluated on a 0.001 dB sweep.
    pub(crate) fn brute_force_op1db(gain: f64, psat: f64, p: f64) -> f64 {
        let step = 0.001;
        let fit_n = (20.0 / step) as usize;
        let g_fit = (0..=fit_n)
            .map(|i| {
                let pin = -80.0 + i as f64 * step;
                rapp_pout(pin, gain, psat, p) - pin
            })
            .sum::<f64>()
            / (fit_n + 1) as f64;
        let mut pin = -80.0;
        loop {
            let d = pin + g_fit - rapp_pout(pin, gain, psat, p);
            if d >= 1.0 {
                return rapp_pout(pin, gain, psat, p);
            }
            pin += step;
        }
    }

    #[test]
    fn rapp_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let gain = rng.random_range(20.0..40.0);
            let p = rng.random_range(1.5..6.0);
            let ip_target: f64 = rng.random_range(-50.0..-28.0);
            // Rapp: 1 dB compression where x^p = 10^(p/10) − 1, x = G·Pin/Psat
            let x = (10f64.powf(p / 10.0) - 1.0).powf(1.0 / p);
            let psat = ip_target + gain - 10.0 * x.log10();
            let s = sweep_of(|pin| rapp_pout(pin, gain, psat, p), -80.0, -20.0, 0.5);
            let r = extract_p1db(&s, &P1dbOptions::default()).unwrap();
            let oracle = brute_force_op1db(gain, psat, p);
            assert!((r.op1db_dbm.unwrap() - oracle).abs() < 0.1, "{} vs {oracle}", r.op1db_dbm.unwrap());
        }
    }

    #[test]
    fn repeatability_cases() {
        let g = grid();
        let t = ScalarTrace::constant(g.clone(), 3.0, Unit::Kelvin);
        let r = repeatability_ci(&[t.clone(), t.clone(), t.clone()]).unwrap();
        assert!(r.two_sigma.values.iter().all(|v| *v == 0.0));
        assert!(repeatability_ci(std::slice::from_ref(&t)).is_err());
        let other = ScalarTrace::constant(FrequencyGrid::linspace(2e9, 10e9, 5).unwrap(), 3.0, Unit::Kelvin);
        assert!(repeatability_ci(&[t, other]).is_err());
    }

    #[test]
    fn repeatability_known_sigma() {
        // 9 traces, σ = 40 mK. Per point s/σ follows chi(8)/√8; averaged over
        // 81 points the mean 2σ estimate is within a few percent of 80 mK.
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let run = |sigma: f64, rng: &mut ChaCha8Rng| {
            let nd = Normal::new(0.0, sigma).unwrap();
            let traces: Vec<ScalarTrace> = (0..9)
                .map(|_| {
                    let v = (0..g.len()).map(|_| 3.0 + nd.sample(rng)).collect();
                    ScalarTrace::new(g.clone(), v, Unit::Kelvin).unwrap()
                })
                .collect();
            let r = repeatability_ci(&traces).unwrap();
            r.two_sigma.values.iter().sum::<f64>() / r.two_sigma.len() as f64
        };
        let a = run(0.040, &mut rng);
        // E[s] = c4·σ with c4(9) = 0.9727
        assert!((a / (2.0 * 0.040 * 0.9727) - 1.0).abs() < 0.06, "{a}");
        let b = run(0.080, &mut rng);
        assert!((b / a - 2.0).abs() < 0.2);
    }

    proptest! {
        #[test]
        fn p1db_shift_invariance(offset in -20.0f64..20.0, gain in 20.0f64..40.0, psat in -15.0f64..-5.0) {
            let base = sweep_of(|p| rapp_pout(p, gain, psat, 3.0), -80.0, -20.0, 0.5);
            let r0 = extract_p1db(&base, &P1dbOptions::default()).unwrap();
            let shifted = base.shifted(offset, offset);
            let opts = P1dbOptions { fit_window_dbm: (-80.0 + offset, -60.0 + offset), ..Default::default() };
            let r1 = extract_p1db(&shifted, &opts).unwrap();
            prop_assert!((r1.ip1db_dbm.unwrap() - r0.ip1db_dbm.unwrap() - offset).abs() < 1e-9);
            prop_assert!((r1.op1db_dbm.unwrap() - r0.op1db_dbm.unwrap() - offset).abs() < 1e-9);
        }

        #[test]
        fn flatness_offset_invariant(c in -50.0f64..50.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = grid();
            let vals: Vec<f64> = (0..g.len()).map(|_| rng.random_range(20.0..35.0)).collect();
            let t = ScalarTrace::new(g, vals, Unit::Db).unwrap();
            let band = BandSpec::ghz(4.0, 8.0).unwrap();
            let a = gain_flatness(&t, &band).unwrap();
            let b = gain_flatness(&t.map(Unit::Db, |v| v + c), &band).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn compliance_pass_iff_no_violations(level in -30.0f64..0.0, thr in -30.0f64..0.0) {
            let g = grid();
            let t = ScalarTrace::from_fn(g, Unit::Db, |f| level + (f / 1e9).sin());
            let c = band_compliance(&t, thr, Relation::Below, &BandSpec::ghz(3.2, 7.3).unwrap()).unwrap();
            prop_assert_eq!(c.pass, c.violations.is_empty());
        }
    }
}
