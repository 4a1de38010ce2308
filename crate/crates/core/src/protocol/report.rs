use super::{RunRecord, Verdict};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Markdown,
    /// One CSV file per trace.
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" | "csv-bundle" => Ok(ReportFormat::Csv),
            other => Err(Error::invalid(format!("unknown report format '{other}'"))),
        }
    }
}

fn write_new(path: &Path, content: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

/// Append the record to `<dir>/runs/` as `<timestamp>_<run id>.json`.
/// Existing records are never overwritten.
pub fn save_record(rec: &RunRecord, dir: &Path) -> Result<PathBuf> {
    let runs = dir.join("runs");
    fs::create_dir_all(&runs)?;
    let stamp: String = rec.timestamp.chars().filter(|c| *c != ':' && *c != '-').collect();
    let path = runs.join(format!("{stamp}_{}.json", rec.run_id));
    write_new(&path, &serde_json::to_string_pretty(rec)?)?;
    Ok(path)
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Write the record in `format` under `dir`; returns the files written.
pub fn render_report(rec: &RunRecord, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Json => {
            let p = dir.join(format!("{}.json", rec.run_id));
            fs::write(&p, serde_json::to_string_pretty(rec)?)?;
            Ok(vec![p])
        }
        ReportFormat::Markdown => {
            let p = dir.join(format!("{}.md", rec.run_id));
            fs::write(&p, markdown(rec))?;
            Ok(vec![p])
        }
        ReportFormat::Csv => {
            let sub = dir.join(format!("{}_csv", rec.run_id));
            fs::create_dir_all(&sub)?;
            rec.traces
                .iter()
                .map(|t| {
                    let p = sub.join(format!("{}.csv", t.name));
                    fs::write(&p, t.trace.to_csv())?;
                    Ok(p)
                })
                .collect()
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "not reached".to_string(), |x| format!("{x:.3}"))
}

pub fn markdown(rec: &RunRecord) -> String {
    let m = &rec.metrics;
    let mut s = String::new();
    let phase = if rec.phase == 1 { "Phase 1 (setup qualification)" } else { "Phase 2 (device evaluation)" };
    let _ = writeln!(s, "# {} datasheet\n", rec.scenario);
    let _ = writeln!(s, "| | |\n|---|---|");
    let _ = writeln!(s, "| Run | `{}` |", rec.run_id);
    let _ = writeln!(s, "| Phase | {phase} |");
    let _ = writeln!(s, "| Timestamp | {} |", rec.timestamp);
    let _ = writeln!(s, "| Config hash | `{}` |", rec.config_hash);
    let _ = writeln!(s, "| Seed | {} |", rec.seed);
    if let Some(p1) = &rec.phase1_ref {
        let _ = writeln!(s, "| Phase-1 reference | `{p1}` |");
    }
    let _ = writeln!(s, "| **Verdict** | **{}** |", rec.verdict);
    if let Some(b) = rec.bias {
        let vg = b.vg_v.map_or(String::new(), |v| format!(", V_G = {v} V"));
        let _ = writeln!(s, "| Bias | V_D = {} V, I_D = {} mA{vg} |", b.vd_v, b.id_ma);
    }
    let _ = writeln!(s, "| Band | {} – {} GHz |", m.band.f_low_hz / 1e9, m.band.f_high_hz / 1e9);

    let _ = writeln!(s, "\n## Calibration\n");
    let c = &rec.calibration;
    let _ = writeln!(
        s,
        "THRU verification residual {:.4} dB (tolerance {} dB): {}.",
        c.verify_max_residual_db,
        c.verify_tolerance_db,
        if c.pass { "pass" } else { "FAIL" }
    );
    if !c.ill_conditioned_freqs_hz.is_empty() {
        let _ = writeln!(s, "LINE ill-conditioned at {} grid points.", c.ill_conditioned_freqs_hz.len());
    }

    let _ = writeln!(s, "\n## Gain and matching\n");
    let _ = writeln!(s, "| Quantity | Value |\n|---|---|");
    let _ = writeln!(s, "| Peak gain (dB) | {} |", m.peak_gain_db);
    let _ = writeln!(s, "| Minimum gain (dB) | {} |", m.min_gain_db);
    let _ = writeln!(s, "| Gain flatness (dB) | {} |", m.flatness_db);
    let _ = writeln!(s, "| Max S11 (dB) | {:.2} |", m.s11_max_db);
    let _ = writeln!(s, "| Max S22 (dB) | {:.2} |", m.s22_max_db);
    let _ = writeln!(s, "| Max S12 (dB) | {:.2} |", m.s12_max_db);

    let _ = writeln!(s, "\n## Compression\n");
    let _ = writeln!(s, "| f (GHz) | Gain (dB) | IP1dB (dBm) | OP1dB (dBm) | Expansion |\n|---|---|---|---|---|");
    for r in &rec.p1db {
        let _ = writeln!(
            s,
            "| {:.3} | {:.2} | {} | {} | {} |",
            r.freq_hz / 1e9,
            r.small_signal_gain_db,
            opt(r.ip1db_dbm),
            opt(r.op1db_dbm),
            if r.expansion { "yes" } else { "no" }
        );
    }

    let _ = writeln!(s, "\n## Noise temperature\n");
    let _ = writeln!(s, "| Quantity | Value |\n|---|---|");
    let _ = writeln!(s, "| Minimum (K) | {:.3} |", m.noise_min_k);
    let _ = writeln!(s, "| Mean (K) | {:.3} |", m.noise_mean_k);
    let _ = writeln!(s, "| Maximum (K) | {:.3} |", m.noise_max_k);
    let _ = writeln!(s, "| Repeatability, 2σ over {} runs (K) | {:.4} |", m.noise_repeats, m.noise_repeatability_k);
    let _ = writeln!(s, "| Lumped input cable temperature (K) | {:.1} |", m.t_cable_fit_k);

    let u = &rec.uncertainty;
    let _ = writeln!(s, "\n## Uncertainty at {:.3} GHz\n", u.center_freq_hz / 1e9);
    let _ = writeln!(s, "| Parameter | σ | Sensitivity | Contribution (mK) |\n|---|---|---|---|");
    for t in &u.center.terms {
        let _ = writeln!(
            s,
            "| {} | {} {} | {:.4e} | {:.2} |",
            t.label,
            t.sigma,
            t.unit,
            t.sensitivity,
            t.contribution_k * 1e3
        );
    }
    let _ = writeln!(
        s,
        "\nCombined σ(T_DUT) = {:.1} mK (Monte Carlo, n = {}: {:.1} mK). In-band maximum {:.1} mK.",
        u.center.sigma_k * 1e3,
        u.monte_carlo.n,
        u.monte_carlo.sigma_k * 1e3,
        u.max_sigma_k * 1e3
    );

    if !rec.reference_checks.is_empty() {
        let _ = writeln!(s, "\n## Agreement with control reference\n");
        let _ = writeln!(s, "| Check | Deviation | Tolerance | Result |\n|---|---|---|---|");
        for c in &rec.reference_checks {
            let _ = writeln!(s, "| {} | {:.4} | {} | {} |", c.name, c.deviation, c.tolerance, pf(c.pass));
        }
    }
    if !rec.limits.is_empty() {
        let _ = writeln!(s, "\n## Specification limits\n");
        let _ = writeln!(s, "| Limit | Value | Measured | U (k=2) | Result |\n|---|---|---|---|---|");
        for l in &rec.limits {
            let res = if l.pass {
                "pass"
            } else if l.marginal {
                "FAIL (marginal)"
            } else {
                "FAIL"
            };
            let _ =
                writeln!(s, "| {} | {} | {:.3} | {:.3} | {res} |", l.name, l.limit, l.measured, l.expanded_uncertainty);
        }
    }
    if rec.verdict != Verdict::Pass {
        let _ = writeln!(s, "\nCauses: {}", rec.causes.join(", "));
    }
    s
}

fn pf(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}
