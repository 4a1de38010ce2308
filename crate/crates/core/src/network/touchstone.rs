//! Touchstone v1 `.s2p` reader and writer.
//!
//! Data lines carry `f S11 S21 S12 S22` as value pairs in RI, MA or DB
//! format. Only S-parameters at 50 Ω are accepted.

use super::grid::FrequencyGrid;
use super::twoport::{Mat2, TwoPortNetwork, REFERENCE_IMPEDANCE};
use crate::error::{Error, Result};
use num_complex::Complex64;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Ri,
    Ma,
    Db,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TouchstoneOptions {
    /// Multiplier from the file's frequency unit to Hz.
    pub freq_scale: f64,
    pub format: DataFormat,
    pub reference_ohms: f64,
}

impl Default for TouchstoneOptions {
    fn default() -> Self {
        TouchstoneOptions { freq_scale: 1e9, format: DataFormat::Ma, reference_ohms: 50.0 }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_options(line: &str, line_no: usize) -> Result<TouchstoneOptions> {
    let mut opts = TouchstoneOptions::default();
    let mut tokens = line.trim_start_matches('#').split_whitespace();
    while let Some(tok) = tokens.next() {
        match tok.to_ascii_uppercase().as_str() {
            "HZ" => opts.freq_scale = 1.0,
            "KHZ" => opts.freq_scale = 1e3,
            "MHZ" => opts.freq_scale = 1e6,
            "GHZ" => opts.freq_scale = 1e9,
            "S" => {}
            "Y" | "Z" | "H" | "G" => return Err(parse_err(line_no, format!("unsupported parameter type '{tok}'"))),
            "RI" => opts.format = DataFormat::Ri,
            "MA" => opts.format = DataFormat::Ma,
            "DB" => opts.format = DataFormat::Db,
            "R" => {
                let z = tokens
                    .next()
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| parse_err(line_no, "'R' must be followed by a number"))?;
                opts.reference_ohms = z;
            }
            _ => return Err(parse_err(line_no, format!("malformed option line token '{tok}'"))),
        }
    }
    if opts.reference_ohms != REFERENCE_IMPEDANCE {
        return Err(parse_err(
            line_no,
            format!("reference impedance {} Ω not supported (50 Ω only)", opts.reference_ohms),
        ));
    }
    Ok(opts)
}

fn pair_to_complex(a: f64, b: f64, format: DataFormat) -> Complex64 {
    match format {
        DataFormat::Ri => Complex64::new(a, b),
        DataFormat::Ma => Complex64::from_polar(a, b.to_radians()),
        DataFormat::Db => Complex64::from_polar(10f64.powf(a / 20.0), b.to_radians()),
    }
}

pub fn parse_touchstone(text: &str) -> Result<TwoPortNetwork> {
    let mut opts: Option<TouchstoneOptions> = None;
    let mut freqs: Vec<f64> = Vec::new();
    let mut mats: Vec<Mat2> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('!').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            return Err(parse_err(line_no, "Touchstone v2 keywords are not supported"));
        }
        if line.starts_with('#') {
            // Only the first option line counts.
            if opts.is_none() {
                opts = Some(parse_options(line, line_no)?);
            }
            continue;
        }
        let o = *opts.get_or_insert_with(TouchstoneOptions::default);
        let cols = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(line_no, format!("not a number: '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        if cols.len() != 9 {
            return Err(parse_err(line_no, format!("expected 9 columns, found {}", cols.len())));
        }
        let f = cols[0] * o.freq_scale;
        if let Some(&prev) = freqs.last() {
            if f <= prev {
                return Err(parse_err(line_no, format!("frequency {f} Hz not above previous {prev} Hz")));
            }
        }
        let p = |k: usize| pair_to_complex(cols[1 + 2 * k], cols[2 + 2 * k], o.format);
        // column order: S11 S21 S12 S22
        mats.push(Mat2::new(p(0), p(2), p(1), p(3)));
        freqs.push(f);
    }
    let grid = FrequencyGrid::new(freqs)?;
    TwoPortNetwork::new(grid, mats)
}

pub fn read_touchstone(path: impl AsRef<Path>) -> Result<TwoPortNetwork> {
    parse_touchstone(&std::fs::read_to_string(path)?)
}

/// Write in Hz with `digits` significant digits per value.
pub fn write_touchstone(net: &TwoPortNetwork, format: DataFormat, digits: usize) -> String {
    let fmt_name = match format {
        DataFormat::Ri => "RI",
        DataFormat::Ma => "MA",
        DataFormat::Db => "DB",
    };
    let prec = digits.max(1) - 1;
    let num = |v: f64| format!("{:.*e}", prec, v);
    let mut out = String::new();
    out.push_str("! 2-port S-parameters\n");
    out.push_str(&format!("# Hz S {fmt_name} R 50\n"));
    for (f, m) in net.grid().points().iter().zip(net.s()) {
        out.push_str(&f.to_string());
        for (i, j) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let z = m.0[i][j];
            let (a, b) = match format {
                DataFormat::Ri => (z.re, z.im),
                DataFormat::Ma => (z.norm(), z.arg().to_degrees()),
                // 1e-30 floor keeps an exact zero writable in dB.
                DataFormat::Db => (20.0 * z.norm().max(1e-30).log10(), z.arg().to_degrees()),
            };
            out.push(' ');
            out.push_str(&num(a));
            out.push(' ');
            out.push_str(&num(b));
        }
        out.push('\n');
    }
    out
}
