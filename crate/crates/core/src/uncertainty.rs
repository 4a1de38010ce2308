//! First-order propagation of the measurement-parameter uncertainties to
//! the DUT noise temperature, with a Monte Carlo cross-check.
//!
//! The measurement equation is the Y-factor result with cable and cold
//! attenuator in front of the DUT and a second stage behind it:
//!
//! ```text
//! T_in,s = T_s/(L_A·L_c) + (1/L_A)(1 − 1/L_c)·T_cable + (1 − 1/L_A)·T_A
//! T_DUT  = (T_in,hot − Y·T_in,cold)/(Y − 1) − T_2/G
//! ```

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_10;

/// One-sigma standard uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBudget {
    pub g_dut_db: f64,
    pub l_cable_db: f64,
    pub l_a_db: f64,
    pub t_cable_k: f64,
    pub t_a_k: f64,
    pub enr_db: f64,
    pub t_eff_k: f64,
}

impl Default for UncertaintyBudget {
    fn default() -> Self {
        UncertaintyBudget {
            g_dut_db: 0.033,
            l_cable_db: 0.033,
            l_a_db: 0.033,
            t_cable_k: 32.0,
            t_a_k: 0.005,
            enr_db: 0.18,
            t_eff_k: 12.0,
        }
    }
}

impl UncertaintyBudget {
    pub fn zero() -> Self {
        UncertaintyBudget {
            g_dut_db: 0.0,
            l_cable_db: 0.0,
            l_a_db: 0.0,
            t_cable_k: 0.0,
            t_a_k: 0.0,
            enr_db: 0.0,
            t_eff_k: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if Parameter::ALL.iter().any(|p| !(p.sigma(self) >= 0.0)) {
            return Err(Error::invalid("uncertainties must be ≥ 0"));
        }
        Ok(())
    }

    /// Budget with only `p` kept.
    pub fn only(&self, p: Parameter) -> Self {
        let mut b = Self::zero();
        p.set_sigma(&mut b, p.sigma(self));
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub y: f64,
    /// Source temperatures (diode on / off), K.
    pub t_hot: f64,
    pub t_cold: f64,
    pub l_a: f64,
    pub l_cable: f64,
    pub t_cable: f64,
    pub t_a: f64,
    /// DUT power gain, linear.
    pub g_dut: f64,
    /// Post-DUT noise referred to the DUT output, K.
    #[serde(default)]
    pub t_second_stage: f64,
}

impl OperatingPoint {
    pub fn validate(&self) -> Result<()> {
        if !(self.y > 1.0) {
            return Err(Error::domain(format!("Y must be > 1, got {}", self.y)));
        }
        if !(self.l_a >= 1.0 && self.l_cable >= 1.0) {
            return Err(Error::domain("losses must be ≥ 1"));
        }
        if !(self.g_dut > 0.0) {
            return Err(Error::domain("DUT gain must be > 0"));
        }
        Ok(())
    }

    pub fn t_dut(&self, opts: &PropagationOptions) -> f64 {
        evaluate(self, &Perturbation::default(), opts)
    }
}

/// How the budget entries overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// ENR, T_cable, T_A, losses and gain.
    #[default]
    Enr,
    /// T_eff in place of ENR and T_cable.
    TEff,
}

/// Where the attenuator temperature enters the Y-factor equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttenuatorCoupling {
    /// The attenuator thermometer sets the cold-state temperature only; the
    /// hot state is fixed by the ENR calibration.
    #[default]
    ColdOnly,
    /// The full input-noise expression applied to both states.
    HotAndCold,
}

/// dB-to-linear convention for the DUT gain uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GainConvention {
    #[default]
    Power,
    Amplitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PropagationOptions {
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub coupling: AttenuatorCoupling,
    #[serde(default)]
    pub gain_convention: GainConvention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    GDut,
    LCable,
    LA,
    TCable,
    TA,
    Enr,
    TEff,
}

impl Parameter {
    pub const ALL: [Parameter; 7] = [
        Parameter::GDut,
        Parameter::LCable,
        Parameter::LA,
        Parameter::TCable,
        Parameter::TA,
        Parameter::Enr,
        Parameter::TEff,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Parameter::GDut => "G_DUT",
            Parameter::LCable => "L_cable",
            Parameter::LA => "L_A",
            Parameter::TCable => "T_cable",
            Parameter::TA => "T_A",
            Parameter::Enr => "ENR",
            Parameter::TEff => "T_eff",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Parameter::GDut | Parameter::LCable | Parameter::LA | Parameter::Enr => "dB",
            _ => "K",
        }
    }

    pub fn sigma(self, b: &UncertaintyBudget) -> f64 {
        match self {
            Parameter::GDut => b.g_dut_db,
            Parameter::LCable => b.l_cable_db,
            Parameter::LA => b.l_a_db,
            Parameter::TCable => b.t_cable_k,
            Parameter::TA => b.t_a_k,
            Parameter::Enr => b.enr_db,
            Parameter::TEff => b.t_eff_k,
        }
    }

    fn set_sigma(self, b: &mut UncertaintyBudget, v: f64) {
        match self {
            Parameter::GDut => b.g_dut_db = v,
            Parameter::LCable => b.l_cable_db = v,
            Parameter::LA => b.l_a_db = v,
            Parameter::TCable => b.t_cable_k = v,
            Parameter::TA => b.t_a_k = v,
            Parameter::Enr => b.enr_db = v,
            Parameter::TEff => b.t_eff_k = v,
        }
    }

    pub fn included(self, agg: Aggregation) -> bool {
        !matches!(
            (self, agg),
            (Parameter::Enr | Parameter::TCable, Aggregation::TEff) | (Parameter::TEff, Aggregation::Enr)
        )
    }
}

/// Parameter offsets, in the budget's units.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Perturbation {
    g_dut_db: f64,
    l_cable_db: f64,
    l_a_db: f64,
    t_cable_k: f64,
    t_a_k: f64,
    enr_db: f64,
    t_eff_k: f64,
}

impl Perturbation {
    fn set(&mut self, p: Parameter, v: f64) {
        match p {
            Parameter::GDut => self.g_dut_db = v,
            Parameter::LCable => self.l_cable_db = v,
            Parameter::LA => self.l_a_db = v,
            Parameter::TCable => self.t_cable_k = v,
            Parameter::TA => self.t_a_k = v,
            Parameter::Enr => self.enr_db = v,
            Parameter::TEff => self.t_eff_k = v,
        }
    }
}

/// Exact measurement equation at a perturbed parameter set.
fn evaluate(op: &OperatingPoint, d: &Perturbation, opts: &PropagationOptions) -> f64 {
    let p10 = |db: f64| 10f64.powf(db / 10.0);
    let l_a = op.l_a * p10(d.l_a_db);
    let l_c = op.l_cable * p10(d.l_cable_db);
    let t_hot = op.t_cold + (op.t_hot - op.t_cold) * p10(d.enr_db);
    let t_cable = op.t_cable + d.t_cable_k;
    let g = op.g_dut
        * match opts.gain_convention {
            GainConvention::Power => p10(d.g_dut_db),
            GainConvention::Amplitude => 10f64.powf(d.g_dut_db / 20.0),
        };
    let cable = (1.0 - 1.0 / l_c) * t_cable / l_a + d.t_eff_k / (l_a * l_c);
    let t_in = |t_s: f64, t_a: f64| t_s / (l_a * l_c) + cable + (1.0 - 1.0 / l_a) * t_a;
    let t_a_hot = match opts.coupling {
        AttenuatorCoupling::ColdOnly => op.t_a,
        AttenuatorCoupling::HotAndCold => op.t_a + d.t_a_k,
    };
    let th = t_in(t_hot, t_a_hot);
    let tc = t_in(op.t_cold, op.t_a + d.t_a_k);
    (th - op.y * tc) / (op.y - 1.0) - op.t_second_stage / g
}

/// Analytic ∂T_DUT/∂θ per budget unit.
pub fn sensitivity(op: &OperatingPoint, p: Parameter, opts: &PropagationOptions) -> f64 {
    let (y, l_a, l_c) = (op.y, op.l_a, op.l_cable);
    let l = l_a * l_c;
    let d = y - 1.0;
    let c10 = LN_10 / 10.0;
    match p {
        Parameter::Enr => (op.t_hot - op.t_cold) * c10 / (l * d),
        Parameter::TCable => -(1.0 - 1.0 / l_c) / l_a,
        Parameter::TEff => -1.0 / l,
        Parameter::TA => match opts.coupling {
            AttenuatorCoupling::ColdOnly => -y / d * (1.0 - 1.0 / l_a),
            AttenuatorCoupling::HotAndCold => -(1.0 - 1.0 / l_a),
        },
        Parameter::LA => {
            // ∂T_in,s/∂dB(L_A) = c10·[−T_s/L − (1 − 1/L_c)T_cable/L_A + T_A/L_A]
            let common = -(1.0 - 1.0 / l_c) * op.t_cable / l_a + op.t_a / l_a;
            let dh = c10 * (-op.t_hot / l + common);
            let dc = c10 * (-op.t_cold / l + common);
            (dh - y * dc) / d
        }
        Parameter::LCable => {
            let dh = c10 * (op.t_cable - op.t_hot) / l;
            let dc = c10 * (op.t_cable - op.t_cold) / l;
            (dh - y * dc) / d
        }
        Parameter::GDut => {
            let c = match opts.gain_convention {
                GainConvention::Power => c10,
                GainConvention::Amplitude => LN_10 / 20.0,
            };
            op.t_second_stage / op.g_dut * c
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub parameter: Parameter,
    pub label: String,
    pub unit: String,
    pub sigma: f64,
    pub sensitivity: f64,
    /// |sensitivity·σ|, K.
    pub contribution_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    pub t_dut_k: f64,
    pub sigma_k: f64,
    pub options: PropagationOptions,
    pub terms: Vec<Contribution>,
}

pub fn propagate_tdut(budget: &UncertaintyBudget, op: &OperatingPoint) -> Result<Propagation> {
    propagate_tdut_with(budget, op, &PropagationOptions::default())
}

pub fn propagate_tdut_with(
    budget: &UncertaintyBudget,
    op: &OperatingPoint,
    opts: &PropagationOptions,
) -> Result<Propagation> {
    budget.validate()?;
    op.validate()?;
    let terms: Vec<Contribution> = Parameter::ALL
        .iter()
        .filter(|p| p.included(opts.aggregation))
        .map(|&p| {
            let s = sensitivity(op, p, opts);
            let sigma = p.sigma(budget);
            Contribution {
                parameter: p,
                label: p.label().into(),
                unit: p.unit().into(),
                sigma,
                sensitivity: s,
                contribution_k: (s * sigma).abs(),
            }
        })
        .collect();
    let sigma_k = terms.iter().map(|t| t.contribution_k.powi(2)).sum::<f64>().sqrt();
    Ok(Propagation { t_dut_k: op.t_dut(opts), sigma_k, options: *opts, terms })
}

/// Central-difference derivative of the exact equation, for self-checks.
pub fn numeric_sensitivity(op: &OperatingPoint, p: Parameter, opts: &PropagationOptions, h: f64) -> f64 {
    let mut plus = Perturbation::default();
    let mut minus = Perturbation::default();
    plus.set(p, h);
    minus.set(p, -h);
    (evaluate(op, &plus, opts) - evaluate(op, &minus, opts)) / (2.0 * h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub n: usize,
    pub seed: u64,
    pub mean_k: f64,
    pub sigma_k: f64,
    pub p2_5_k: f64,
    pub median_k: f64,
    pub p97_5_k: f64,
}

pub const MIN_MC_SAMPLES: usize = 10_000;
const MC_CHUNK: usize = 4096;

pub fn monte_carlo_tdut(
    budget: &UncertaintyBudget,
    op: &OperatingPoint,
    n: usize,
    seed: u64,
) -> Result<MonteCarloResult> {
    monte_carlo_tdut_with(budget, op, n, seed, &PropagationOptions::default(), Execution::default())
}

/// Sampling in fixed-size chunks, each with its own ChaCha stream keyed by
/// the chunk index, so the result does not depend on the thread count.
pub fn monte_carlo_tdut_with(
    budget: &UncertaintyBudget,
    op: &OperatingPoint,
    n: usize,
    seed: u64,
    opts: &PropagationOptions,
    exec: Execution,
) -> Result<MonteCarloResult> {
    budget.validate()?;
    op.validate()?;
    if n < MIN_MC_SAMPLES {
        return Err(Error::invalid(format!("Monte Carlo needs n ≥ {MIN_MC_SAMPLES}, got {n}")));
    }
    let params: Vec<Parameter> = Parameter::ALL.iter().copied().filter(|p| p.included(opts.aggregation)).collect();
    let chunks = n.div_ceil(MC_CHUNK);
    let per_chunk = exec::map_indexed(chunks, exec, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let len = MC_CHUNK.min(n - c * MC_CHUNK);
        (0..len)
            .map(|_| {
                let mut d = Perturbation::default();
                for &p in &params {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    d.set(p, z * p.sigma(budget));
                }
                evaluate(op, &d, opts)
            })
            .collect::<Vec<f64>>()
    });
    let mut samples = per_chunk.concat();
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    samples.sort_by(f64::total_cmp);
    let q = |p: f64| samples[((p * (nf - 1.0)).round() as usize).min(n - 1)];
    Ok(MonteCarloResult {
        n,
        seed,
        mean_k: mean,
        sigma_k: var.sqrt(),
        p2_5_k: q(0.025),
        median_k: q(0.5),
        p97_5_k: q(0.975),
    })
}
