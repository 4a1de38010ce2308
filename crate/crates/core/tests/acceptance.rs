//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the
//! process exits non-zero when any criterion fails.

mod common;

use common::*;
use cryolna::metrics::{band_compliance, extract_p1db, BandSpec, P1dbOptions, PowerSweep, Relation};
use cryolna::network::FrequencyGrid;
use cryolna::noise::{input_noise_temperature, y_factor_temperature, InputModel};
use cryolna::protocol::{operating_point, run_phase1, run_phase2, simulate, RunRecord, Verdict};
use cryolna::simlab::{GridSpec, Scenario};
use cryolna::thermal::{fit_lumped_temperature, CableThermalSpec, Reference, ThermalProfile};
use cryolna::trl::{deembed, solve_trl, verify_cal};
use cryolna::uncertainty::{monte_carlo_tdut_with, propagate_tdut_with, PropagationOptions, UncertaintyBudget};
use cryolna::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::process::ExitCode;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn c1_loss_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let l_a = log_uniform(&mut rng, 1.0, 1e4);
        let l_c = log_uniform(&mut rng, 1.0, 1e4);
        let [t_s, t_a, t_c] = [(); 3].map(|_| log_uniform(&mut rng, 0.1, 1e4));
        let full = input_noise_temperature(t_s, l_a, t_a, l_c, t_c, InputModel::Full).unwrap();
        let lumped = input_noise_temperature(t_s, l_a, t_a, l_c, t_c, InputModel::Lumped).unwrap();
        let direct = t_s / (l_a * l_c) + (1.0 - 1.0 / l_c) * t_c / l_a + (1.0 - 1.0 / l_a) * t_a;
        worst = worst.max(rel_err(full, lumped)).max(rel_err(full, direct));
    }
    outcome(worst <= 1e-12, format!("max relative difference {worst:.2e} over 10^4 draws (limit 1e-12)"))
}

fn c2_cable_fit() -> Outcome {
    let grid = GridSpec::default().build().unwrap();
    let spec = CableThermalSpec::default_input();
    let prof = ThermalProfile::build(&spec, &grid, Execution::default()).unwrap();
    let t_eff = prof.effective_temperature_trace(Reference::Input).unwrap();
    let fit = fit_lumped_temperature(&t_eff, &prof.total_loss_trace()).unwrap();
    let n = spec.elements_per_section;
    outcome(
        (fit - 210.0).abs() <= 30.0 && n == 1000,
        format!("lumped cable temperature {fit:.2} K (target 210 ± 30 K), {n} elements/section"),
    )
}

fn c3_uncertainty() -> Outcome {
    let sc = Scenario::preset("lna_c").unwrap();
    let mut op = operating_point(&sc, 6e9).unwrap();
    op.t_cable = 210.0;
    let budget = UncertaintyBudget::default();
    let opts = PropagationOptions::default();
    let p = propagate_tdut_with(&budget, &op, &opts).unwrap();
    let mc = monte_carlo_tdut_with(&budget, &op, 100_000, 7, &opts, Execution::default()).unwrap();
    let in_range = (0.120..=0.180).contains(&p.sigma_k);
    let agree = rel_err(mc.sigma_k, p.sigma_k) <= 0.10;
    let dominant = p
        .terms
        .iter()
        .max_by(|a, b| a.contribution_k.total_cmp(&b.contribution_k))
        .map(|t| format!("{} {:.1} mK", t.label, t.contribution_k * 1e3))
        .unwrap_or_default();
    outcome(
        in_range && agree,
        format!(
            "Y = {:.3}: analytic σ = {:.1} mK (target [120, 180]), MC σ = {:.1} mK ({:+.1}%), largest term {dominant}",
            op.y,
            p.sigma_k * 1e3,
            mc.sigma_k * 1e3,
            100.0 * (mc.sigma_k / p.sigma_k - 1.0)
        ),
    )
}

fn c4_trl() -> Outcome {
    let grid = FrequencyGrid::linspace(2e9, 10e9, 41).unwrap();
    let line = matched_line(&grid, 0.0, 1.0 / (4.0 * 6e9));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut within = 0usize;
    let trials = 500;
    for _ in 0..trials {
        let a = random_box(&grid, &mut rng);
        let b = random_box(&grid, &mut rng);
        let dut = random_dut(&grid, &mut rng);
        let (thru, l, w1, w2) = synth_standards(&a, &b, &line, -ONE);
        let em = solve_trl(&measurement(thru.clone(), l.clone(), w1.clone(), w2.clone())).unwrap();
        let raw = chain(&[&a, &dut, &b]);
        worst = worst.max(deembed(&em, &raw).unwrap().max_abs_diff(&dut));

        let sigma = 0.01;
        let w1n = w1.iter().map(|z| noisy(*z, sigma, &mut rng)).collect();
        let w2n = w2.iter().map(|z| noisy(*z, sigma, &mut rng)).collect();
        let meas = measurement(noisy_net(&thru, sigma, &mut rng), noisy_net(&l, sigma, &mut rng), w1n, w2n);
        let em_n = solve_trl(&meas).unwrap();
        let v = verify_cal(&em_n, &noisy_net(&thru, sigma, &mut rng), 0.05).unwrap();
        within += usize::from(v.pass);
    }
    let frac = within as f64 / trials as f64;
    outcome(
        worst <= 1e-6 && frac >= 0.95,
        format!(
            "noise-free max |ΔS| {worst:.2e} (limit 1e-6); with 0.01 dB noise {:.1}% of THRU checks ≤ 0.05 dB (need ≥ 95%)",
            100.0 * frac
        ),
    )
}

fn c5_truth_recovery() -> Outcome {
    let band = BandSpec::ghz(4.0, 8.0).unwrap();
    let mut sc = Scenario::preset("lna_c").unwrap();
    sc.testbed = sc.testbed.noiseless();
    let rec = run_phase1(&sc).unwrap();
    let t = rec.trace("t_dut_k").unwrap();
    let g = rec.trace("gain_db").unwrap();
    let (mut dt, mut dg) = (0.0f64, 0.0f64);
    for k in band.indices(&t.grid).unwrap() {
        let f = t.grid.points()[k];
        dt = dt.max((t.values[k] - sc.dut.noise_temperature_at(f)).abs());
        dg = dg.max((g.values[k] - sc.dut.gain_at(f)).abs());
    }
    let noisy = run_phase1(&Scenario::preset("lna_c").unwrap()).unwrap();
    let rep = noisy.trace("t_dut_2sigma_k").unwrap();
    let worst_rep = band.indices(&rep.grid).unwrap().into_iter().map(|k| rep.values[k]).fold(0.0, f64::max);
    outcome(
        dt <= 1e-3 && dg <= 1e-3 && worst_rep < 0.1,
        format!(
            "noiseless max |ΔT_n| {:.2e} K, |ΔG| {dg:.2e} dB; noisy 9-repeat 2σ max {:.1} mK (limit 100)",
            dt,
            worst_rep * 1e3
        ),
    )
}

fn c6_p1db() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = P1dbOptions::default();
    let pin: Vec<f64> = (0..=100).map(|i| -80.0 + i as f64).collect();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let g = rng.random_range(20.0..40.0);
        let psat = rng.random_range(-5.0..10.0);
        let p = rng.random_range(2.0..6.0);
        let pout = pin.iter().map(|&x| rapp_dbm(x, g, psat, p)).collect();
        let r = extract_p1db(&PowerSweep::new(6e9, pin.clone(), pout).unwrap(), &opts).unwrap();
        worst = worst.max((r.op1db_dbm.unwrap_or(f64::INFINITY) - rapp_op1db(g, psat, p)).abs());
    }
    let mut worst_hard = 0.0f64;
    for _ in 0..100 {
        let g = rng.random_range(20.0..40.0);
        let psat = rng.random_range(-5.0..10.0);
        let pout = pin.iter().map(|&x| (x + g).min(psat)).collect();
        let r = extract_p1db(&PowerSweep::new(6e9, pin.clone(), pout).unwrap(), &opts).unwrap();
        worst_hard = worst_hard.max((r.op1db_dbm.unwrap_or(f64::INFINITY) - psat).abs());
    }
    outcome(
        worst <= 0.1 && worst_hard <= 0.05,
        format!("Rapp max |ΔOP1dB| {worst:.4} dB (limit 0.1); hard limiter {worst_hard:.4} dB (limit 0.05)"),
    )
}

fn phase1_lna_c() -> RunRecord {
    run_phase1(&Scenario::preset("lna_c").unwrap()).unwrap()
}

fn c7_protocol() -> Outcome {
    let c = Scenario::preset("lna_c").unwrap();
    let p1 = run_phase1(&c).unwrap();
    let rl_band = c.limits.as_ref().and_then(|l| l.return_loss_band).unwrap();
    let rl = c.limits.as_ref().and_then(|l| l.return_loss_db).unwrap();
    let matched = ["s11_db", "s22_db"]
        .iter()
        .all(|n| band_compliance(p1.trace(n).unwrap(), rl, Relation::Below, &rl_band).unwrap().pass);
    let ok1 = p1.verdict == Verdict::Pass && (p1.metrics.flatness_db - 1.0).abs() <= 0.1 && matched;

    let t = Scenario::preset("lna_t").unwrap();
    let p2 = run_phase2(&t, t.limits.as_ref().unwrap(), Some(&p1)).unwrap();
    let band = BandSpec::ghz(6.0, 9.0).unwrap();
    let tn = p2.trace("t_dut_k").unwrap();
    let (lo, hi) = band
        .indices(&tn.grid)
        .unwrap()
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), k| (a.min(tn.values[k]), b.max(tn.values[k])));
    let m = &p2.metrics;
    let ok2 = p2.verdict == Verdict::Pass
        && (m.flatness_db - 3.5).abs() <= 0.2
        && (m.peak_gain_db - 35.7).abs() <= 0.2
        && lo >= 6.0
        && hi <= 8.0;
    outcome(
        ok1 && ok2,
        format!(
            "phase 1 {} flatness {:.3} dB, S11/S22 < {rl} dB over {}-{} GHz: {matched}; phase 2 {} flatness {:.3} dB, peak {:.3} dB, T_n {lo:.3}-{hi:.3} K",
            p1.verdict,
            p1.metrics.flatness_db,
            rl_band.f_low_hz / 1e9,
            rl_band.f_high_hz / 1e9,
            p2.verdict,
            m.flatness_db,
            m.peak_gain_db
        ),
    )
}

fn c8_determinism() -> Outcome {
    let c = Scenario::preset("lna_c").unwrap();
    let t = Scenario::preset("lna_t").unwrap();
    let sim = |sc: &Scenario| simulate(sc).unwrap().canonical_json().unwrap();
    let p1a = phase1_lna_c();
    let p1b = phase1_lna_c();
    let limits = t.limits.clone().unwrap();
    let p2 = || run_phase2(&t, &limits, Some(&p1a)).unwrap().canonical_json().unwrap();
    let checks = [
        ("simulate lna_c", sim(&c) == sim(&c)),
        ("simulate lna_t", sim(&t) == sim(&t)),
        ("phase1", p1a.canonical_json().unwrap() == p1b.canonical_json().unwrap() && p1a.run_id == p1b.run_id),
        ("phase2", p2() == p2()),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            "simulate, phase1 and phase2 canonical JSON byte-identical across repeat runs".into()
        } else {
            format!("differs: {}", failed.join(", "))
        },
    )
}

fn c9_t_cold_linearity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let y = 1.0 + log_uniform(&mut rng, 1e-3, 1e2);
        let t_hot = rng.random_range(100.0..1e4);
        let t_cold = rng.random_range(1.0..300.0);
        let dt = rng.random_range(-50.0..50.0);
        let before = y_factor_temperature(y, t_hot, t_cold);
        let after = y_factor_temperature(y, t_hot, t_cold + dt);
        let shift = -y / (y - 1.0) * dt;
        let scale = before.abs().max(after.abs()).max(shift.abs());
        worst = worst.max((after - (before + shift)).abs() / scale);
    }
    outcome(
        worst <= 1e-12,
        format!("max relative deviation from −Y/(Y−1)·ΔT {worst:.2e} over 10^3 draws (limit 1e-12)"),
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 9] = [
        ("lossy-chain identity", c1_loss_identity, Duration::from_secs(1)),
        ("cable lumped temperature", c2_cable_fit, Duration::from_secs(5)),
        ("uncertainty budget", c3_uncertainty, Duration::from_secs(30)),
        ("TRL oracle equivalence", c4_trl, Duration::from_secs(60)),
        ("end-to-end truth recovery", c5_truth_recovery, Duration::from_secs(120)),
        ("P1dB extraction", c6_p1db, Duration::from_secs(10)),
        ("protocol reproduction", c7_protocol, Duration::from_secs(60)),
        ("determinism", c8_determinism, Duration::MAX),
        ("T_cold linearity", c9_t_cold_linearity, Duration::MAX),
    ];
    let mut failures = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let in_time = took <= *budget;
        let pass = o.pass && in_time;
        failures += usize::from(!pass);
        let timing = if *budget == Duration::MAX {
            format!("{:.2} s", took.as_secs_f64())
        } else {
            format!("{:.2} s of {} s{}", took.as_secs_f64(), budget.as_secs(), if in_time { "" } else { " EXCEEDED" })
        };
        println!("criterion {} [{}] {name}: {} ({timing})", i + 1, if pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
