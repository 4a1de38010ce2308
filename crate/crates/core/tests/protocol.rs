use cryolna::metrics::BandSpec;
use cryolna::protocol::{
    load_record, render_report, run_phase1, run_phase2, save_record, testbed_hash, ControlTolerances, ReportFormat,
    RunRecord, SpecLimits, Verdict,
};
use cryolna::simlab::Scenario;
use std::sync::OnceLock;

fn lna_c() -> Scenario {
    Scenario::preset("lna_c").unwrap()
}

fn lna_t() -> Scenario {
    Scenario::preset("lna_t").unwrap()
}

fn phase1() -> &'static RunRecord {
    static REC: OnceLock<RunRecord> = OnceLock::new();
    REC.get_or_init(|| run_phase1(&lna_c()).unwrap())
}

fn t_limits(max_noise_k: f64) -> SpecLimits {
    SpecLimits {
        max_noise_k: Some(max_noise_k),
        max_flatness_db: Some(4.0),
        ..SpecLimits::new(BandSpec::ghz(6.0, 9.0).unwrap())
    }
}

#[test]
fn control_amplifier_qualifies_setup() {
    let rec = phase1();
    assert_eq!(rec.verdict, Verdict::Pass, "causes: {:?}", rec.causes);
    assert!(rec.calibration.pass);
    assert!(rec.reference_checks.iter().all(|c| c.pass));
    assert!((rec.metrics.flatness_db - 1.0).abs() <= 0.1);
}

#[test]
fn loss_table_error_fails_on_noise() {
    let mut sc = lna_c();
    sc.run.loss_table_offset_db = 1.0;
    let rec = run_phase1(&sc).unwrap();
    assert_eq!(rec.verdict, Verdict::Fail);
    assert!(rec.causes.iter().any(|c| c.contains("noise")), "causes: {:?}", rec.causes);
}

#[test]
fn noiseless_setup_passes_with_zero_tolerances() {
    let mut sc = lna_c();
    sc.testbed = sc.testbed.noiseless();
    sc.tolerances = ControlTolerances::zero();
    let rec = run_phase1(&sc).unwrap();
    assert_eq!(rec.verdict, Verdict::Pass, "causes: {:?}", rec.causes);
}

#[test]
fn calibration_failure_is_recorded_with_downstream_results() {
    let mut sc = lna_c();
    sc.tolerances.verify_db = 1e-4;
    let rec = run_phase1(&sc).unwrap();
    assert_eq!(rec.verdict, Verdict::Fail);
    assert_eq!(rec.causes[0], "CALIBRATION");
    assert!(rec.trace("t_dut_k").is_some());
    assert!(!rec.p1db.is_empty());
}

#[test]
fn device_within_limits_passes() {
    let rec = run_phase2(&lna_t(), &t_limits(8.0), Some(phase1())).unwrap();
    assert_eq!(rec.verdict, Verdict::Pass, "causes: {:?}", rec.causes);
    assert_eq!(rec.phase1_ref.as_deref(), Some(phase1().run_id.as_str()));
}

#[test]
fn marginal_noise_failure_goes_to_failure_analysis() {
    let rec = run_phase2(&lna_t(), &t_limits(6.0), Some(phase1())).unwrap();
    assert_eq!(rec.verdict, Verdict::FailureAnalysis);
    let noise = rec.limits.iter().find(|l| l.name == "max_noise_k").unwrap();
    assert!(!noise.pass && noise.marginal);
    assert!(noise.exceedance <= 2.0 * noise.expanded_uncertainty);
}

#[test]
fn gross_failure_is_plain_fail() {
    let rec = run_phase2(&lna_t(), &t_limits(2.0), Some(phase1())).unwrap();
    assert_eq!(rec.verdict, Verdict::Fail);
}

#[test]
fn phase2_is_gated_on_a_passing_phase1() {
    assert!(run_phase2(&lna_t(), &t_limits(8.0), None).is_err());

    let mut failed = phase1().clone();
    failed.verdict = Verdict::Fail;
    assert!(run_phase2(&lna_t(), &t_limits(8.0), Some(&failed)).is_err());

    let p2 = run_phase2(&lna_t(), &t_limits(8.0), Some(phase1())).unwrap();
    assert!(run_phase2(&lna_t(), &t_limits(8.0), Some(&p2)).is_err());

    let mut other = lna_t();
    other.testbed.attenuator.loss_db = 20.0;
    assert_ne!(testbed_hash(&other).unwrap(), phase1().testbed_hash);
    assert!(run_phase2(&other, &t_limits(8.0), Some(phase1())).is_err());
}

#[test]
fn every_limit_reported_once() {
    let limits = SpecLimits {
        min_gain_db: Some(30.0),
        max_gain_db: Some(40.0),
        min_op1db_dbm: Some(0.0),
        return_loss_db: Some(-5.0),
        isolation_db: Some(-40.0),
        ..t_limits(8.0)
    };
    let rec = run_phase2(&lna_t(), &limits, Some(phase1())).unwrap();
    let mut names: Vec<&str> = rec.limits.iter().map(|l| l.name.as_str()).collect();
    names.sort_unstable();
    let mut expected: Vec<&str> = limits.entries().into_iter().map(|e| e.0).collect();
    expected.sort_unstable();
    assert_eq!(names, expected);
    let all_pass = rec.limits.iter().all(|l| l.pass) && rec.calibration.pass;
    assert_eq!(rec.verdict == Verdict::Pass, all_pass);
}

#[test]
fn runs_are_deterministic() {
    let a = run_phase1(&lna_c()).unwrap();
    assert_eq!(a.canonical_json().unwrap(), phase1().canonical_json().unwrap());
    assert_eq!(a.run_id, phase1().run_id);
    assert!(!a.canonical_json().unwrap().contains(&a.timestamp));

    let mut reseeded = lna_c();
    reseeded.testbed.seed += 1;
    let b = run_phase1(&reseeded).unwrap();
    assert_ne!(b.run_id, a.run_id);
    assert_eq!(b.testbed_hash, a.testbed_hash);
}

#[test]
fn record_files_round_trip_and_are_immutable() {
    let dir = tempfile::tempdir().unwrap();
    let rec = phase1();
    let path = save_record(rec, dir.path()).unwrap();
    assert!(path.starts_with(dir.path().join("runs")));
    assert!(path.file_name().unwrap().to_string_lossy().ends_with(&format!("_{}.json", rec.run_id)));
    assert_eq!(&load_record(&path).unwrap(), rec);
    assert!(save_record(rec, dir.path()).is_err());
}

#[test]
fn markdown_quotes_flatness_exactly() {
    let rec = run_phase2(&lna_t(), &t_limits(8.0), Some(phase1())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = render_report(&rec, ReportFormat::Markdown, dir.path()).unwrap();
    let md = std::fs::read_to_string(&files[0]).unwrap();
    let json: serde_json::Value = serde_json::from_str(&rec.canonical_json().unwrap()).unwrap();
    let flat = json["metrics"]["flatness_db"].as_f64().unwrap();
    assert!(md.contains(&format!("| Gain flatness (dB) | {flat} |")));
    for needle in ["Bias", "V_D = 0.5 V", "OP1dB", "Noise temperature", "Uncertainty", "PASS"] {
        assert!(md.contains(needle), "missing {needle}");
    }
}

#[test]
fn csv_bundle_has_one_file_per_trace() {
    let dir = tempfile::tempdir().unwrap();
    let rec = phase1();
    let files = render_report(rec, ReportFormat::Csv, dir.path()).unwrap();
    assert_eq!(files.len(), rec.traces.len());
    let back = cryolna::network::read_trace_csv(&files[0]).unwrap();
    assert_eq!(back, rec.traces[0].trace);
}
