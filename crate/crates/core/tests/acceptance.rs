//! Acceptance criteria, one test per criterion. Each test writes a single
//! pass/fail line to stdout, bypassing the test harness capture so the
//! lines appear in the normal `cargo test` log.

use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use detour::conformal::{preset, PresetParams};
use detour::geometry::{bach, curvature_pack};
use detour::grid::ChartGrid;
use detour::harness::suites::FLAT_TOL;
use detour::harness::{run_suite, MetricSpec, Report, Suite, SuiteConfig};
use detour::operators::killing;
use detour::tensor::{Slot, TensorField};
use serde::Deserialize;

const RESOLUTIONS: [usize; 3] = [12, 16, 24];
const FD_ORDER: usize = 6;
const DRAWS: usize = 5;

/// Criteria run one at a time so the runtime bounds measure one check alone.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn announce(id: &str, title: &str, passed: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let status = if passed { "PASS" } else { "FAIL" };
    writeln!(out, "{id} {title}: {status} | {detail}").unwrap();
}

fn config(metrics: &[&str], suites: &[Suite], resolutions: &[usize]) -> SuiteConfig {
    SuiteConfig {
        metrics: metrics.iter().map(|m| MetricSpec::named(m)).collect(),
        resolutions: resolutions.to_vec(),
        fd_order: FD_ORDER,
        suites: suites.to_vec(),
        draws: DRAWS,
        ..SuiteConfig::default()
    }
}

/// Every verdict carrying criterion `id` must be asserted (not
/// informational) and pass, and every listed metric must contribute one.
fn judge(id: &str, title: &str, report: &Report, metrics: &[&str]) {
    let mut lines = Vec::new();
    let mut passed = true;
    for s in &report.suites {
        if let Some(e) = &s.error {
            passed = false;
            lines.push(format!("{} error: {e}", s.suite));
        }
    }
    let verdicts: Vec<_> = report.verdicts().filter(|(_, v)| v.criterion == id).collect();
    passed &= !verdicts.is_empty();
    for m in metrics {
        passed &= verdicts.iter().any(|(s, _)| s.metric.as_deref() == Some(*m));
    }
    for (s, v) in &verdicts {
        passed &= v.passed && !v.informational;
        let metric = s.metric.as_deref().map(|m| format!("[{m}] ")).unwrap_or_default();
        lines.push(format!("{metric}{}: {}", v.check, v.detail));
    }
    announce(id, title, passed, &lines.join("; "));
    assert!(passed, "{id} failed:\n{}", report.summary());
}

#[test]
fn c01_flat_metric_sanity() {
    let _serial = serial();
    let grid = ChartGrid::new(4, 16).unwrap();
    let start = Instant::now();
    let g = preset("flat", &PresetParams::new(), &grid).unwrap();
    let pack = curvature_pack(&g, FD_ORDER).unwrap();
    let x = TensorField::from_fn(&grid, vec![Slot::Contra], |_, v| v.copy_from_slice(&[1.0, -2.0, 0.5, 3.0]));
    let kx = killing(&g, &pack.connection, &x).unwrap();
    let sups = [
        ("christoffel", pack.connection.sup_norm()),
        ("riemann", pack.riemann.sup_norm()),
        ("ricci", pack.ricci.sup_norm()),
        ("scalar", pack.scalar.sup_norm()),
        ("schouten", pack.schouten.sup_norm()),
        ("weyl", pack.weyl.sup_norm()),
        ("cotton", pack.cotton.sup_norm()),
        ("bach", pack.bach().unwrap().sup_norm()),
        ("killing_constant", kx.sup_norm()),
    ];
    let elapsed = start.elapsed();
    let worst = sups.iter().fold(0.0f64, |m, (_, v)| m.max(*v));
    let passed = worst <= FLAT_TOL && elapsed <= Duration::from_secs(1);
    announce(
        "C1",
        "flat-metric sanity",
        passed,
        &format!("max sup-norm {worst:.3e} against {FLAT_TOL:.0e}; runtime {:.3} s at N = 16", elapsed.as_secs_f64()),
    );
    assert!(passed, "{sups:?} in {elapsed:?}");
}

#[test]
fn c02_conformal_covariance() {
    let _serial = serial();
    let report = run_suite(&config(&["flat", "bumpy"], &[Suite::ConformalCovariance], &RESOLUTIONS)).unwrap();
    judge("C2", "conformal covariance of the Bach tensor", &report, &["flat", "bumpy"]);
}

#[test]
fn c03_trace_identity() {
    let _serial = serial();
    let report = run_suite(&config(&["bumpy"], &[Suite::TraceIdentity], &RESOLUTIONS)).unwrap();
    judge("C3", "trace identity", &report, &["bumpy"]);
}

#[test]
fn c04_naturality() {
    let _serial = serial();
    let report = run_suite(&config(&["bumpy"], &[Suite::Naturality], &RESOLUTIONS)).unwrap();
    judge("C4", "naturality", &report, &["bumpy"]);
}

#[test]
fn c05_complex_property() {
    let _serial = serial();
    let report = run_suite(&config(&["conf_flat"], &[Suite::ComplexProperty], &RESOLUTIONS)).unwrap();
    judge("C5", "complex property", &report, &["conf_flat"]);
}

#[test]
fn c06_self_adjointness() {
    let _serial = serial();
    let report = run_suite(&config(&["flat", "conf_flat"], &[Suite::SelfAdjointness], &RESOLUTIONS)).unwrap();
    judge("C6", "self-adjointness", &report, &["flat", "conf_flat"]);
}

#[test]
fn c07_bi_invariance() {
    let _serial = serial();
    let report = run_suite(&config(&["bumpy"], &[Suite::BiInvariance], &RESOLUTIONS)).unwrap();
    judge("C7", "bi-invariance", &report, &["bumpy"]);
}

#[test]
fn c08_adjoint_pair() {
    let _serial = serial();
    let metrics = ["flat", "conf_flat", "bumpy", "diagonal", "custom"];
    let report = run_suite(&config(&metrics, &[Suite::AdjointPair], &[24])).unwrap();
    judge("C8", "adjoint pair", &report, &metrics);
}

#[test]
fn c09_bach_structure() {
    let _serial = serial();
    let report = run_suite(&config(&["bumpy", "conf_flat"], &[Suite::Curvature], &RESOLUTIONS)).unwrap();
    judge("C9", "Bach tensor structure", &report, &["bumpy", "conf_flat"]);
}

#[test]
fn c10_ellipticity() {
    let _serial = serial();
    let mut cfg = config(&[], &[Suite::Symbol], &[12]);
    cfg.symbol.trials = 100;
    let start = Instant::now();
    let report = run_suite(&cfg).unwrap();
    let elapsed = start.elapsed();
    let result = &report.suites[0];
    let summary = &result.symbol.as_ref().expect("symbol diagnostics").summary;
    let counts_ok = summary.trials >= 100 && summary.exact == summary.trials && summary.ranks_ok == summary.trials;
    let fast = elapsed <= Duration::from_secs(5);
    let passed = counts_ok && fast && result.passed();
    announce(
        "C10",
        "ellipticity",
        passed,
        &format!("{}; runtime {:.2} s", result.verdicts[0].detail, elapsed.as_secs_f64()),
    );
    assert!(passed, "{}", report.summary());
}

#[test]
fn c11_grid_symbol_consistency() {
    let _serial = serial();
    let report = run_suite(&config(&[], &[Suite::Crosscheck], &RESOLUTIONS)).unwrap();
    judge("C11", "grid and symbol consistency", &report, &[]);
}

#[derive(Deserialize)]
struct OracleFile {
    resolution: usize,
    cases: Vec<OracleCase>,
}

#[derive(Deserialize)]
struct OracleCase {
    preset: String,
    points: Vec<OraclePoint>,
}

#[derive(Deserialize)]
struct OraclePoint {
    index: [usize; 4],
    bach: [f64; 16],
}

const ORACLE_TOL: f64 = 1e-6;
const ORACLE_FD_ORDER: usize = 8;

#[test]
fn c12_oracle_agreement() {
    let _serial = serial();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/bach_oracle.json");
    let oracle: OracleFile = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(oracle.resolution, 32);
    let grid = ChartGrid::new(4, oracle.resolution).unwrap();
    let mut passed = true;
    let mut lines = Vec::new();
    for case in &oracle.cases {
        let g = preset(&case.preset, &PresetParams::new(), &grid).unwrap();
        let b = bach(&g, ORACLE_FD_ORDER).unwrap();
        // relative in the sup norm over the sample set
        let scale = case.points.iter().flat_map(|pt| pt.bach).fold(0.0f64, |m, v| m.max(v.abs()));
        let mut err = 0.0f64;
        for pt in &case.points {
            let p = grid.index(&pt.index);
            for (c, v) in pt.bach.iter().enumerate() {
                err = err.max((b.data()[p * 16 + c] - v).abs());
            }
        }
        let worst = err / scale;
        passed &= case.points.len() >= 5 && worst <= ORACLE_TOL;
        lines.push(format!("[{}] {} points, max relative error {worst:.2e}", case.preset, case.points.len()));
    }
    passed &= oracle.cases.iter().any(|c| c.preset == "bumpy") && oracle.cases.iter().any(|c| c.preset == "diagonal");
    announce(
        "C12",
        "oracle agreement",
        passed,
        &format!("{} against {ORACLE_TOL:.0e} at N = 32", lines.join("; ")),
    );
    assert!(passed);
}
