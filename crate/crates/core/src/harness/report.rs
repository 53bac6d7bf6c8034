//! Reports, the convergence verdict rule and JSON/CSV emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Format, SuiteConfig};
use crate::error::{Error, Result};
use crate::symbol::{EllipticitySummary, Exactness};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Residuals at or below this level are indistinguishable from rounding and
/// count as exact: they take no part in rate fits.
pub const NOISE_FLOOR: f64 = 1e-11;
/// Final-resolution bound for identities involving derivatives.
pub const DERIVATIVE_TOL: f64 = 1e-3;

/// The sign, index and normalization conventions the numbers depend on.
pub const CONVENTIONS: &str = "Gamma^a_bc = 1/2 g^ad (d_b g_dc + d_c g_bd - d_d g_bc); \
R_abcd = 1/2 (d_b d_c g_ad + d_a d_d g_bc - d_a d_c g_bd - d_b d_d g_ac) + g_pq (Gamma^p_da Gamma^q_cb - Gamma^p_ca Gamma^q_db); \
Ric_bd = g^ac R_abcd; \
P = (Ric - R g/(2(n-1)))/(n-2); C = R - P wedge g; \
Bach_ab = tracefree(sym(nabla^c nabla^d C_acbd + 1/2 Ric^cd C_acbd)); \
K X = L_X g; K0 = tracefree(K); K0* h = -2 div h; \
B = d/dt Bach(g + t h) by central differences with Richardson extrapolation; \
central differences on the 2pi torus, storage point-major with axis 0 fastest";

/// FNV-1a of [`CONVENTIONS`], recorded in every report.
pub fn conventions_fingerprint() -> String {
    let h = CONVENTIONS
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    format!("{h:016x}")
}

/// Requirements on a residual sequence over increasing resolutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRule {
    pub min_rate: f64,
    pub final_tol: f64,
    pub floor: f64,
}

impl ConvergenceRule {
    /// Rate at least fd_order − 2 and final residual ≤ [`DERIVATIVE_TOL`].
    pub fn derivative(fd_order: usize) -> ConvergenceRule {
        ConvergenceRule {
            min_rate: fd_order as f64 - 2.0,
            final_tol: DERIVATIVE_TOL,
            floor: NOISE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceAssessment {
    pub passed: bool,
    /// least-squares order over the residuals above the noise floor
    pub rate: Option<f64>,
    pub monotone: bool,
    pub at_floor: bool,
    pub note: String,
}

/// Judge residuals listed by increasing resolution. Residuals above the
/// floor must come first and decrease strictly; once the floor is reached
/// it must hold. The order is fitted over the residuals above the floor
/// and is required only when at least two exist.
pub fn assess(rows: &[(usize, f64)], rule: &ConvergenceRule) -> ConvergenceAssessment {
    let fail = |note: String| ConvergenceAssessment {
        passed: false,
        rate: None,
        monotone: false,
        at_floor: false,
        note,
    };
    if rows.len() < 2 {
        return fail("a convergence verdict needs at least two resolutions".into());
    }
    if let Some((n, r)) = rows.iter().find(|(_, r)| !r.is_finite()) {
        return fail(format!("non-finite residual {r} at N = {n}"));
    }
    let above: Vec<(usize, f64)> = rows.iter().cloned().take_while(|(_, r)| *r > rule.floor).collect();
    if rows[above.len()..].iter().any(|(_, r)| *r > rule.floor) {
        return fail("residual left the noise floor after reaching it".into());
    }
    let monotone = above.windows(2).all(|w| w[1].1 < w[0].1);
    let at_floor = above.len() < rows.len();
    let rate = (above.len() >= 2).then(|| {
        let xs: Vec<f64> = above.iter().map(|(n, _)| (*n as f64).ln()).collect();
        let ys: Vec<f64> = above.iter().map(|(_, r)| r.ln()).collect();
        let m = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / m;
        let my = ys.iter().sum::<f64>() / m;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        -sxy / sxx
    });
    let last = rows.last().map(|r| r.1).unwrap_or(f64::NAN);
    let mut problems = Vec::new();
    if !monotone {
        problems.push("residuals do not decrease monotonically".to_string());
    }
    if let Some(r) = rate {
        if r < rule.min_rate {
            problems.push(format!("fitted order {r:.2} below {}", rule.min_rate));
        }
    }
    if last > rule.final_tol {
        problems.push(format!("final residual {last:.3e} above {:.0e}", rule.final_tol));
    }
    let passed = problems.is_empty();
    let note = if passed {
        match (rate, at_floor) {
            (Some(r), false) => format!("order {r:.2}"),
            (Some(r), true) => format!("order {r:.2}, then at the rounding floor"),
            (None, true) if above.is_empty() => "exact to rounding at every resolution".into(),
            (None, _) => "reached the rounding floor".into(),
        }
    } else {
        problems.join("; ")
    };
    ConvergenceAssessment {
        passed,
        rate,
        monotone,
        at_floor,
        note,
    }
}

/// Residuals at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRow {
    pub resolution: usize,
    /// the headline residual: the worst over draws and sub-checks
    pub residual: f64,
    /// named sub-residuals (per draw, per quantity)
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

/// One pass/fail statement tied to an acceptance criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: String,
    pub check: String,
    pub passed: bool,
    /// recorded but outside the hypotheses of the identity; never fails a run
    #[serde(default)]
    pub informational: bool,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceAssessment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolDiagnostics {
    pub summary: EllipticitySummary,
    pub trials: Vec<Exactness>,
}

/// The result of one suite on one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    pub rows: Vec<ResolutionRow>,
    pub verdicts: Vec<Verdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub draw_seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol: Option<SymbolDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.verdicts.iter().all(|v| v.passed || v.informational)
    }

    /// Fitted order of the first convergence verdict, if any.
    pub fn rate(&self) -> Option<f64> {
        self.verdicts.iter().find_map(|v| v.convergence.as_ref().and_then(|c| c.rate))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub dimension: usize,
    pub conventions: String,
    pub conventions_fingerprint: String,
    pub seed: u64,
    pub config: SuiteConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

impl Report {
    pub fn new(config: &SuiteConfig) -> Report {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            metadata: Metadata {
                version: env!("CARGO_PKG_VERSION").to_string(),
                dimension: 4,
                conventions: CONVENTIONS.to_string(),
                conventions_fingerprint: conventions_fingerprint(),
                seed: config.seed,
                config: config.clone(),
            },
            suites: Vec::new(),
            passed: true,
        }
    }

    pub fn push(&mut self, r: SuiteResult) {
        self.passed &= r.passed();
        self.suites.push(r);
    }

    /// All verdicts with the suite and metric they belong to.
    pub fn verdicts(&self) -> impl Iterator<Item = (&SuiteResult, &Verdict)> {
        self.suites.iter().flat_map(|s| s.verdicts.iter().map(move |v| (s, v)))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Report> {
        serde_json::from_str(s).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// One row per (suite, metric, resolution).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let ser = |e: csv::Error| Error::Serialize(e.to_string());
        w.write_record(["suite", "metric", "criteria", "resolution", "residual", "rate", "passed"])
            .map_err(ser)?;
        for s in &self.suites {
            let mut criteria: Vec<&str> = s.verdicts.iter().map(|v| v.criterion.as_str()).collect();
            criteria.dedup();
            let rate = s.rate().map(|r| r.to_string()).unwrap_or_default();
            for row in &s.rows {
                w.write_record([
                    s.suite.as_str(),
                    s.metric.as_deref().unwrap_or(""),
                    &criteria.join(" "),
                    &row.resolution.to_string(),
                    &format!("{:e}", row.residual),
                    &rate,
                    &s.passed().to_string(),
                ])
                .map_err(ser)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Serialize(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }

    /// A short human-readable summary, one line per verdict.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (s, v) in self.verdicts() {
            let status = if v.passed {
                "pass"
            } else if v.informational {
                "info"
            } else {
                "FAIL"
            };
            let metric = s.metric.as_deref().map(|m| format!(" [{m}]")).unwrap_or_default();
            out.push_str(&format!("{status} {} {}{metric} {}: {}\n", v.criterion, s.suite, v.check, v.detail));
        }
        for s in self.suites.iter().filter(|s| s.error.is_some()) {
            out.push_str(&format!("FAIL {} error: {}\n", s.suite, s.error.as_deref().unwrap_or("")));
        }
        out.push_str(if self.passed { "overall: pass\n" } else { "overall: FAIL\n" });
        out
    }
}

/// Write the report as `report.json` or `report.csv` in `dir`.
pub fn emit(report: &Report, dir: &Path, format: Format) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(match format {
        Format::Json => "report.json",
        Format::Csv => "report.csv",
    });
    std::fs::write(&path, report.render(format)?).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule() -> ConvergenceRule {
        ConvergenceRule::derivative(6)
    }

    #[test]
    fn clean_convergence_passes() {
        let rows: Vec<(usize, f64)> = [12usize, 16, 24].iter().map(|&n| (n, 1e3 * (n as f64).powi(-6))).collect();
        let a = assess(&rows, &rule());
        assert!(a.passed && a.monotone, "{a:?}");
        assert!((a.rate.unwrap() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn slow_or_large_or_rising_fails() {
        let slow: Vec<(usize, f64)> = [12usize, 16, 24].iter().map(|&n| (n, 1e-2 * (n as f64).powi(-2))).collect();
        assert!(!assess(&slow, &rule()).passed);
        let big: Vec<(usize, f64)> = [12usize, 16, 24].iter().map(|&n| (n, 1e6 * (n as f64).powi(-6))).collect();
        let a = assess(&big, &rule());
        assert!(!a.passed && a.note.contains("final"), "{a:?}");
        let rising = [(12, 1e-4), (16, 2e-4), (24, 1e-6)];
        assert!(!assess(&rising, &rule()).passed);
        assert!(!assess(&[(12, 1e-4)], &rule()).passed);
        assert!(!assess(&[(12, 1e-4), (16, f64::NAN)], &rule()).passed);
    }

    #[test]
    fn floor_handling() {
        let exact = [(12, 1e-16), (16, 3e-16), (24, 8e-16)];
        let a = assess(&exact, &rule());
        assert!(a.passed && a.at_floor && a.rate.is_none(), "{a:?}");
        let dive = [(12, 1e-5), (16, 1e-13), (24, 1e-14)];
        assert!(assess(&dive, &rule()).passed);
        let bounce = [(12, 1e-5), (16, 1e-13), (24, 1e-6)];
        assert!(!assess(&bounce, &rule()).passed);
    }

    #[test]
    fn fingerprint_is_stable() {
        assert_eq!(conventions_fingerprint(), conventions_fingerprint());
        assert_eq!(conventions_fingerprint().len(), 16);
    }
}
