//! Suite orchestration: every requested check at every resolution, with
//! verdicts tied to acceptance criteria.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::config::{MetricSpec, Suite, SuiteConfig};
use super::random::{draw_seed, random_scalar, random_tracefree, random_vector};
use super::report::{assess, ConvergenceRule, Report, ResolutionRow, SuiteResult, SymbolDiagnostics, Verdict};
use crate::conformal::{lookup, preset, rescale, weight_check_scaled, PresetProperty};
use crate::error::{Error, Result};
use crate::exprlang::{parse, Params};
use crate::geometry::{bach, bach_scale, christoffel, covariant_derivative, curvature_pack, divergence_covariant};
use crate::grid::{ChartGrid, ScalarField};
use crate::operators::{
    conformal_killing, fourth_order_scale, k0_adjoint, killing, lie_derivative, linearized_bach, relative_residual,
    BACH_FLAT_TOL,
};
use crate::symbol::{
    ellipticity_trials, kernel_direction, symbol_crosscheck, transverse_direction, PointFrame, HOMOGENEITY_TOL,
};
use crate::tensor::{inner_product, l2_norm, lower_index, trace, MetricField, Slot, TensorField};

/// Bound on every curvature quantity of a flat metric.
pub const FLAT_TOL: f64 = 1e-12;
/// Bound on the trace of the Bach tensor.
pub const BACH_TRACE_TOL: f64 = 1e-12;
/// Bound on the relative adjoint-pairing defect.
pub const ADJOINT_TOL: f64 = 1e-6;

/// Acceptance criterion ids.
pub mod criteria {
    pub const FLAT_SANITY: &str = "C1";
    pub const COVARIANCE: &str = "C2";
    pub const TRACE_IDENTITY: &str = "C3";
    pub const NATURALITY: &str = "C4";
    pub const COMPLEX: &str = "C5";
    pub const SELF_ADJOINT: &str = "C6";
    pub const BI_INVARIANCE: &str = "C7";
    pub const ADJOINT_PAIR: &str = "C8";
    pub const BACH_STRUCTURE: &str = "C9";
    pub const ELLIPTICITY: &str = "C10";
    pub const CROSSCHECK: &str = "C11";
}

struct Run<'a> {
    cfg: &'a SuiteConfig,
    rule: ConvergenceRule,
}

fn grid(n: usize) -> Result<Arc<ChartGrid>> {
    ChartGrid::new(4, n)
}

fn sample_upsilon(cfg: &SuiteConfig, grid: &Arc<ChartGrid>) -> Result<ScalarField> {
    parse(&cfg.upsilon)?.sample(grid, &Params::new())
}

fn max_of<'a>(vals: impl IntoIterator<Item = &'a f64>) -> f64 {
    vals.into_iter().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(*v) })
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}

/// Headline = max over `details`.
fn row(resolution: usize, details: BTreeMap<String, f64>) -> Result<ResolutionRow> {
    for (k, v) in &details {
        finite(k, *v)?;
    }
    Ok(ResolutionRow {
        resolution,
        residual: max_of(details.values()),
        details,
    })
}

fn draw_key(i: usize) -> String {
    format!("draw{i}")
}

impl<'a> Run<'a> {
    fn seeds(&self, suite: Suite) -> Vec<u64> {
        (0..self.cfg.draws).map(|i| draw_seed(self.cfg.seed, suite.name(), i)).collect()
    }

    fn convergence(&self, criterion: &str, check: &str, rows: &[(usize, f64)]) -> Verdict {
        self.convergence_with(criterion, check, rows, &self.rule)
    }

    fn convergence_with(&self, criterion: &str, check: &str, rows: &[(usize, f64)], rule: &ConvergenceRule) -> Verdict {
        let a = assess(rows, rule);
        Verdict {
            criterion: criterion.into(),
            check: check.into(),
            passed: a.passed,
            informational: false,
            detail: a.note.clone(),
            convergence: Some(a),
        }
    }

    fn bound(&self, criterion: &str, check: &str, rows: &[(usize, f64)], tol: f64) -> Verdict {
        let worst = max_of(rows.iter().map(|r| &r.1));
        Verdict {
            criterion: criterion.into(),
            check: check.into(),
            passed: worst <= tol,
            informational: false,
            detail: format!("max {worst:.3e} against {tol:.0e}"),
            convergence: None,
        }
    }

    fn metric(&self, spec: &MetricSpec, n: usize) -> Result<MetricField> {
        preset(&spec.preset, &spec.params, &grid(n)?)
    }

    fn rows(&self, mut f: impl FnMut(usize) -> Result<ResolutionRow>) -> Result<Vec<ResolutionRow>> {
        self.cfg.resolutions.iter().map(|&n| f(n)).collect()
    }

    fn curvature(&self, spec: &MetricSpec) -> Result<SuiteResult> {
        let fd = self.cfg.fd_order;
        let property = lookup(&spec.preset)?.property;
        let rows = self.rows(|n| {
            let g = self.metric(spec, n)?;
            let pack = curvature_pack(&g, fd)?;
            let b = pack.bach()?;
            let mut d = BTreeMap::new();
            d.insert("bach_trace".to_string(), trace(b, &g)?.sup_norm());
            match property {
                PresetProperty::Flat => {
                    let x = TensorField::from_fn(g.grid(), vec![Slot::Contra], |_, v| {
                        v.copy_from_slice(&[1.0, -2.0, 0.5, 3.0])
                    });
                    d.insert("christoffel".into(), pack.connection.sup_norm());
                    d.insert("riemann".into(), pack.riemann.sup_norm());
                    d.insert("ricci".into(), pack.ricci.sup_norm());
                    d.insert("scalar".into(), pack.scalar.sup_norm());
                    d.insert("schouten".into(), pack.schouten.sup_norm());
                    d.insert("weyl".into(), pack.weyl.sup_norm());
                    d.insert("cotton".into(), pack.cotton.sup_norm());
                    d.insert("bach".into(), b.sup_norm());
                    d.insert("killing_constant".into(), killing(&g, &pack.connection, &x)?.sup_norm());
                }
                PresetProperty::ConformallyFlat => {
                    let scale = bach_scale(&g, fd)?;
                    d.insert("bach".into(), b.sup_norm() / scale);
                }
                PresetProperty::Generic => {
                    let div = divergence_covariant(b, &g, &pack.connection)?.sup_norm();
                    let grad = covariant_derivative(b, &pack.connection, fd)?.sup_norm();
                    d.insert("divergence".into(), if grad == 0.0 { 0.0 } else { div / grad });
                }
            }
            row(n, d)
        })?;
        let key = match property {
            PresetProperty::Flat => None,
            PresetProperty::ConformallyFlat => Some("bach"),
            PresetProperty::Generic => Some("divergence"),
        };
        let series = |k: &str| rows.iter().map(|r| (r.resolution, r.details[k])).collect::<Vec<_>>();
        let mut verdicts = Vec::new();
        match key {
            None => {
                let all: Vec<(usize, f64)> = rows
                    .iter()
                    .map(|r| (r.resolution, max_of(r.details.iter().filter(|(k, _)| *k != "bach_trace").map(|(_, v)| v))))
                    .collect();
                verdicts.push(self.bound(criteria::FLAT_SANITY, "flat curvature and constant Killing", &all, FLAT_TOL));
            }
            Some("bach") => verdicts.push(self.convergence(criteria::BACH_STRUCTURE, "Bach tensor vanishes", &series("bach"))),
            Some(k) => verdicts.push(self.convergence(criteria::BACH_STRUCTURE, "Bach tensor is divergence-free", &series(k))),
        }
        verdicts.push(self.bound(criteria::BACH_STRUCTURE, "Bach tensor is trace-free", &series("bach_trace"), BACH_TRACE_TOL));
        Ok(SuiteResult {
            suite: Suite::Curvature.name().into(),
            metric: Some(spec.label()),
            rows,
            verdicts,
            draw_seeds: Vec::new(),
            symbol: None,
            error: None,
        })
    }

    fn covariance(&self, spec: &MetricSpec) -> Result<SuiteResult> {
        let fd = self.cfg.fd_order;
        let rows = self.rows(|n| {
            let g = self.metric(spec, n)?;
            let u = sample_upsilon(self.cfg, g.grid())?;
            let gh = rescale(&g, &u)?;
            let b = bach(&g, fd)?;
            let bh = bach(&gh, fd)?;
            let scale = bach_scale(&g, fd)?.max(bach_scale(&gh, fd)?);
            let mut d = BTreeMap::new();
            d.insert("weight".into(), weight_check_scaled(&b, &bh, &u, -2.0, scale)?);
            row(n, d)
        })?;
        let series: Vec<(usize, f64)> = rows.iter().map(|r| (r.resolution, r.residual)).collect();
        Ok(self.result(
            Suite::ConformalCovariance,
            spec,
            rows,
            vec![self.convergence(criteria::COVARIANCE, "Bach tensor has conformal weight -2", &series)],
            Vec::new(),
        ))
    }

    fn trace_identity(&self, spec: &MetricSpec) -> Result<SuiteResult> {
        let fd = self.cfg.fd_order;
        let plan = &self.cfg.linearization;
        let seeds = self.seeds(Suite::TraceIdentity);
        let rows = self.rows(|n| {
            let g = self.metric(spec, n)?;
            let b = bach(&g, fd)?;
            let mut d = BTreeMap::new();
            for (i, &s) in seeds.iter().enumerate() {
                let w = random_scalar(s, g.grid(), self.cfg.max_frequency)?;
                let h = g.g().scale_by(&w)?;
                let lhs = linearized_bach(&g, &h, plan, fd)?.value;
                let rhs = b.scale_by(&w)?.scale(-1.0);
                d.insert(draw_key(i), relative_residual(&lhs, &rhs, fourth_order_scale(&h, fd)?)?);
            }
            row(n, d)
        })?;
        Ok(self.draw_result(Suite::TraceIdentity, spec, rows, criteria::TRACE_IDENTITY, "B(wg) = -w Bach", seeds, false))
    }

    fn naturality(&self, spec: &MetricSpec) -> Result<SuiteResult> {
        let fd = self.cfg.fd_order;
        let plan = &self.cfg.linearization;
        let seeds = self.seeds(Suite::Naturality);
        let rows = self.rows(|n| {
            let g = self.metric(spec, n)?;
            let conn = christoffel(&g, fd)?;
            let b = bach(&g, fd)?;
            let mut d = BTreeMap::new();
            for (i, &s) in seeds.iter().enumerate() {
                let x = random_vector(s, g.grid(), self.cfg.max_frequency)?;
                let lhs = lie_derivative(&g, &conn, &x, &b)?;
                let kx = killing(&g, &conn, &x)?;
                let rhs = linearized_bach(&g, &kx, plan, fd)?.value;
                d.insert(draw_key(i), relative_residual(&lhs, &rhs, fourth_order_scale(&kx, fd)?)?);
            }
            row(n, d)
        })?;
        Ok(self.draw_result(Suite::Naturality, spec, rows, criteria::NATURALITY, "L_X Bach = B(KX)", seeds, false))
    }

    /// Whether the metric is Bach-flat at every resolution, measured.
    fn bach_flat(&self, rows: &[ResolutionRow]) -> bool {
        rows.iter().all(|r| r.details.get("bach_size").is_some_and(|&s| s <= BACH_FLAT_TOL))
    }

    fn bach_size(&self, g: &MetricField) -> Result<f64> {
        let fd = self.cfg.fd_order;
        let scale = bach_scale(g, fd)?;
        let b = bach(g, fd)?.sup_norm();
        Ok(if scale == 0.0 { b } else { b / scale })
    }

    fn complex_property(&self, spec: &MetricSpec) -> Result<SuiteResult> {
        let fd = self.cfg.fd_order;
        let plan = &self.cfg.linearization;
        let seeds = self.seeds(Suite::ComplexProperty);
        let mut sizes = Vec::new();
        let rows = self.rows(|n| {
            let g = self.metric(spec, n)?;
            let conn = christoffel(&g, fd)?;
            let mut d = BTreeMap::new();
            for (i, &s) in seeds.iter().enumerate() {
                let x = random_vector(s, g.grid(), self.cfg.max_frequency)?;
                let k0 = conformal_killing(&g, &conn, &x)?;
                let bk = linearized_bach(&g, &k0, plan, fd)?.value;
                let scale = fourth_order_scale(&k0, fd)?;
                d.insert(draw_key(i), if scale == 0.0 { bk.sup_norm() } else { bk.sup_norm() / scale });
            }
            sizes.push(self.bach_size(&g)?);
            row(n, d)
        })?;
        let mut rows = rows;
        attach_sizes(&mut rows, &sizes);
        let informational = !self.bach_flat(&rows);
        Ok(self.draw_result(Suite::ComplexProperty, spec, rows, criteria::COMPLEX, "B K0 X = 0", seeds, informational))
    }

    fn self_adjointness(&self, spec: &MetricSpec) -> Result<SuiteResult> {
        let fd = self.cfg.fd_order;
        let plan = &self.cfg.linearization;
        // cyclic pairs (h_i, h_{i+1}) reuse every B h_i twice
        let count = self.cfg.draws.max(2);
        let seeds: Vec<u64> = (0..count).map(|i| draw_seed(self.cfg.seed, Suite::SelfAdjointness.name(), i)).collect();
        let mut sizes = Vec::new();
        let rows = self.rows(|n| {
            let g = self.metric(spec, n)?;
            let hs = seeds
                .iter()
                .map(|&s| random_tracefree(s, &g, self.cfg.max_frequency))
                .collect::<Result<Vec<_>>>()?;
            let bh = hs
                .iter()
                .map(|h| linearized_bach(&g, h, plan, fd).map(|l| l.value))
                .collect::<Result<Vec<_>>>()?;
            let mut d = BTreeMap::new();
            let pairs = if count == 2 { 1 } else { count };
            for i in 0..pairs {
                let j = (i + 1) % count;
                let lhs = inner_product(&bh[i], &hs[j], &g)?;
                let rhs = inner_product(&hs[i], &bh[j], &g)?;
                let denom = l2_norm(&bh[i], &g)? * l2_norm(&hs[j], &g)? + l2_norm(&hs[i], &g)? * l2_norm(&bh[j], &g)?;
                d.insert(format!("pair{i}"), if denom == 0.0 { 0.0 } else { (lhs - rhs).abs() / denom });
            }
            sizes.push(self.bach_size(&g)?);
            row(n, d)
        })?;
        let mut rows = rows;
        attach_sizes(&mut rows, &sizes);
        let informational = !self.bach_flat(&rows);
        Ok(self.draw_result(
            Suite::SelfAdjointness,
            spec,
            rows,
            criteria::SELF_ADJOINT,
            "<Bh1,h2> = <h1,Bh2>",
            seeds,
            informational,
        ))
    }

    fn bi_invariance(&self, spec: &MetricSpec) -> Result<SuiteResult> {
        let fd = self.cfg.fd_order;
        let plan = &self.cfg.linearization;
        let seeds = self.seeds(Suite::BiInvariance);
        let rows = self.rows(|n| {
            let g = self.metric(spec, n)?;
            let u = sample_upsilon(self.cfg, g.grid())?;
            let gh = rescale(&g, &u)?;
            let up = u.map(|v| (2.0 * v).exp());
            let down = u.map(|v| (-2.0 * v).exp());
            let mut d = BTreeMap::new();
            for (i, &s) in seeds.iter().enumerate() {
                let h = random_tracefree(s, &g, self.cfg.max_frequency)?;
                let hh = h.scale_by(&up)?;
                let lhs = linearized_bach(&gh, &hh, plan, fd)?.value;
                let rhs = linearized_bach(&g, &h, plan, fd)?.value.scale_by(&down)?;
                d.insert(draw_key(i), relative_residual(&lhs, &rhs, fourth_order_scale(&h, fd)?)?);
            }
            row(n, d)
        })?;
        Ok(self.draw_result(
            Suite::BiInvariance,
            spec,
            rows,
            criteria::BI_INVARIANCE,
            "B^(e^2u g)(e^2u h) = e^-2u B^g h",
            seeds,
            false,
        ))
    }

    fn adjoint_pair(&self, spec: &MetricSpec) -> Result<SuiteResult> {
        let fd = self.cfg.fd_order;
        let seeds = self.seeds(Suite::AdjointPair);
        let rows = self.rows(|n| {
            let g = self.metric(spec, n)?;
            let conn = christoffel(&g, fd)?;
            let mut d = BTreeMap::new();
            for (i, &s) in seeds.iter().enumerate() {
                let x = random_vector(s, g.grid(), self.cfg.max_frequency)?;
                let h = random_tracefree(super::random::mix(s), &g, self.cfg.max_frequency)?;
                let kx = conformal_killing(&g, &conn, &x)?;
                let ah = k0_adjoint(&g, &conn, &h)?;
                let xl = lower_index(&x, 0, &g)?;
                let lhs = inner_product(&kx, &h, &g)?;
                let rhs = inner_product(&ah, &xl, &g)?;
                let denom = l2_norm(&kx, &g)? * l2_norm(&h, &g)? + l2_norm(&x, &g)? * l2_norm(&ah, &g)?;
                d.insert(draw_key(i), if denom == 0.0 { 0.0 } else { (lhs - rhs).abs() / denom });
            }
            row(n, d)
        })?;
        let series: Vec<(usize, f64)> = rows.iter().map(|r| (r.resolution, r.residual)).collect();
        let verdict = self.bound(criteria::ADJOINT_PAIR, "<K0 X, h> = <X, K0* h>", &series, ADJOINT_TOL);
        Ok(self.result(Suite::AdjointPair, spec, rows, vec![verdict], seeds))
    }

    fn symbol(&self) -> Result<SuiteResult> {
        let sc = &self.cfg.symbol;
        let seed = draw_seed(self.cfg.seed, Suite::Symbol.name(), 0);
        let (summary, trials) = ellipticity_trials(sc.trials, sc.tol, seed)?;
        let mut d = BTreeMap::new();
        d.insert("max_angle".to_string(), summary.max_angle);
        d.insert("homogeneity".to_string(), summary.max_homogeneity_deviation);
        let rows = self
            .cfg
            .resolutions
            .iter()
            .map(|&n| row(n, d.clone()))
            .collect::<Result<Vec<_>>>()?;
        let passed = summary.passed(HOMOGENEITY_TOL);
        let verdict = Verdict {
            criterion: criteria::ELLIPTICITY.into(),
            check: "im sigma(K0) = ker sigma(B)".into(),
            passed,
            informational: false,
            detail: format!(
                "{}/{} exact, {}/{} ranks (4,5,5), {}/{} exact with random Gram form, max angle {:.2e}, homogeneity {:.2e}",
                summary.exact,
                summary.trials,
                summary.ranks_ok,
                summary.trials,
                summary.exact_with_random_gram,
                summary.trials,
                summary.max_angle,
                summary.max_homogeneity_deviation
            ),
            convergence: None,
        };
        Ok(SuiteResult {
            suite: Suite::Symbol.name().into(),
            metric: None,
            rows,
            verdicts: vec![verdict],
            draw_seeds: vec![seed],
            symbol: Some(SymbolDiagnostics { summary, trials }),
            error: None,
        })
    }

    fn crosscheck(&self) -> Result<SuiteResult> {
        let fd = self.cfg.fd_order;
        let sc = &self.cfg.symbol;
        let frame = PointFrame::identity(sc.covector.map(|v| v as f64))?;
        let kernel = kernel_direction(&frame)?;
        let transverse = transverse_direction(&frame)?;
        let rows = self.rows(|n| {
            let g = MetricField::flat(&grid(n)?);
            let mut d = BTreeMap::new();
            d.insert(
                "kernel".into(),
                symbol_crosscheck(&g, sc.covector, sc.frequency, &kernel, &self.cfg.linearization, fd)?,
            );
            d.insert(
                "transverse".into(),
                symbol_crosscheck(&g, sc.covector, sc.frequency, &transverse, &self.cfg.linearization, fd)?,
            );
            row(n, d)
        })?;
        let series = |k: &str| rows.iter().map(|r| (r.resolution, r.details[k])).collect::<Vec<_>>();
        let verdicts = vec![
            self.convergence(criteria::CROSSCHECK, "h0 in ker sigma(B)", &series("kernel")),
            self.convergence(criteria::CROSSCHECK, "h0 orthogonal to ker sigma(B)", &series("transverse")),
        ];
        Ok(SuiteResult {
            suite: Suite::Crosscheck.name().into(),
            metric: None,
            rows,
            verdicts,
            draw_seeds: Vec::new(),
            symbol: None,
            error: None,
        })
    }

    fn result(&self, suite: Suite, spec: &MetricSpec, rows: Vec<ResolutionRow>, verdicts: Vec<Verdict>, draw_seeds: Vec<u64>) -> SuiteResult {
        SuiteResult {
            suite: suite.name().into(),
            metric: Some(spec.label()),
            rows,
            verdicts,
            draw_seeds,
            symbol: None,
            error: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn draw_result(
        &self,
        suite: Suite,
        spec: &MetricSpec,
        rows: Vec<ResolutionRow>,
        criterion: &str,
        check: &str,
        seeds: Vec<u64>,
        informational: bool,
    ) -> SuiteResult {
        let series: Vec<(usize, f64)> = rows.iter().map(|r| (r.resolution, r.residual)).collect();
        let mut v = self.convergence(criterion, check, &series);
        if informational {
            v.informational = true;
            v.detail = format!("metric is not Bach-flat, identity not asserted; {}", v.detail);
        }
        self.result(suite, spec, rows, vec![v], seeds)
    }

    fn run_one(&self, suite: Suite, spec: Option<&MetricSpec>) -> Result<SuiteResult> {
        match (suite, spec) {
            (Suite::Curvature, Some(m)) => self.curvature(m),
            (Suite::ConformalCovariance, Some(m)) => self.covariance(m),
            (Suite::TraceIdentity, Some(m)) => self.trace_identity(m),
            (Suite::Naturality, Some(m)) => self.naturality(m),
            (Suite::ComplexProperty, Some(m)) => self.complex_property(m),
            (Suite::SelfAdjointness, Some(m)) => self.self_adjointness(m),
            (Suite::BiInvariance, Some(m)) => self.bi_invariance(m),
            (Suite::AdjointPair, Some(m)) => self.adjoint_pair(m),
            (Suite::Symbol, _) => self.symbol(),
            (Suite::Crosscheck, _) => self.crosscheck(),
            (s, None) => Err(Error::Config(format!("suite `{s}` needs a metric"))),
        }
    }
}

/// Record the measured relative Bach size next to the residuals; it is not
/// part of the headline residual.
fn attach_sizes(rows: &mut [ResolutionRow], sizes: &[f64]) {
    for (r, &s) in rows.iter_mut().zip(sizes) {
        r.details.insert("bach_size".into(), s);
    }
}

/// Run every requested suite, reporting progress through `progress`.
pub fn run_suite_with_progress(config: &SuiteConfig, progress: &mut dyn FnMut(&str)) -> Result<Report> {
    config.validate()?;
    // degenerate presets are configuration errors, caught before any work
    for m in &config.metrics {
        for &n in &config.resolutions {
            preset(&m.preset, &m.params, &grid(n)?)
                .map_err(|e| Error::Config(format!("metric `{}` at N = {n}: {e}", m.label())))?;
        }
    }
    let run = Run {
        cfg: config,
        rule: ConvergenceRule::derivative(config.fd_order),
    };
    let mut report = Report::new(config);
    for &suite in &config.suites {
        let specs: Vec<Option<&MetricSpec>> = if suite.per_metric() {
            config.metrics.iter().map(Some).collect()
        } else {
            vec![None]
        };
        for spec in specs {
            let label = spec.map(|m| format!("{suite} [{}]", m.label())).unwrap_or_else(|| suite.to_string());
            progress(&label);
            let result = run.run_one(suite, spec).unwrap_or_else(|e| SuiteResult {
                suite: suite.name().into(),
                metric: spec.map(|m| m.label()),
                rows: Vec::new(),
                verdicts: Vec::new(),
                draw_seeds: Vec::new(),
                symbol: None,
                error: Some(e.to_string()),
            });
            report.push(result);
        }
    }
    Ok(report)
}

/// Run every requested suite on every configured metric and resolution.
pub fn run_suite(config: &SuiteConfig) -> Result<Report> {
    run_suite_with_progress(config, &mut |_| {})
}
