//! The versioned TOML configuration of a verification run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conformal::{lookup, PresetParams};
use crate::error::{Error, Result};
use crate::exprlang::parse;
use crate::grid::FD_ORDERS;
use crate::operators::LinearizationPlan;
use crate::symbol::DEFAULT_ANGLE_TOL;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// The checks a run can perform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Curvature,
    ConformalCovariance,
    TraceIdentity,
    Naturality,
    ComplexProperty,
    SelfAdjointness,
    BiInvariance,
    AdjointPair,
    Symbol,
    Crosscheck,
}

impl Suite {
    pub const ALL: [Suite; 10] = [
        Suite::Curvature,
        Suite::ConformalCovariance,
        Suite::TraceIdentity,
        Suite::Naturality,
        Suite::ComplexProperty,
        Suite::SelfAdjointness,
        Suite::BiInvariance,
        Suite::AdjointPair,
        Suite::Symbol,
        Suite::Crosscheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Curvature => "curvature",
            Suite::ConformalCovariance => "conformal_covariance",
            Suite::TraceIdentity => "trace_identity",
            Suite::Naturality => "naturality",
            Suite::ComplexProperty => "complex_property",
            Suite::SelfAdjointness => "self_adjointness",
            Suite::BiInvariance => "bi_invariance",
            Suite::AdjointPair => "adjoint_pair",
            Suite::Symbol => "symbol",
            Suite::Crosscheck => "crosscheck",
        }
    }

    /// Whether the suite runs once per configured metric.
    pub fn per_metric(self) -> bool {
        !matches!(self, Suite::Symbol | Suite::Crosscheck)
    }

    /// Whether the verdict is a convergence study across resolutions.
    pub fn needs_convergence(self) -> bool {
        !matches!(self, Suite::Symbol | Suite::AdjointPair)
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Suite> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}`; expected one of {}", suite_list())))
    }
}

fn suite_list() -> String {
    Suite::ALL.map(|s| s.name()).join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Format> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!("unknown format `{other}`; expected json or csv"))),
        }
    }
}

/// A preset name with parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub preset: String,
    #[serde(default)]
    pub params: PresetParams,
}

impl MetricSpec {
    pub fn named(preset: &str) -> MetricSpec {
        MetricSpec {
            preset: preset.to_string(),
            params: PresetParams::new(),
        }
    }

    /// The preset name with any parameter overrides, as shown in reports.
    pub fn label(&self) -> String {
        if self.params.is_empty() {
            self.preset.clone()
        } else {
            let ps: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            format!("{}[{}]", self.preset, ps.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymbolConfig {
    pub trials: usize,
    pub tol: f64,
    /// integer covector of the grid and symbol comparison
    pub covector: [i64; 4],
    pub frequency: i64,
}

impl Default for SymbolConfig {
    fn default() -> Self {
        SymbolConfig {
            trials: 100,
            tol: DEFAULT_ANGLE_TOL,
            covector: [1, 2, 0, 0],
            frequency: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub format: Format,
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub schema_version: u32,
    pub metrics: Vec<MetricSpec>,
    pub resolutions: Vec<usize>,
    pub fd_order: usize,
    pub seed: u64,
    pub suites: Vec<Suite>,
    /// random field draws per check
    pub draws: usize,
    /// largest integer wave-number component of random fields
    pub max_frequency: u32,
    /// conformal factor Υ for covariance and bi-invariance checks
    pub upsilon: String,
    pub linearization: LinearizationPlan,
    pub symbol: SymbolConfig,
    pub output: OutputConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            metrics: vec![MetricSpec::named("bumpy")],
            resolutions: vec![12, 16, 24],
            fd_order: 6,
            seed: 0,
            suites: Suite::ALL.to_vec(),
            draws: 5,
            max_frequency: 3,
            upsilon: "0.1*sin(x1)".into(),
            linearization: LinearizationPlan::default(),
            symbol: SymbolConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl SuiteConfig {
    /// Parse and validate TOML text. Syntax and type errors carry the line
    /// and column reported by the TOML parser.
    pub fn from_toml(src: &str) -> Result<SuiteConfig> {
        let cfg: SuiteConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<SuiteConfig> {
        let src = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        SuiteConfig::from_toml(&src).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("`{key}`: {msg}")));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(
                "schema_version",
                format!("unsupported version {}, expected {CONFIG_SCHEMA_VERSION}", self.schema_version),
            );
        }
        if !FD_ORDERS.contains(&self.fd_order) {
            return bad("fd_order", format!("{} is not one of {FD_ORDERS:?}", self.fd_order));
        }
        if self.resolutions.is_empty() {
            return bad("resolutions", "at least one resolution is required".into());
        }
        for (i, &n) in self.resolutions.iter().enumerate() {
            if n < self.fd_order + 1 {
                return bad(
                    &format!("resolutions[{i}]"),
                    format!("{n} points cannot carry an order-{} stencil (need {})", self.fd_order, self.fd_order + 1),
                );
            }
            if i > 0 && n <= self.resolutions[i - 1] {
                return bad(&format!("resolutions[{i}]"), "resolutions must increase strictly".into());
            }
        }
        if self.resolutions.len() < 2 && self.suites.iter().any(|s| s.needs_convergence()) {
            return bad("resolutions", "convergence verdicts need at least two resolutions".into());
        }
        for (i, s) in self.suites.iter().enumerate() {
            if self.suites[..i].contains(s) {
                return bad(&format!("suites[{i}]"), format!("`{s}` is listed twice"));
            }
        }
        if self.metrics.is_empty() && self.suites.iter().any(|s| s.per_metric()) {
            return bad("metrics", "metric suites need at least one metric".into());
        }
        for (i, m) in self.metrics.iter().enumerate() {
            let key = format!("metrics[{i}]");
            let p = lookup(&m.preset).map_err(|e| Error::Config(format!("`{key}.preset`: {e}")))?;
            for k in m.params.keys() {
                if !p.defaults.iter().any(|(d, _)| d == k) {
                    return bad(&format!("{key}.params.{k}"), format!("preset `{}` has no such parameter", p.name));
                }
            }
        }
        if self.draws == 0 {
            return bad("draws", "at least one draw is required".into());
        }
        if self.max_frequency == 0 {
            return bad("max_frequency", "random fields need a positive frequency bound".into());
        }
        let u = parse(&self.upsilon).map_err(|e| Error::Config(format!("`upsilon`: {e}")))?;
        if u.max_coordinate() > 4 {
            return bad("upsilon", "coordinates run from x1 to x4".into());
        }
        if !u.param_names().is_empty() {
            return bad("upsilon", "the conformal factor cannot use parameters".into());
        }
        self.linearization
            .validate()
            .map_err(|e| Error::Config(format!("`linearization`: {e}")))?;
        if self.symbol.trials == 0 {
            return bad("symbol.trials", "at least one trial is required".into());
        }
        if !(self.symbol.tol > 0.0) {
            return bad("symbol.tol", "the angle tolerance must be positive".into());
        }
        if self.symbol.covector.iter().all(|&v| v == 0) {
            return bad("symbol.covector", "the covector must be nonzero".into());
        }
        if self.symbol.frequency < 0 {
            return bad("symbol.frequency", "the frequency must be nonnegative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = SuiteConfig::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        assert_eq!(SuiteConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn parses_a_full_file() {
        let src = r#"
schema_version = 1
resolutions = [12, 16]
fd_order = 4
seed = 7
suites = ["curvature", "naturality"]

[[metrics]]
preset = "bumpy"
params = { a = 0.02, s34 = "cos(x1)" }

[[metrics]]
preset = "flat"

[linearization]
t0 = 2e-3

[output]
format = "csv"
"#;
        let c = SuiteConfig::from_toml(src).unwrap();
        assert_eq!(c.metrics.len(), 2);
        assert_eq!(c.metrics[0].label(), "bumpy[a=0.02,s34=cos(x1)]");
        assert_eq!(c.linearization.richardson_levels, 2);
        assert_eq!(c.output.format, Format::Csv);
        assert_eq!(c.suites, vec![Suite::Curvature, Suite::Naturality]);
    }

    #[test]
    fn reports_positions_and_keys() {
        let e = SuiteConfig::from_toml("schema_version = 1\nresolutions = [12, \n").unwrap_err();
        assert!(e.to_string().contains("line"), "{e}");
        let e = SuiteConfig::from_toml("schema_version = 1\nbogus = 3\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = SuiteConfig::from_toml("schema_version = 1\nsuites = [\"nope\"]\n").unwrap_err();
        assert!(e.to_string().contains("nope"), "{e}");
        let e = SuiteConfig::from_toml("schema_version = 1\nresolutions = [12, 6]\n").unwrap_err();
        assert!(e.to_string().contains("resolutions[1]"), "{e}");
        let e = SuiteConfig::from_toml("schema_version = 2\n").unwrap_err();
        assert!(e.to_string().contains("schema_version"), "{e}");
        let e = SuiteConfig::from_toml("schema_version = 1\n[[metrics]]\npreset = \"bumpy\"\nparams = { q = 1 }\n").unwrap_err();
        assert!(e.to_string().contains("metrics[0].params.q"), "{e}");
        let e = SuiteConfig::from_toml("schema_version = 1\nupsilon = \"sin(x1\"\n").unwrap_err();
        assert!(e.to_string().contains("upsilon"), "{e}");
        let e = SuiteConfig::from_toml("schema_version = 1\nresolutions = [12]\n").unwrap_err();
        assert!(e.to_string().contains("two resolutions"), "{e}");
        let one = SuiteConfig::from_toml("schema_version = 1\nresolutions = [12]\nsuites = [\"symbol\"]\n");
        assert!(one.is_ok());
    }
}
