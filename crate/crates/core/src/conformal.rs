//! Conformal rescaling ĝ = e^{2Υ}g, conformal-weight checks and the
//! library of preset metrics.
//!
//! ```
//! use detour::conformal::{preset, PresetParams};
//! use detour::grid::ChartGrid;
//!
//! let grid = ChartGrid::new(4, 8).unwrap();
//! let g = preset("conf_flat", &PresetParams::new(), &grid).unwrap();
//! assert!(g.is_riemannian());
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exprlang::{parse, Expr, Params};
use crate::grid::{same_grid, ChartGrid, ScalarField};
use crate::tensor::{MetricField, TensorField};

/// ĝ = e^{2Υ}g with the inverse and volume density recomputed.
pub fn rescale(g: &MetricField, upsilon: &ScalarField) -> Result<MetricField> {
    same_grid(g.grid(), upsilon.grid())?;
    let factor = upsilon.map(|u| (2.0 * u).exp());
    if factor.values().iter().any(|v| !v.is_finite() || *v == 0.0) {
        return Err(Error::NonFinite("conformal factor e^{2Υ}".into()));
    }
    MetricField::new(g.g().scale_by(&factor)?)
}

/// A conformal change of metric together with its conformal factor.
#[derive(Debug, Clone)]
pub struct ConformalChange {
    pub upsilon: ScalarField,
    pub base: MetricField,
    pub rescaled: MetricField,
}

impl ConformalChange {
    pub fn new(base: &MetricField, upsilon: &ScalarField) -> Result<ConformalChange> {
        Ok(ConformalChange {
            upsilon: upsilon.clone(),
            base: base.clone(),
            rescaled: rescale(base, upsilon)?,
        })
    }

    /// e^{wΥ} T, the value a weight-w tensor is expected to take at ĝ.
    pub fn weighted(&self, t: &TensorField, w: f64) -> Result<TensorField> {
        t.scale_by(&self.upsilon.map(|u| (w * u).exp()))
    }
}

/// Relative sup-norm of T_ĝ − e^{wΥ}T_g, normalised by the larger of the
/// two sides. Both sides vanishing gives 0.
pub fn weight_check(t_g: &TensorField, t_hat: &TensorField, upsilon: &ScalarField, w: f64) -> Result<f64> {
    weight_check_scaled(t_g, t_hat, upsilon, w, 0.0)
}

/// As [`weight_check`], with the denominator bounded below by `scale`.
/// Used where both sides can be small compared with the terms that cancel
/// inside them, as for the Bach tensor near a conformally flat metric.
pub fn weight_check_scaled(
    t_g: &TensorField,
    t_hat: &TensorField,
    upsilon: &ScalarField,
    w: f64,
    scale: f64,
) -> Result<f64> {
    same_grid(t_g.grid(), upsilon.grid())?;
    let expected = t_g.scale_by(&upsilon.map(|u| (w * u).exp()))?;
    let diff = t_hat.sub(&expected)?.sup_norm();
    let denom = t_hat.sup_norm().max(expected.sup_norm()).max(scale);
    Ok(if denom == 0.0 { 0.0 } else { diff / denom })
}

/// A preset parameter: a number or an expression in x1..x4 and the numeric
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Expr(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Number(v) => write!(f, "{v}"),
            ParamValue::Expr(s) => write!(f, "{s}"),
        }
    }
}

pub type PresetParams = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetProperty {
    Flat,
    ConformallyFlat,
    Generic,
}

impl PresetProperty {
    /// Whether the Bach tensor vanishes identically (obstruction-flat).
    pub fn bach_flat(self) -> bool {
        matches!(self, PresetProperty::Flat | PresetProperty::ConformallyFlat)
    }
}

/// A registered metric family on the 4-torus of period 2π.
#[derive(Debug, Clone, Serialize)]
pub struct MetricPreset {
    pub name: &'static str,
    pub dimension: usize,
    pub property: PresetProperty,
    pub summary: &'static str,
    /// Parameters with their default values.
    pub defaults: Vec<(&'static str, ParamValue)>,
}

const BUMPY_S: [(&str, &str); 10] = [
    ("s11", "sin(x2+x3)"),
    ("s12", "cos(x3+x4)"),
    ("s13", "0"),
    ("s14", "0"),
    ("s22", "cos(x1-x4)"),
    ("s23", "0"),
    ("s24", "0"),
    ("s33", "sin(x1)*cos(x2)"),
    ("s34", "sin(x1+x2)"),
    ("s44", "0"),
];

const COMPONENTS: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];

const CUSTOM_KEYS: [&str; 10] = ["g11", "g12", "g13", "g14", "g22", "g23", "g24", "g33", "g34", "g44"];

/// Every registered preset with its defaults.
pub fn presets() -> Vec<MetricPreset> {
    let num = |v: f64| ParamValue::Number(v);
    let ex = |s: &str| ParamValue::Expr(s.to_string());
    let mut bumpy = vec![("a", num(0.05))];
    bumpy.extend(BUMPY_S.iter().map(|&(k, v)| (k, ex(v))));
    let custom = CUSTOM_KEYS
        .iter()
        .zip(COMPONENTS)
        .map(|(&k, (i, j))| (k, ex(if i == j { "1" } else { "0" })))
        .collect();
    vec![
        MetricPreset {
            name: "flat",
            dimension: 4,
            property: PresetProperty::Flat,
            summary: "the Euclidean metric δ",
            defaults: vec![],
        },
        MetricPreset {
            name: "conf_flat",
            dimension: 4,
            property: PresetProperty::ConformallyFlat,
            summary: "e^{2u}δ for an expression u",
            defaults: vec![("u", ex("0.1*sin(x1)*cos(x2)"))],
        },
        MetricPreset {
            name: "bumpy",
            dimension: 4,
            property: PresetProperty::Generic,
            summary: "δ + a·s for a symmetric expression-valued s; Bach tensor nonzero",
            defaults: bumpy,
        },
        MetricPreset {
            name: "diagonal",
            dimension: 4,
            property: PresetProperty::Generic,
            summary: "diag(1 + a·sin x1·sin x2, 1, 1, 1)",
            defaults: vec![("a", num(0.1))],
        },
        MetricPreset {
            name: "custom",
            dimension: 4,
            property: PresetProperty::Generic,
            summary: "all ten components g11..g44 as expressions",
            defaults: custom,
        },
    ]
}

pub fn lookup(name: &str) -> Result<MetricPreset> {
    presets()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

/// Resolve user parameters against the defaults. Numeric parameters must
/// stay numeric; expression parameters also accept plain numbers.
fn resolve(p: &MetricPreset, params: &PresetParams) -> Result<(Params, BTreeMap<String, String>)> {
    for key in params.keys() {
        if !p.defaults.iter().any(|(k, _)| k == key) {
            return Err(Error::Config(format!("preset `{}` has no parameter `{key}`", p.name)));
        }
    }
    let mut numbers = Params::new();
    let mut exprs = BTreeMap::new();
    for (key, default) in &p.defaults {
        let value = params.get(*key).unwrap_or(default);
        match (default, value) {
            (ParamValue::Number(_), ParamValue::Number(v)) => {
                numbers.insert(key.to_string(), *v);
            }
            (ParamValue::Number(_), ParamValue::Expr(_)) => {
                return Err(Error::Config(format!("parameter `{key}` of `{}` must be a number", p.name)));
            }
            (ParamValue::Expr(_), v) => {
                exprs.insert(key.to_string(), v.to_string());
            }
        }
    }
    Ok((numbers, exprs))
}

/// Component expressions g_ij for i ≤ j, in the order of [`COMPONENTS`].
fn component_sources(name: &str, exprs: &BTreeMap<String, String>) -> Result<Vec<String>> {
    let dot = |i: usize, j: usize| if i == j { "1" } else { "0" };
    Ok(match name {
        "flat" => COMPONENTS.iter().map(|&(i, j)| dot(i, j).to_string()).collect(),
        "conf_flat" => COMPONENTS
            .iter()
            .map(|&(i, j)| if i == j { format!("exp(2*({}))", exprs["u"]) } else { "0".into() })
            .collect(),
        "bumpy" => COMPONENTS
            .iter()
            .map(|&(i, j)| format!("{} + a*({})", dot(i, j), exprs[&format!("s{}{}", i + 1, j + 1)]))
            .collect(),
        "diagonal" => COMPONENTS
            .iter()
            .map(|&(i, j)| if (i, j) == (0, 0) { "1 + a*sin(x1)*sin(x2)".into() } else { dot(i, j).into() })
            .collect(),
        "custom" => COMPONENTS
            .iter()
            .map(|&(i, j)| exprs[&format!("g{}{}", i + 1, j + 1)].clone())
            .collect(),
        other => return Err(Error::UnknownPreset(other.to_string())),
    })
}

fn parse_param(key: &str, src: &str) -> Result<Expr> {
    parse(src).map_err(|e| Error::Config(format!("`{key}` = \"{src}\": {e}")))
}

/// Sample a preset metric on `grid`. Parameters not given take their
/// defaults; expressions may use the numeric parameters by name.
pub fn preset(name: &str, params: &PresetParams, grid: &Arc<ChartGrid>) -> Result<MetricField> {
    let p = lookup(name)?;
    if grid.dim() != p.dimension {
        return Err(Error::Dimension {
            found: grid.dim(),
            reason: "presets are four-dimensional",
        });
    }
    let (numbers, exprs) = resolve(&p, params)?;
    for (k, v) in &exprs {
        parse_param(k, v)?;
    }
    let comps = component_sources(p.name, &exprs)?
        .iter()
        .map(|src| parse(src))
        .collect::<Result<Vec<_>>>()?;
    let sampled: Vec<ScalarField> = comps
        .par_iter()
        .map(|e| e.sample(grid, &numbers))
        .collect::<Result<_>>()?;
    let n = 4;
    let mut data = vec![0.0; grid.len() * n * n];
    data.par_chunks_mut(n * n).enumerate().for_each(|(pt, c)| {
        for (k, &(i, j)) in COMPONENTS.iter().enumerate() {
            let v = sampled[k].values()[pt];
            c[i * n + j] = v;
            c[j * n + i] = v;
        }
    });
    let g = TensorField::from_data(grid, vec![crate::tensor::Slot::Co; 2], data)?.tag_symmetric()?;
    MetricField::new(g)
}

/// The conformal factor u of the `conf_flat` preset, sampled on `grid`.
pub fn conf_flat_factor(params: &PresetParams, grid: &Arc<ChartGrid>) -> Result<ScalarField> {
    let p = lookup("conf_flat")?;
    let (numbers, exprs) = resolve(&p, params)?;
    parse_param("u", &exprs["u"])?.sample(grid, &numbers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{bach, curvature_pack};

    fn sample(grid: &Arc<ChartGrid>, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        ScalarField::from_fn(grid, f)
    }

    #[test]
    fn zero_factor_is_identity() {
        let grid = ChartGrid::new(4, 6).unwrap();
        let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        let h = rescale(&g, &ScalarField::constant(&grid, 0.0)).unwrap();
        assert_eq!(h.g().data(), g.g().data());
    }

    #[test]
    fn constant_factor_scales_inverse() {
        let grid = ChartGrid::new(4, 6).unwrap();
        let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        let c = 0.3;
        let h = rescale(&g, &ScalarField::constant(&grid, c)).unwrap();
        let expected = g.inv().scale((-2.0 * c).exp());
        assert!(h.inv().sub(&expected).unwrap().sup_norm() < 1e-14);
    }

    #[test]
    fn volume_ratio() {
        let grid = ChartGrid::new(4, 8).unwrap();
        let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        let u = sample(&grid, |x| 0.1 * x[0].sin());
        let h = rescale(&g, &u).unwrap();
        for p in 0..grid.len() {
            let want = (0.4 * grid.coords(p)[0].sin()).exp();
            let got = h.vol().values()[p] / g.vol().values()[p];
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn rescaling_composes() {
        let grid = ChartGrid::new(4, 6).unwrap();
        let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        let u1 = sample(&grid, |x| 0.1 * x[0].sin());
        let u2 = sample(&grid, |x| -0.2 * x[2].cos());
        let twice = rescale(&rescale(&g, &u1).unwrap(), &u2).unwrap();
        let once = rescale(&g, &u1.zip_map(&u2, |a, b| a + b).unwrap()).unwrap();
        assert!(twice.g().sub(once.g()).unwrap().sup_norm() < 1e-14);
    }

    #[test]
    fn weight_check_trivial_cases() {
        let grid = ChartGrid::new(4, 6).unwrap();
        let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        let zero = ScalarField::constant(&grid, 0.0);
        assert_eq!(weight_check(g.g(), g.g(), &zero, 3.7).unwrap(), 0.0);
        let t = TensorField::covariant(&grid, 2);
        assert_eq!(weight_check(&t, &t, &zero, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn weyl_has_weight_two() {
        let mut res = Vec::new();
        for n in [12, 16, 24] {
            let grid = ChartGrid::new(4, n).unwrap();
            let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
            let u = sample(&grid, |x| 0.1 * x[0].sin());
            let change = ConformalChange::new(&g, &u).unwrap();
            let c = curvature_pack(&g, 6).unwrap().weyl;
            let ch = curvature_pack(&change.rescaled, 6).unwrap().weyl;
            res.push((n, weight_check(&c, &ch, &u, 2.0).unwrap()));
        }
        let fit = crate::grid::convergence_rate(&res).unwrap();
        assert!(fit.monotone && fit.rate > 5.0, "{res:?}");
    }

    #[test]
    fn preset_registry() {
        let names: Vec<_> = presets().iter().map(|p| p.name).collect();
        assert_eq!(names, ["flat", "conf_flat", "bumpy", "diagonal", "custom"]);
        let grid = ChartGrid::new(4, 6).unwrap();
        assert!(matches!(preset("round", &PresetParams::new(), &grid), Err(Error::UnknownPreset(_))));
        let mut bad = PresetParams::new();
        bad.insert("b".into(), ParamValue::Number(1.0));
        assert!(matches!(preset("bumpy", &bad, &grid), Err(Error::Config(_))));
        let flat = preset("flat", &PresetParams::new(), &grid).unwrap();
        assert_eq!(flat.g().data(), MetricField::flat(&grid).g().data());
    }

    #[test]
    fn custom_preset_reproduces_diagonal() {
        let grid = ChartGrid::new(4, 6).unwrap();
        let mut params = PresetParams::new();
        params.insert("g11".into(), ParamValue::Expr("1 + 0.1*sin(x1)*sin(x2)".into()));
        let custom = preset("custom", &params, &grid).unwrap();
        let diag = preset("diagonal", &PresetParams::new(), &grid).unwrap();
        assert_eq!(custom.g().data(), diag.g().data());
    }

    #[test]
    fn degenerate_preset_is_rejected() {
        let grid = ChartGrid::new(4, 6).unwrap();
        let mut params = PresetParams::new();
        params.insert("a".into(), ParamValue::Number(-1.0));
        // a = -1 makes g11 = 1 - sin x1 sin x2 vanish at (π/2, π/2)
        let grid8 = ChartGrid::new(4, 8).unwrap();
        assert!(matches!(preset("diagonal", &params, &grid8), Err(Error::DegenerateMetric { .. })));
        let mut bad = PresetParams::new();
        bad.insert("u".into(), ParamValue::Expr("sin(".into()));
        assert!(preset("conf_flat", &bad, &grid).is_err());
    }

    #[test]
    fn bumpy_bach_is_nonzero() {
        let grid = ChartGrid::new(4, 12).unwrap();
        let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        assert!(bach(&g, 6).unwrap().sup_norm() > 1e-2);
        let d = preset("diagonal", &PresetParams::new(), &grid).unwrap();
        assert!(bach(&d, 6).unwrap().sup_norm() > 1e-3);
    }
}
