//! The operators of the detour complex: the Killing and conformal Killing
//! operators K and K₀, the formal adjoint K₀*, Lie derivatives, and the
//! linearised Bach operator B defined by numerical differentiation of the
//! nonlinear map g ↦ ℬ^g.
//!
//! Every operator taking a [`Connection`] uses its difference order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bach, coordinate_bilaplacian, divergence, Connection};
use crate::grid::{gradient_vec, recycle, same_grid};
use crate::tensor::{inner_product, l2_norm, raise_index, trace, tracefree_part, MetricField, Slot, TensorField};

fn contravariant(x: &TensorField, g: &MetricField) -> Result<TensorField> {
    match x.slots() {
        [Slot::Contra] => Ok(x.clone()),
        [Slot::Co] => raise_index(x, 0, g),
        _ => Err(Error::ValenceMismatch("expected a vector field".into())),
    }
}

/// (ℒ_X T)_ab = X^c ∂_c T_ab + T_cb ∂_a X^c + T_ac ∂_b X^c for a (0,2)
/// field T. The connection terms of the covariant form cancel, so this is
/// evaluated with partial derivatives only.
pub fn lie_derivative(g: &MetricField, conn: &Connection, x: &TensorField, t: &TensorField) -> Result<TensorField> {
    same_grid(g.grid(), x.grid())?;
    same_grid(g.grid(), t.grid())?;
    if t.slots() != [Slot::Co, Slot::Co] {
        return Err(Error::ValenceMismatch("Lie derivative expects a (0,2) field".into()));
    }
    let x = contravariant(x, g)?;
    let grid = g.grid();
    let stencil = grid.check_stencil(conn.fd_order())?;
    let n = grid.dim();
    let nn = n * n;
    let dx = gradient_vec(grid, x.data(), n, &stencil);
    let dt = gradient_vec(grid, t.data(), nn, &stencil);
    let mut out = vec![0.0; grid.len() * nn];
    out.par_chunks_mut(nn).enumerate().for_each(|(p, o)| {
        let xp = x.point(p);
        let tp = t.point(p);
        let dxp = &dx[p * nn..(p + 1) * nn];
        let dtp = &dt[p * nn * n..(p + 1) * nn * n];
        for a in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for c in 0..n {
                    s += xp[c] * dtp[c * nn + a * n + b]
                        + tp[c * n + b] * dxp[a * n + c]
                        + tp[a * n + c] * dxp[b * n + c];
                }
                o[a * n + b] = s;
            }
        }
    });
    recycle(dx);
    recycle(dt);
    let out = TensorField::from_data(grid, vec![Slot::Co, Slot::Co], out)?;
    if t.asymmetry()? == 0.0 {
        out.symmetrize()?.tag_symmetric()
    } else {
        Ok(out)
    }
}

/// KX = ℒ_X g = ∇_a X_b + ∇_b X_a.
pub fn killing(g: &MetricField, conn: &Connection, x: &TensorField) -> Result<TensorField> {
    lie_derivative(g, conn, x, g.g())
}

/// K₀X, the trace-free part of KX.
pub fn conformal_killing(g: &MetricField, conn: &Connection, x: &TensorField) -> Result<TensorField> {
    tracefree_part(&killing(g, conn, x)?, g)
}

/// Relative trace tolerance accepted by [`k0_adjoint`].
pub const K0_ADJOINT_TRACE_TOL: f64 = 1e-10;

/// (K₀*h)_a = −2 ∇^b h_ab on trace-free symmetric h.
pub fn k0_adjoint(g: &MetricField, conn: &Connection, h: &TensorField) -> Result<TensorField> {
    let tr = trace(h, g)?.sup_norm();
    let scale = h.sup_norm();
    if tr > K0_ADJOINT_TRACE_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::SymmetryViolation {
            tag: "trace-free",
            residual: tr / scale,
        });
    }
    Ok(divergence(h, g, conn)?.scale(-2.0))
}

/// Step control for numerical directional derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizationPlan {
    /// Base step relative to sup|g| / sup|h|.
    pub t0: f64,
    /// Number of step halvings combined by Richardson extrapolation.
    pub richardson_levels: usize,
}

impl Default for LinearizationPlan {
    fn default() -> Self {
        LinearizationPlan {
            t0: 1e-3,
            richardson_levels: 2,
        }
    }
}

impl LinearizationPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(Error::invalid(format!("linearization step must be positive, got {}", self.t0)));
        }
        if self.richardson_levels == 0 {
            return Err(Error::invalid("richardson_levels must be at least 1"));
        }
        Ok(())
    }
}

/// A directional derivative with its step and Richardson error estimate.
#[derive(Debug, Clone)]
pub struct Linearized {
    pub value: TensorField,
    /// sup-norm difference of the two highest extrapolation orders; absent
    /// with a single level.
    pub error_estimate: Option<f64>,
    /// Absolute base step t₀ used.
    pub step: f64,
    pub evaluations: usize,
}

/// d/dt F(g + t h) at t = 0 by central differences at t₀/2^k, k < levels,
/// combined in a Richardson table.
pub fn linearize<F>(f: F, g: &MetricField, h: &TensorField, plan: &LinearizationPlan) -> Result<Linearized>
where
    F: Fn(&MetricField) -> Result<TensorField>,
{
    plan.validate()?;
    same_grid(g.grid(), h.grid())?;
    if h.slots() != [Slot::Co, Slot::Co] {
        return Err(Error::ValenceMismatch("metric perturbations are (0,2) fields".into()));
    }
    let hs = h.sup_norm();
    if hs == 0.0 {
        let zero = f(g)?.scale(0.0);
        return Ok(Linearized {
            value: zero,
            error_estimate: Some(0.0),
            step: 0.0,
            evaluations: 1,
        });
    }
    let h = h.symmetrize()?;
    let step = plan.t0 * g.g().sup_norm() / hs;
    let levels = plan.richardson_levels;
    let mut table: Vec<Vec<TensorField>> = Vec::with_capacity(levels);
    for k in 0..levels {
        let t = step / f64::powi(2.0, k as i32);
        let plus = MetricField::new(g.g().lin_comb(1.0, &h, t)?)?;
        let fp = f(&plus)?;
        drop(plus);
        let minus = MetricField::new(g.g().lin_comb(1.0, &h, -t)?)?;
        let fm = f(&minus)?;
        let mut row = vec![fp.lin_comb(0.5 / t, &fm, -0.5 / t)?];
        for j in 1..=k {
            let c = 1.0 / (f64::powi(4.0, j as i32) - 1.0);
            let next = row[j - 1].lin_comb(1.0 + c, &table[k - 1][j - 1], -c)?;
            row.push(next);
        }
        table.push(row);
    }
    let last = table.pop().expect("at least one level");
    let error_estimate = if levels >= 2 {
        Some(last[levels - 1].sub(&last[levels - 2])?.sup_norm())
    } else {
        None
    };
    let value = last.into_iter().last().expect("nonempty row");
    if value.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linearization".into()));
    }
    Ok(Linearized {
        value,
        error_estimate,
        step,
        evaluations: 2 * levels,
    })
}

/// One row of a linearization step sweep.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepPoint {
    pub t0: f64,
    pub sup_norm: f64,
    pub error_estimate: Option<f64>,
    /// sup-norm change from the previous (larger) step
    pub change: Option<f64>,
}

/// Repeat [`linearize`] with t₀ divided by 10 at each of `count` steps.
/// Where truncation dominates, the change tracks the error estimate; where
/// it stops decreasing the rounding floor has been reached.
pub fn step_sweep<F>(f: F, g: &MetricField, h: &TensorField, plan: &LinearizationPlan, count: usize) -> Result<Vec<SweepPoint>>
where
    F: Fn(&MetricField) -> Result<TensorField>,
{
    let mut out = Vec::with_capacity(count);
    let mut prev: Option<TensorField> = None;
    for k in 0..count {
        let p = LinearizationPlan {
            t0: plan.t0 / f64::powi(10.0, k as i32),
            ..*plan
        };
        let lin = linearize(&f, g, h, &p)?;
        let change = prev.as_ref().map(|q| q.sub(&lin.value).map(|d| d.sup_norm())).transpose()?;
        out.push(SweepPoint {
            t0: p.t0,
            sup_norm: lin.value.sup_norm(),
            error_estimate: lin.error_estimate,
            change,
        });
        prev = Some(lin.value);
    }
    Ok(out)
}

/// B^g h, the derivative of the Bach tensor at g in direction h.
pub fn linearized_bach(g: &MetricField, h: &TensorField, plan: &LinearizationPlan, fd_order: usize) -> Result<Linearized> {
    if g.dim() != 4 {
        return Err(Error::Dimension {
            found: g.dim(),
            reason: "the Bach tensor is implemented for n = 4",
        });
    }
    g.grid().check_stencil(fd_order)?;
    linearize(|m| bach(m, fd_order), g, h, plan)
}

/// sup|Δ²h| for the coordinate Laplacian: the size of the fourth-derivative
/// terms that B combines when applied to h. Residuals of identities whose
/// two sides may vanish are measured against this scale.
pub fn fourth_order_scale(h: &TensorField, fd_order: usize) -> Result<f64> {
    Ok(coordinate_bilaplacian(h, fd_order)?.sup_norm())
}

/// sup|A − B| / max(sup|A|, sup|B|, floor); 0 when all three vanish.
pub fn relative_residual(a: &TensorField, b: &TensorField, floor: f64) -> Result<f64> {
    let diff = a.sub(b)?.sup_norm();
    let denom = a.sup_norm().max(b.sup_norm()).max(floor);
    Ok(if denom == 0.0 { 0.0 } else { diff / denom })
}

/// ℒ_X ℬ^g against B^g(KX), relative to the larger side or the
/// fourth-order scale of KX.
pub fn naturality_residual(g: &MetricField, conn: &Connection, x: &TensorField, plan: &LinearizationPlan) -> Result<f64> {
    let fd = conn.fd_order();
    let b = bach(g, fd)?;
    let lhs = lie_derivative(g, conn, x, &b)?;
    let kx = killing(g, conn, x)?;
    let rhs = linearized_bach(g, &kx, plan, fd)?.value;
    relative_residual(&lhs, &rhs, fourth_order_scale(&kx, fd)?)
}

/// Relative Bach size below which a metric counts as Bach-flat.
pub const BACH_FLAT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfAdjointness {
    pub residual: f64,
    /// sup|ℬ^g| / sup|Δ²g|; the hypothesis holds when this is ≤ [`BACH_FLAT_TOL`]
    pub bach_size: f64,
    pub hypothesis_holds: bool,
}

/// |⟨Bh₁, h₂⟩ − ⟨h₁, Bh₂⟩| / (‖Bh₁‖‖h₂‖ + ‖h₁‖‖Bh₂‖). The symmetry of B
/// is asserted only at Bach-flat metrics; elsewhere the residual is still
/// computed and the hypothesis flag is cleared.
pub fn selfadjointness_residual(
    g: &MetricField,
    h1: &TensorField,
    h2: &TensorField,
    plan: &LinearizationPlan,
    fd_order: usize,
) -> Result<SelfAdjointness> {
    let scale = coordinate_bilaplacian(g.g(), fd_order)?.sup_norm();
    let bsup = bach(g, fd_order)?.sup_norm();
    let bach_size = if scale == 0.0 { bsup } else { bsup / scale };
    let hypothesis_holds = bach_size <= BACH_FLAT_TOL;
    let residual = if h1.data() == h2.data() {
        0.0
    } else {
        let b1 = linearized_bach(g, h1, plan, fd_order)?.value;
        let b2 = linearized_bach(g, h2, plan, fd_order)?.value;
        let lhs = inner_product(&b1, h2, g)?;
        let rhs = inner_product(h1, &b2, g)?;
        let denom = l2_norm(&b1, g)? * l2_norm(h2, g)? + l2_norm(h1, g)? * l2_norm(&b2, g)?;
        if denom == 0.0 {
            0.0
        } else {
            (lhs - rhs).abs() / denom
        }
    };
    Ok(SelfAdjointness {
        residual,
        bach_size,
        hypothesis_holds,
    })
}

/// B^ĝ(e^{2Υ}h) against e^{(2−n)Υ}B^g h for ĝ = e^{2Υ}g.
pub fn bi_invariance_residual(
    g: &MetricField,
    upsilon: &crate::grid::ScalarField,
    h: &TensorField,
    plan: &LinearizationPlan,
    fd_order: usize,
) -> Result<f64> {
    let n = g.dim() as f64;
    let ghat = crate::conformal::rescale(g, upsilon)?;
    let hh = h.scale_by(&upsilon.map(|u| (2.0 * u).exp()))?;
    let lhs = linearized_bach(&ghat, &hh, plan, fd_order)?.value;
    let rhs = linearized_bach(g, h, plan, fd_order)?
        .value
        .scale_by(&upsilon.map(|u| ((2.0 - n) * u).exp()))?;
    relative_residual(&lhs, &rhs, fourth_order_scale(h, fd_order)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::{preset, PresetParams};
    use crate::geometry::christoffel;
    use crate::grid::{ChartGrid, ScalarField};
    use std::sync::Arc;

    fn vector(grid: &Arc<ChartGrid>, f: impl Fn(&[f64], &mut [f64])) -> TensorField {
        TensorField::from_fn(grid, vec![Slot::Contra], f)
    }

    fn smooth_x(grid: &Arc<ChartGrid>) -> TensorField {
        vector(grid, |x, v| {
            v[0] = x[1].sin();
            v[1] = 0.5 * (x[0] + x[2]).cos();
            v[2] = -0.3 * x[3].sin() * x[0].cos();
            v[3] = 0.2 * (x[1] - x[2]).sin();
        })
    }

    #[test]
    fn killing_of_translations_and_zero() {
        let grid = ChartGrid::new(4, 8).unwrap();
        let g = MetricField::flat(&grid);
        let conn = christoffel(&g, 6).unwrap();
        let c = vector(&grid, |_, v| v.copy_from_slice(&[1.0, -2.0, 0.5, 3.0]));
        assert!(killing(&g, &conn, &c).unwrap().sup_norm() <= 1e-13);
        let b = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        let bconn = christoffel(&b, 6).unwrap();
        let zero = TensorField::vector(&grid);
        assert_eq!(killing(&b, &bconn, &zero).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn killing_of_periodic_rotation() {
        // X = sin(x1) ∂2 − sin(x2) ∂1: (ℒ_X δ)_12 = cos x1 − cos x2, diagonal zero
        let grid = ChartGrid::new(4, 24).unwrap();
        let g = MetricField::flat(&grid);
        let conn = christoffel(&g, 8).unwrap();
        let x = vector(&grid, |x, v| {
            v[0] = -x[1].sin();
            v[1] = x[0].sin();
        });
        let k = killing(&g, &conn, &x).unwrap();
        for p in (0..grid.len()).step_by(37) {
            let c = grid.coords(p);
            assert!((k.at(p, &[0, 1]) - (c[0].cos() - c[1].cos())).abs() < 1e-6);
            assert!(k.at(p, &[0, 0]).abs() < 1e-15 && k.at(p, &[1, 1]).abs() < 1e-15);
        }
    }

    #[test]
    fn killing_agrees_with_covariant_form() {
        let mut errs = Vec::new();
        for n in [10, 14, 20] {
            let grid = ChartGrid::new(4, n).unwrap();
            let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
            let conn = christoffel(&g, 6).unwrap();
            let x = smooth_x(&grid);
            let xl = crate::tensor::lower_index(&x, 0, &g).unwrap();
            let dx = crate::geometry::covariant_derivative(&xl, &conn, 6).unwrap();
            let cov = TensorField::from_fn(&grid, vec![Slot::Co, Slot::Co], |_, _| {});
            let mut cov = cov;
            for p in 0..grid.len() {
                for a in 0..4 {
                    for b in 0..4 {
                        let k = p * 16 + a * 4 + b;
                        cov.data_mut()[k] = dx.at(p, &[a, b]) + dx.at(p, &[b, a]);
                    }
                }
            }
            let k = killing(&g, &conn, &x).unwrap();
            errs.push((n, k.sub(&cov).unwrap().sup_norm() / k.sup_norm()));
        }
        let fit = crate::grid::convergence_rate(&errs).unwrap();
        assert!(fit.monotone && fit.rate > 5.0, "{errs:?}");
    }

    #[test]
    fn lie_derivative_of_metric_is_killing() {
        let grid = ChartGrid::new(4, 8).unwrap();
        let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        let conn = christoffel(&g, 6).unwrap();
        let x = smooth_x(&grid);
        let a = lie_derivative(&g, &conn, &x, g.g()).unwrap();
        let b = killing(&g, &conn, &x).unwrap();
        assert_eq!(a.data(), b.data());
        let zero = TensorField::vector(&grid);
        assert_eq!(lie_derivative(&g, &conn, &zero, g.g()).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn lie_derivative_flat_closed_form() {
        // X = sin(x2) ∂1, T_11 = cos(x1): (ℒ_X T)_11 = −sin(x2) sin(x1),
        // (ℒ_X T)_12 = (ℒ_X T)_21 = cos(x1) cos(x2)
        let grid = ChartGrid::new(4, 24).unwrap();
        let g = MetricField::flat(&grid);
        let conn = christoffel(&g, 8).unwrap();
        let x = vector(&grid, |x, v| v[0] = x[1].sin());
        let t = TensorField::from_fn(&grid, vec![Slot::Co, Slot::Co], |x, t| t[0] = x[0].cos())
            .tag_symmetric()
            .unwrap();
        let l = lie_derivative(&g, &conn, &x, &t).unwrap();
        for p in (0..grid.len()).step_by(41) {
            let c = grid.coords(p);
            assert!((l.at(p, &[0, 0]) + c[1].sin() * c[0].sin()).abs() < 1e-6);
            assert!((l.at(p, &[0, 1]) - c[0].cos() * c[1].cos()).abs() < 1e-6);
            assert!(l.at(p, &[2, 3]).abs() < 1e-15);
        }
    }

    #[test]
    fn conformal_killing_is_tracefree_and_invariant() {
        let grid = ChartGrid::new(4, 10).unwrap();
        let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        let conn = christoffel(&g, 6).unwrap();
        let x = smooth_x(&grid);
        let k0 = conformal_killing(&g, &conn, &x).unwrap();
        assert!(trace(&k0, &g).unwrap().sup_norm() < 1e-15);
        let u = ScalarField::from_fn(&grid, |x| 0.1 * x[0].sin());
        let ghat = crate::conformal::rescale(&g, &u).unwrap();
        let chat = christoffel(&ghat, 6).unwrap();
        let k0hat = conformal_killing(&ghat, &chat, &x).unwrap();
        // exact only up to the product rule on the grid: ∂(e^{2u} g) ≠ e^{2u}∂g + g ∂e^{2u}
        let r = crate::conformal::weight_check(&k0, &k0hat, &u, 2.0).unwrap();
        assert!(r < 1e-3, "{r}");
        let constant = ScalarField::constant(&grid, 0.4);
        let gc = crate::conformal::rescale(&g, &constant).unwrap();
        let cc = christoffel(&gc, 6).unwrap();
        let kc = conformal_killing(&gc, &cc, &x).unwrap();
        assert!(crate::conformal::weight_check(&k0, &kc, &constant, 2.0).unwrap() < 1e-14);
    }

    #[test]
    fn adjoint_flat_closed_form_and_errors() {
        let grid = ChartGrid::new(4, 16).unwrap();
        let g = MetricField::flat(&grid);
        let conn = christoffel(&g, 8).unwrap();
        // h_12 = h_21 = sin x1: (K₀*h)_2 = −2 cos x1
        let h = TensorField::from_fn(&grid, vec![Slot::Co, Slot::Co], |x, t| {
            t[1] = x[0].sin();
            t[4] = x[0].sin();
        });
        let a = k0_adjoint(&g, &conn, &h).unwrap();
        for p in 0..grid.len() {
            let c = grid.coords(p);
            assert!((a.at(p, &[1]) + 2.0 * c[0].cos()).abs() < 1e-5);
            assert!(a.at(p, &[0]).abs() < 1e-15);
        }
        let zero = TensorField::covariant(&grid, 2);
        assert_eq!(k0_adjoint(&g, &conn, &zero).unwrap().sup_norm(), 0.0);
        assert!(matches!(k0_adjoint(&g, &conn, g.g()), Err(Error::SymmetryViolation { .. })));
    }

    #[test]
    fn adjoint_pairing_holds_to_rounding() {
        let grid = ChartGrid::new(4, 12).unwrap();
        for name in ["flat", "conf_flat", "bumpy"] {
            let g = preset(name, &PresetParams::new(), &grid).unwrap();
            let conn = christoffel(&g, 6).unwrap();
            let x = smooth_x(&grid);
            let h = TensorField::from_fn(&grid, vec![Slot::Co, Slot::Co], |x, t| {
                for a in 0..4 {
                    for b in a..4 {
                        let v = (x[a] + 2.0 * x[b] + (a * b) as f64).cos();
                        t[a * 4 + b] = v;
                        t[b * 4 + a] = v;
                    }
                }
            });
            let h = tracefree_part(&h, &g).unwrap();
            let kx = conformal_killing(&g, &conn, &x).unwrap();
            let ah = k0_adjoint(&g, &conn, &h).unwrap();
            let xl = crate::tensor::lower_index(&x, 0, &g).unwrap();
            let lhs = inner_product(&kx, &h, &g).unwrap();
            let rhs = inner_product(&ah, &xl, &g).unwrap();
            let denom = l2_norm(&kx, &g).unwrap() * l2_norm(&h, &g).unwrap()
                + l2_norm(&x, &g).unwrap() * l2_norm(&ah, &g).unwrap();
            let r = (lhs - rhs).abs() / denom;
            assert!(r < 1e-12, "{name}: {r}");
        }
    }

    #[test]
    fn linear_map_is_reproduced_at_every_level() {
        let grid = ChartGrid::new(4, 6).unwrap();
        let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        let h = TensorField::from_fn(&grid, vec![Slot::Co, Slot::Co], |x, t| {
            t[0] = x[0].sin();
            t[5] = 0.5;
            t[2] = x[3].cos();
            t[8] = x[3].cos();
        });
        for levels in 1..4 {
            let plan = LinearizationPlan {
                t0: 1e-2,
                richardson_levels: levels,
            };
            let lin = linearize(|m| Ok(m.g().clone()), &g, &h, &plan).unwrap();
            assert!(lin.value.sub(&h).unwrap().sup_norm() < 1e-11);
            assert_eq!(lin.evaluations, 2 * levels);
        }
    }

    #[test]
    fn determinant_derivative() {
        // d/dt det(I + t h) = tr h at t = 0
        let grid = ChartGrid::new(4, 4).unwrap();
        let g = MetricField::flat(&grid);
        for a in 0..4 {
            let h = TensorField::from_fn(&grid, vec![Slot::Co, Slot::Co], |_, t| t[a * 4 + a] = 1.0);
            let det = |m: &MetricField| {
                let v = m.vol().values().iter().map(|v| v * v).collect::<Vec<_>>();
                TensorField::from_data(m.grid(), vec![], v)
            };
            let lin = linearize(det, &g, &h, &LinearizationPlan::default()).unwrap();
            assert!(lin.value.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn halving_the_step_stays_within_the_estimate() {
        let grid = ChartGrid::new(4, 12).unwrap();
        let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        let h = TensorField::from_fn(&grid, vec![Slot::Co, Slot::Co], |x, t| {
            t[0] = x[1].cos();
            t[1] = 0.5 * x[2].sin();
            t[4] = t[1];
        });
        let plan = LinearizationPlan {
            t0: 1e-1,
            richardson_levels: 2,
        };
        let a = linearized_bach(&g, &h, &plan, 6).unwrap();
        let half = LinearizationPlan { t0: 5e-2, ..plan };
        let b = linearized_bach(&g, &h, &half, 6).unwrap();
        let change = a.value.sub(&b.value).unwrap().sup_norm();
        assert!(change < a.error_estimate.unwrap(), "{change} vs {:?}", a.error_estimate);
    }

    #[test]
    fn flat_trace_direction_gives_nothing() {
        let grid = ChartGrid::new(4, 12).unwrap();
        let g = MetricField::flat(&grid);
        let w = ScalarField::from_fn(&grid, |x| x[1].sin());
        let h = g.g().scale_by(&w).unwrap();
        let b = linearized_bach(&g, &h, &LinearizationPlan::default(), 6).unwrap();
        assert!(b.value.sup_norm() < 1e-9, "{}", b.value.sup_norm());
    }

    #[test]
    fn self_adjointness_trivial_and_flagged() {
        let grid = ChartGrid::new(4, 10).unwrap();
        let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        let h = tracefree_part(
            &TensorField::from_fn(&grid, vec![Slot::Co, Slot::Co], |x, t| {
                t[1] = x[2].sin();
                t[4] = t[1];
            }),
            &g,
        )
        .unwrap();
        let r = selfadjointness_residual(&g, &h, &h, &LinearizationPlan::default(), 6).unwrap();
        assert_eq!(r.residual, 0.0);
        assert!(!r.hypothesis_holds);
        let f = MetricField::flat(&grid);
        let rf = selfadjointness_residual(&f, &h, &h, &LinearizationPlan::default(), 6).unwrap();
        assert!(rf.hypothesis_holds);
    }

    #[test]
    fn naturality_trivial_cases() {
        let grid = ChartGrid::new(4, 10).unwrap();
        let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        let conn = christoffel(&g, 6).unwrap();
        let zero = TensorField::vector(&grid);
        assert_eq!(naturality_residual(&g, &conn, &zero, &LinearizationPlan::default()).unwrap(), 0.0);
        let f = MetricField::flat(&grid);
        let fc = christoffel(&f, 6).unwrap();
        let x = smooth_x(&grid);
        let r = naturality_residual(&f, &fc, &x, &LinearizationPlan::default()).unwrap();
        assert!(r < 1e-9, "{r}");
    }

    #[test]
    fn bi_invariance_under_constant_rescaling() {
        let grid = ChartGrid::new(4, 10).unwrap();
        let g = preset("bumpy", &PresetParams::new(), &grid).unwrap();
        let h = TensorField::from_fn(&grid, vec![Slot::Co, Slot::Co], |x, t| {
            t[0] = x[1].cos();
            t[15] = x[0].sin();
        });
        let plan = LinearizationPlan::default();
        let zero = ScalarField::constant(&grid, 0.0);
        assert!(bi_invariance_residual(&g, &zero, &h, &plan, 6).unwrap() < 1e-9);
        let c = ScalarField::constant(&grid, 0.25);
        assert!(bi_invariance_residual(&g, &c, &h, &plan, 6).unwrap() < 1e-9);
    }
}
