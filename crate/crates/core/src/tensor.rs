//! Tensor fields on a chart and the metric algebra they need.
//!
//! Components are stored in full (no symmetry compression), point-major, with
//! multi-indices linearised first-index-most-significant.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{integrate, same_grid, stable_sum, ChartGrid, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Co,
    Contra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symmetry {
    None,
    Symmetric2,
    TfSymmetric2,
    AlgCurvature,
}

/// Trace-free tag tolerance, relative to the field's sup-norm.
pub const TRACE_FREE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: Arc<ChartGrid>,
    slots: Vec<Slot>,
    symmetry: Symmetry,
    data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: &Arc<ChartGrid>, slots: Vec<Slot>) -> TensorField {
        let ncomp = grid.dim().pow(slots.len() as u32);
        TensorField {
            grid: grid.clone(),
            slots,
            symmetry: Symmetry::None,
            data: vec![0.0; ncomp * grid.len()],
        }
    }

    pub fn covariant(grid: &Arc<ChartGrid>, rank: usize) -> TensorField {
        Self::zeros(grid, vec![Slot::Co; rank])
    }

    /// Contravariant vector field X^a.
    pub fn vector(grid: &Arc<ChartGrid>) -> TensorField {
        Self::zeros(grid, vec![Slot::Contra])
    }

    pub fn from_data(
        grid: &Arc<ChartGrid>,
        slots: Vec<Slot>,
        data: Vec<f64>,
    ) -> Result<TensorField> {
        let ncomp = grid.dim().pow(slots.len() as u32);
        if data.len() != ncomp * grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} components on {} points",
                data.len(),
                ncomp,
                grid.len()
            )));
        }
        Ok(TensorField {
            grid: grid.clone(),
            slots,
            symmetry: Symmetry::None,
            data,
        })
    }

    /// Build a field from a closure filling all components at a coordinate point.
    pub fn from_fn(
        grid: &Arc<ChartGrid>,
        slots: Vec<Slot>,
        f: impl Fn(&[f64], &mut [f64]),
    ) -> TensorField {
        let mut t = Self::zeros(grid, slots);
        let nc = t.ncomp();
        let mut x = vec![0.0; grid.dim()];
        for (p, chunk) in t.data.chunks_mut(nc).enumerate() {
            grid.coords_into(p, &mut x);
            f(&x, chunk);
        }
        t
    }

    /// A rank-1 or rank-2 field assembled from scalar component fields.
    pub fn from_components(slots: Vec<Slot>, comps: &[ScalarField]) -> Result<TensorField> {
        let grid = comps
            .first()
            .ok_or_else(|| Error::invalid("no components"))?
            .grid()
            .clone();
        let nc = grid.dim().pow(slots.len() as u32);
        if comps.len() != nc {
            return Err(Error::ValenceMismatch(format!(
                "{} components, expected {nc}",
                comps.len()
            )));
        }
        let mut t = Self::zeros(&grid, slots);
        for (c, f) in comps.iter().enumerate() {
            same_grid(&grid, f.grid())?;
            for (p, v) in f.values().iter().enumerate() {
                t.data[p * nc + c] = *v;
            }
        }
        Ok(t)
    }

    pub fn grid(&self) -> &Arc<ChartGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn ncomp(&self) -> usize {
        self.dim().pow(self.rank() as u32)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.symmetry = Symmetry::None;
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn comp_index(&self, idx: &[usize]) -> usize {
        let n = self.dim();
        idx.iter().fold(0, |acc, &i| acc * n + i)
    }

    /// All components at lattice point `p`.
    pub fn point(&self, p: usize) -> &[f64] {
        let nc = self.ncomp();
        &self.data[p * nc..(p + 1) * nc]
    }

    pub fn at(&self, p: usize, idx: &[usize]) -> f64 {
        self.data[p * self.ncomp() + self.comp_index(idx)]
    }

    pub fn component(&self, idx: &[usize]) -> ScalarField {
        let nc = self.ncomp();
        let c = self.comp_index(idx);
        let values = (0..self.grid.len())
            .map(|p| self.data[p * nc + c])
            .collect();
        ScalarField::from_values(&self.grid, values).expect("component length matches grid")
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn same_shape(&self, other: &TensorField) -> Result<()> {
        same_grid(&self.grid, &other.grid)?;
        if self.slots != other.slots {
            return Err(Error::ValenceMismatch(format!(
                "{:?} vs {:?}",
                self.slots, other.slots
            )));
        }
        Ok(())
    }

    fn derived(&self, data: Vec<f64>) -> TensorField {
        TensorField {
            grid: self.grid.clone(),
            slots: self.slots.clone(),
            symmetry: Symmetry::None,
            data,
        }
    }

    /// a·self + b·other.
    pub fn lin_comb(&self, a: f64, other: &TensorField, b: f64) -> Result<TensorField> {
        self.same_shape(other)?;
        let data = self
            .data
            .par_iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        let mut out = self.derived(data);
        if self.symmetry == other.symmetry {
            out.symmetry = match self.symmetry {
                Symmetry::TfSymmetric2 => Symmetry::Symmetric2,
                s => s,
            };
        }
        Ok(out)
    }

    pub fn sub(&self, other: &TensorField) -> Result<TensorField> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn add(&self, other: &TensorField) -> Result<TensorField> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn scale(&self, a: f64) -> TensorField {
        let mut out = self.derived(self.data.par_iter().map(|x| a * x).collect());
        out.symmetry = self.symmetry;
        out
    }

    /// Pointwise product with a scalar field. Symmetry tags are kept
    /// (trace-freeness is preserved by scalar multiplication).
    pub fn scale_by(&self, f: &ScalarField) -> Result<TensorField> {
        same_grid(&self.grid, f.grid())?;
        let nc = self.ncomp();
        let mut data = self.data.clone();
        data.par_chunks_mut(nc)
            .zip(f.values().par_iter())
            .for_each(|(c, s)| c.iter_mut().for_each(|v| *v *= s));
        let mut out = self.derived(data);
        out.symmetry = self.symmetry;
        Ok(out)
    }

    /// ½(T_ab + T_ba), tagged symmetric.
    pub fn symmetrize(&self) -> Result<TensorField> {
        self.expect_rank(2)?;
        let n = self.dim();
        let mut data = self.data.clone();
        data.par_chunks_mut(n * n).for_each(|c| {
            for a in 0..n {
                for b in a + 1..n {
                    let s = 0.5 * (c[a * n + b] + c[b * n + a]);
                    c[a * n + b] = s;
                    c[b * n + a] = s;
                }
            }
        });
        let mut out = self.derived(data);
        out.symmetry = Symmetry::Symmetric2;
        Ok(out)
    }

    fn expect_rank(&self, rank: usize) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::ValenceMismatch(format!(
                "rank {} where {rank} is required",
                self.rank()
            )));
        }
        Ok(())
    }

    /// Largest |T_ab − T_ba|.
    pub fn asymmetry(&self) -> Result<f64> {
        self.expect_rank(2)?;
        let n = self.dim();
        Ok(self
            .data
            .chunks(n * n)
            .flat_map(|c| {
                (0..n).flat_map(move |a| (0..n).map(move |b| (c[a * n + b] - c[b * n + a]).abs()))
            })
            .fold(0.0, f64::max))
    }

    /// Tag as symmetric; requires exact symmetry.
    pub fn tag_symmetric(mut self) -> Result<TensorField> {
        let residual = self.asymmetry()?;
        if residual != 0.0 {
            return Err(Error::SymmetryViolation {
                tag: "symmetric2",
                residual,
            });
        }
        self.symmetry = Symmetry::Symmetric2;
        Ok(self)
    }

    /// Tag as trace-free symmetric with respect to `g`.
    pub fn tag_tracefree(self, g: &MetricField) -> Result<TensorField> {
        let mut t = self.tag_symmetric()?;
        let tr = trace(&t, g)?.sup_norm();
        let scale = t.sup_norm().max(f64::MIN_POSITIVE);
        if tr > TRACE_FREE_TOL * scale {
            return Err(Error::SymmetryViolation {
                tag: "tf-symmetric2",
                residual: tr / scale,
            });
        }
        t.symmetry = Symmetry::TfSymmetric2;
        Ok(t)
    }

    pub(crate) fn set_symmetry(&mut self, s: Symmetry) {
        self.symmetry = s;
    }
}

/// Symmetric nondegenerate (0,2) field with cached inverse and volume density.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    g: TensorField,
    inv: TensorField,
    vol: ScalarField,
    signature: (usize, usize),
}

/// Bound on |g·g⁻¹ − I| relative to ‖g‖‖g⁻¹‖ at every point.
pub const INVERSE_TOL: f64 = 1e-12;

impl MetricField {
    pub fn new(g: TensorField) -> Result<MetricField> {
        if g.slots() != [Slot::Co, Slot::Co] {
            return Err(Error::ValenceMismatch(
                "a metric needs two covariant slots".into(),
            ));
        }
        let g = g.tag_symmetric()?;
        let n = g.dim();
        let grid = g.grid().clone();
        let nn = n * n;
        let mut inv = vec![0.0; g.data.len()];
        let mut dets = vec![0.0; grid.len()];
        let failures: Vec<(usize, String)> = inv
            .par_chunks_mut(nn)
            .zip(dets.par_iter_mut())
            .enumerate()
            .filter_map(|(p, (out, det))| {
                let a = &g.data[p * nn..(p + 1) * nn];
                match invert_small(a, n, out) {
                    None => Some((p, "singular".to_string())),
                    Some(d) => {
                        *det = d;
                        let res = identity_residual(a, out, n);
                        if !(res <= INVERSE_TOL) {
                            Some((p, format!("inverse residual {res:e}")))
                        } else if !d.is_finite() {
                            Some((p, "non-finite determinant".to_string()))
                        } else {
                            None
                        }
                    }
                }
            })
            .collect();
        if let Some((point, reason)) = failures.into_iter().next() {
            return Err(Error::DegenerateMetric { point, reason });
        }
        let m = DMatrix::from_row_slice(n, n, &g.data[..nn]);
        let eig = SymmetricEigen::new(m).eigenvalues;
        let q = eig.iter().filter(|&&l| l < 0.0).count();
        let signature = (n - q, q);
        let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
        if let Some(point) = dets.iter().position(|d| d * sign <= 0.0) {
            return Err(Error::DegenerateMetric {
                point,
                reason: "determinant changes sign across the chart".into(),
            });
        }
        let vol = ScalarField::from_values(&grid, dets.iter().map(|d| d.abs().sqrt()).collect())?;
        let mut inv = TensorField::from_data(&grid, vec![Slot::Contra, Slot::Contra], inv)?;
        inv.symmetrize_in_place();
        Ok(MetricField {
            g,
            inv,
            vol,
            signature,
        })
    }

    /// Metric from component closures g_ab(x) filling an n×n row-major buffer.
    pub fn from_fn(grid: &Arc<ChartGrid>, f: impl Fn(&[f64], &mut [f64])) -> Result<MetricField> {
        let t = TensorField::from_fn(grid, vec![Slot::Co, Slot::Co], f);
        MetricField::new(t.symmetrize()?)
    }

    pub fn flat(grid: &Arc<ChartGrid>) -> MetricField {
        let n = grid.dim();
        MetricField::from_fn(grid, |_, g| {
            for a in 0..n {
                g[a * n + a] = 1.0;
            }
        })
        .expect("identity metric is valid")
    }

    pub fn g(&self) -> &TensorField {
        &self.g
    }

    /// g^{ab}.
    pub fn inv(&self) -> &TensorField {
        &self.inv
    }

    /// √|det g|.
    pub fn vol(&self) -> &ScalarField {
        &self.vol
    }

    pub fn signature(&self) -> (usize, usize) {
        self.signature
    }

    pub fn is_riemannian(&self) -> bool {
        self.signature.1 == 0
    }

    pub fn grid(&self) -> &Arc<ChartGrid> {
        self.g.grid()
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    /// ∫ dv_g.
    pub fn volume(&self) -> f64 {
        let one = ScalarField::constant(self.grid(), 1.0);
        integrate(&one, &self.vol).expect("same grid")
    }
}

impl TensorField {
    fn symmetrize_in_place(&mut self) {
        let n = self.dim();
        self.data.par_chunks_mut(n * n).for_each(|c| {
            for a in 0..n {
                for b in a + 1..n {
                    let s = 0.5 * (c[a * n + b] + c[b * n + a]);
                    c[a * n + b] = s;
                    c[b * n + a] = s;
                }
            }
        });
    }
}

/// Gauss–Jordan inverse of a small row-major matrix; returns the determinant.
pub(crate) fn invert_small(a: &[f64], n: usize, out: &mut [f64]) -> Option<f64> {
    let mut m = [0.0f64; 64];
    let mut r = [0.0f64; 64];
    assert!(n <= 8);
    m[..n * n].copy_from_slice(&a[..n * n]);
    for i in 0..n {
        for j in 0..n {
            r[i * n + j] = if i == j { 1.0 } else { 0.0 };
        }
    }
    let mut det = 1.0;
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if m[row * n + col].abs() > m[piv * n + col].abs() {
                piv = row;
            }
        }
        let pv = m[piv * n + col];
        if pv == 0.0 || !pv.is_finite() {
            return None;
        }
        if piv != col {
            for j in 0..n {
                m.swap(piv * n + j, col * n + j);
                r.swap(piv * n + j, col * n + j);
            }
            det = -det;
        }
        det *= pv;
        let inv_p = 1.0 / pv;
        for j in 0..n {
            m[col * n + j] *= inv_p;
            r[col * n + j] *= inv_p;
        }
        for row in 0..n {
            if row != col {
                let f = m[row * n + col];
                if f != 0.0 {
                    for j in 0..n {
                        m[row * n + j] -= f * m[col * n + j];
                        r[row * n + j] -= f * r[col * n + j];
                    }
                }
            }
        }
    }
    out[..n * n].copy_from_slice(&r[..n * n]);
    Some(det)
}

fn identity_residual(a: &[f64], inv: &[f64], n: usize) -> f64 {
    let mut worst = 0.0f64;
    let na = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ni = inv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in 0..n {
            let s: f64 = (0..n).map(|k| a[i * n + k] * inv[k * n + j]).sum();
            let e = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((s - e).abs());
        }
    }
    worst / (n as f64 * na * ni).max(1.0)
}

fn check_metric_grid(t: &TensorField, g: &MetricField) -> Result<()> {
    same_grid(t.grid(), g.grid())
}

/// Multiply slot `slot` of every point by the matrix `mat` (n×n per point).
fn contract_slot(t: &TensorField, slot: usize, mat: &TensorField) -> TensorField {
    let n = t.dim();
    let r = t.rank();
    let nc = t.ncomp();
    let stride = n.pow((r - 1 - slot) as u32);
    let mut data = vec![0.0; t.data.len()];
    data.par_chunks_mut(nc)
        .zip(t.data.par_chunks(nc))
        .zip(mat.data.par_chunks(n * n))
        .for_each(|((out, src), m)| {
            for c in 0..nc {
                let i = (c / stride) % n;
                let base = c - i * stride;
                let mut s = 0.0;
                for j in 0..n {
                    s += m[i * n + j] * src[base + j * stride];
                }
                out[c] = s;
            }
        });
    TensorField {
        grid: t.grid.clone(),
        slots: t.slots.clone(),
        symmetry: Symmetry::None,
        data,
    }
}

/// Contract a covariant slot with g^{ab}, producing a contravariant slot.
pub fn raise_index(t: &TensorField, slot: usize, g: &MetricField) -> Result<TensorField> {
    check_metric_grid(t, g)?;
    if slot >= t.rank() {
        return Err(Error::invalid(format!(
            "slot {slot} on a rank-{} field",
            t.rank()
        )));
    }
    if t.slots[slot] != Slot::Co {
        return Err(Error::ValenceMismatch(format!(
            "slot {slot} is already contravariant"
        )));
    }
    let mut out = contract_slot(t, slot, &g.inv);
    out.slots[slot] = Slot::Contra;
    Ok(out)
}

/// Contract a contravariant slot with g_ab.
pub fn lower_index(t: &TensorField, slot: usize, g: &MetricField) -> Result<TensorField> {
    check_metric_grid(t, g)?;
    if slot >= t.rank() {
        return Err(Error::invalid(format!(
            "slot {slot} on a rank-{} field",
            t.rank()
        )));
    }
    if t.slots[slot] != Slot::Contra {
        return Err(Error::ValenceMismatch(format!(
            "slot {slot} is already covariant"
        )));
    }
    let mut out = contract_slot(t, slot, &g.g);
    out.slots[slot] = Slot::Co;
    Ok(out)
}

/// g^{ab} T_ab at every point.
pub fn trace(t: &TensorField, g: &MetricField) -> Result<ScalarField> {
    check_metric_grid(t, g)?;
    if t.slots != [Slot::Co, Slot::Co] {
        return Err(Error::ValenceMismatch("trace needs a (0,2) field".into()));
    }
    let nn = t.dim() * t.dim();
    let values = t
        .data
        .par_chunks(nn)
        .zip(g.inv.data.par_chunks(nn))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum())
        .collect();
    ScalarField::from_values(t.grid(), values)
}

/// T − (tr_g T / n) g, tagged trace-free symmetric.
pub fn tracefree_part(t: &TensorField, g: &MetricField) -> Result<TensorField> {
    check_metric_grid(t, g)?;
    if t.slots != [Slot::Co, Slot::Co] {
        return Err(Error::ValenceMismatch(
            "trace-free part needs a (0,2) field".into(),
        ));
    }
    let n = t.dim();
    let nn = n * n;
    let sym = if t.symmetry == Symmetry::None {
        t.symmetrize()?
    } else {
        t.clone()
    };
    let mut data = sym.data;
    data.par_chunks_mut(nn)
        .zip(g.g.data.par_chunks(nn))
        .zip(g.inv.data.par_chunks(nn))
        .for_each(|((c, gl), gu)| project_tracefree(c, gl, gu, n));
    let mut out = TensorField::from_data(t.grid(), t.slots.clone(), data)?;
    out.symmetry = Symmetry::TfSymmetric2;
    Ok(out)
}

/// In-place trace removal at one point. A second pass cleans the residual
/// rounding of the first so the output trace sits at the rounding floor.
pub(crate) fn project_tracefree(c: &mut [f64], gl: &[f64], gu: &[f64], n: usize) {
    for _ in 0..2 {
        let tr: f64 = c.iter().zip(gu).map(|(x, y)| x * y).sum();
        let f = tr / n as f64;
        for (v, gv) in c.iter_mut().zip(gl) {
            *v -= f * gv;
        }
    }
}

/// ∫ ⟨S, T⟩_g dv_g, every slot paired through the metric.
pub fn inner_product(s: &TensorField, t: &TensorField, g: &MetricField) -> Result<f64> {
    s.same_shape(t)?;
    check_metric_grid(s, g)?;
    let mut raised = s.clone();
    for slot in 0..s.rank() {
        let mat = match s.slots[slot] {
            Slot::Co => &g.inv,
            Slot::Contra => &g.g,
        };
        raised = contract_slot(&raised, slot, mat);
    }
    let nc = s.ncomp();
    let local: Vec<f64> = raised
        .data
        .par_chunks(nc)
        .zip(t.data.par_chunks(nc))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum())
        .collect();
    let cell = s.grid().cell_volume();
    Ok(stable_sum(local.iter().zip(g.vol.values()).map(|(a, v)| a * v)) * cell)
}

/// ⟨T, T⟩^{1/2}; meaningful for Riemannian metrics.
pub fn l2_norm(t: &TensorField, g: &MetricField) -> Result<f64> {
    Ok(inner_product(t, t, g)?.max(0.0).sqrt())
}
