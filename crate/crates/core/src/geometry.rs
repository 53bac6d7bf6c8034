//! Levi-Civita calculus and the curvature chain of a metric.
//!
//! Conventions (fixed once, used everywhere):
//!
//! ```text
//! Γ^a_bc   = ½ g^ad (∂_b g_dc + ∂_c g_bd − ∂_d g_bc)
//! R_abcd   = ½(∂_b∂_c g_ad + ∂_a∂_d g_bc − ∂_a∂_c g_bd − ∂_b∂_d g_ac)
//!            + g_pq (Γ^p_da Γ^q_cb − Γ^p_ca Γ^q_db)
//! R_bd     = g^ac R_abcd,  R = g^bd R_bd
//! P_ab     = (R_ab − R g_ab / (2(n−1))) / (n−2)
//! C_abcd   = R_abcd − (P_ac g_bd − P_bc g_ad + P_bd g_ac − P_ad g_bc)
//! Cot_abc  = ∇_a P_bc − ∇_b P_ac
//! B_ab     = ∇^c ∇^d C_acbd + ½ R^cd C_acbd          (n = 4)
//! ```
//!
//! The lowered Riemann tensor is built from second differences of g, which
//! commute on a periodic lattice, so its algebraic symmetries hold to
//! rounding and the Weyl tensor is totally trace-free to rounding. The
//! Bach tensor is returned symmetrised and trace-free.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{
    gradient_vec, partial_into, partial_vec, recycle, same_grid, scratch, ChartGrid, ScalarField,
    Stencil,
};
use crate::tensor::{project_tracefree, MetricField, Slot, Symmetry, TensorField};

/// Pick the monomorphised per-point kernel for the chart dimension.
macro_rules! by_dim {
    ($n:expr, $f:ident) => {
        match $n {
            1 => $f::<1> as _,
            2 => $f::<2> as _,
            3 => $f::<3> as _,
            4 => $f::<4> as _,
            5 => $f::<5> as _,
            6 => $f::<6> as _,
            7 => $f::<7> as _,
            _ => $f::<8> as _,
        }
    };
}

/// Christoffel symbols Γ^a_bc, point-major with index order (a, b, c).
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    grid: Arc<ChartGrid>,
    gamma: Vec<f64>,
    fd_order: usize,
}

impl Drop for Connection {
    fn drop(&mut self) {
        recycle(std::mem::take(&mut self.gamma));
    }
}

impl Connection {
    pub fn grid(&self) -> &Arc<ChartGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn fd_order(&self) -> usize {
        self.fd_order
    }

    pub fn at(&self, p: usize, a: usize, b: usize, c: usize) -> f64 {
        let n = self.dim();
        self.gamma[p * n * n * n + (a * n + b) * n + c]
    }

    pub fn point(&self, p: usize) -> &[f64] {
        let n3 = self.dim().pow(3);
        &self.gamma[p * n3..(p + 1) * n3]
    }

    /// Γ as a (1,2) tensor field (not a tensor, but handy for norms and I/O).
    pub fn to_field(&self) -> TensorField {
        TensorField::from_data(
            &self.grid,
            vec![Slot::Contra, Slot::Co, Slot::Co],
            self.gamma.clone(),
        )
        .expect("sizes match")
    }

    pub fn sup_norm(&self) -> f64 {
        self.gamma.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn christoffel(g: &MetricField, fd_order: usize) -> Result<Connection> {
    let grid = g.grid().clone();
    let stencil = grid.check_stencil(fd_order)?;
    let n = grid.dim();
    let nn = n * n;
    let n3 = nn * n;
    let ns = n * (n + 1) / 2;
    // dg[c][s] = ∂_c g_s over packed symmetric components
    let pk = pack_symmetric(g.g().data(), n);
    let dg = gradient_vec(&grid, &pk, ns, &stencil);
    let mut gamma = scratch(grid.len() * n3);
    let kernel: fn(&[f64], &[f64], &mut [f64]) = by_dim!(n, christoffel_point);
    gamma
        .par_chunks_mut(n3)
        .zip(dg.par_chunks(n * ns))
        .zip(g.inv().data().par_chunks(nn))
        .for_each(|((out, d), gi)| kernel(d, gi, out));
    recycle(dg);
    recycle(pk);
    Ok(Connection {
        grid,
        gamma,
        fd_order,
    })
}

/// ∇T with the derivative index prepended: (∇T)_{c a1…ak} = ∇_c T_{a1…ak}.
pub fn covariant_derivative(
    t: &TensorField,
    conn: &Connection,
    fd_order: usize,
) -> Result<TensorField> {
    same_grid(t.grid(), conn.grid())?;
    let grid = t.grid().clone();
    let stencil = grid.check_stencil(fd_order)?;
    let n = grid.dim();
    let rank = t.rank();
    let nc = t.ncomp();
    let slots = t.slots().to_vec();
    let mut out = gradient_vec(&grid, t.data(), nc, &stencil);
    let n3 = n * n * n;
    out.par_chunks_mut(n * nc)
        .zip(t.data().par_chunks(nc))
        .zip(conn.gamma.par_chunks(n3))
        .for_each(|((o, src), gam)| {
            for c in 0..n {
                for comp in 0..nc {
                    let mut corr = 0.0;
                    for (s, slot) in slots.iter().enumerate() {
                        let stride = n.pow((rank - 1 - s) as u32);
                        let i = (comp / stride) % n;
                        let base = comp - i * stride;
                        for p in 0..n {
                            let tv = src[base + p * stride];
                            match slot {
                                // −Γ^p_{c a_s} T_{..p..}
                                Slot::Co => corr -= gam[(p * n + c) * n + i] * tv,
                                // +Γ^{a_s}_{c p} T^{..p..}
                                Slot::Contra => corr += gam[(i * n + c) * n + p] * tv,
                            }
                        }
                    }
                    o[c * nc + comp] += corr;
                }
            }
        });
    let mut new_slots = vec![Slot::Co];
    new_slots.extend(slots);
    TensorField::from_data(&grid, new_slots, out)
}

/// Divergence ∇^b T_ab of a symmetric (0,2) field, evaluated in the
/// densitised form
///
/// ```text
/// ∇^b T_ab = |g|^{-1/2} ∂_b(|g|^{1/2} T^b_a) − ½ T^bc ∂_a g_bc
/// ```
///
/// which agrees with the covariant contraction analytically and makes the
/// discrete pairing ⟨K₀X, h⟩ = ⟨X, −2 div h⟩ hold to rounding under the
/// periodic summation-by-parts property of central stencils.
pub fn divergence(t: &TensorField, g: &MetricField, conn: &Connection) -> Result<TensorField> {
    same_grid(t.grid(), g.grid())?;
    same_grid(t.grid(), conn.grid())?;
    let fd_order = conn.fd_order();
    if t.slots() != [Slot::Co, Slot::Co] {
        return Err(Error::ValenceMismatch(
            "divergence needs a (0,2) field".into(),
        ));
    }
    if t.asymmetry()? > 1e-14 * t.sup_norm().max(f64::MIN_POSITIVE) {
        return Err(Error::SymmetryViolation {
            tag: "symmetric2",
            residual: t.asymmetry()?,
        });
    }
    let grid = g.grid().clone();
    let stencil = grid.check_stencil(fd_order)?;
    let n = grid.dim();
    let nn = n * n;
    let np = grid.len();
    let gi = g.inv().data();
    let tv = t.data();
    let vol = g.vol().values();
    // w^b_a = vol g^bc T_ca, component order (b, a)
    let mut w = scratch(np * nn);
    // T^bc
    let mut up = scratch(np * nn);
    w.par_chunks_mut(nn)
        .zip(up.par_chunks_mut(nn))
        .enumerate()
        .for_each(|(p, (wc, uc))| {
            let gp = &gi[p * nn..(p + 1) * nn];
            let tp = &tv[p * nn..(p + 1) * nn];
            for b in 0..n {
                for a in 0..n {
                    let mut s = 0.0;
                    for c in 0..n {
                        s += gp[b * n + c] * tp[c * n + a];
                    }
                    wc[b * n + a] = vol[p] * s;
                }
            }
            for b in 0..n {
                for c in 0..n {
                    let mut s = 0.0;
                    for a in 0..n {
                        s += wc[b * n + a] * gp[a * n + c];
                    }
                    uc[b * n + c] = s / vol[p];
                }
            }
        });
    let mut out = scratch(np * n);
    let mut tmp = scratch(np * n);
    for b in 0..n {
        // ∂_b of the row w^b_·
        let row: Vec<f64> = w
            .par_chunks(nn)
            .flat_map_iter(|c| c[b * n..(b + 1) * n].to_vec())
            .collect();
        partial_into(&grid, &row, n, b, &stencil, &mut tmp);
        out.par_chunks_mut(n)
            .zip(tmp.par_chunks(n))
            .for_each(|(o, d)| o.iter_mut().zip(d).for_each(|(x, y)| *x += y));
    }
    let dg = gradient_vec(&grid, g.g().data(), nn, &stencil);
    out.par_chunks_mut(n).enumerate().for_each(|(p, o)| {
        let u = &up[p * nn..(p + 1) * nn];
        let d = &dg[p * nn * n..(p + 1) * nn * n];
        for a in 0..n {
            let mut s = 0.0;
            for bc in 0..nn {
                s += u[bc] * d[a * nn + bc];
            }
            o[a] = o[a] / vol[p] - 0.5 * s;
        }
    });
    TensorField::from_data(&grid, vec![Slot::Co], out)
}

/// g^{cb} ∇_c T_ab through the generic covariant derivative.
pub fn divergence_covariant(t: &TensorField, g: &MetricField, conn: &Connection) -> Result<TensorField> {
    let fd_order = conn.fd_order();
    if t.slots() != [Slot::Co, Slot::Co] {
        return Err(Error::ValenceMismatch(
            "divergence needs a (0,2) field".into(),
        ));
    }
    let dt = covariant_derivative(t, conn, fd_order)?;
    let n = t.dim();
    let nn = n * n;
    let mut out = vec![0.0; t.grid().len() * n];
    out.par_chunks_mut(n)
        .zip(dt.data().par_chunks(n * nn))
        .zip(g.inv().data().par_chunks(nn))
        .for_each(|((o, d), gi)| {
            for a in 0..n {
                let mut s = 0.0;
                for c in 0..n {
                    for b in 0..n {
                        s += gi[c * n + b] * d[(c * n + a) * n + b];
                    }
                }
                o[a] = s;
            }
        });
    TensorField::from_data(t.grid(), vec![Slot::Co], out)
}

/// Index of the unordered pair (i, j) in the packed upper triangle of an
/// m × m symmetric matrix.
pub(crate) fn tri_index(m: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * m - i * i.saturating_sub(1) / 2 + (j - i)
}

/// Copy the upper triangle of every point's n × n block.
pub(crate) fn pack_symmetric(full: &[f64], n: usize) -> Vec<f64> {
    let nn = n * n;
    let ns = n * (n + 1) / 2;
    let mut out = scratch(full.len() / nn * ns);
    out.par_chunks_mut(ns)
        .zip(full.par_chunks(nn))
        .for_each(|(o, f)| {
            for a in 0..n {
                for b in a..n {
                    o[tri_index(n, a, b)] = f[a * n + b];
                }
            }
        });
    out
}

/// Index bookkeeping for tensors with pair antisymmetry: pairs I = (a < b)
/// and the packed upper triangle of the pair-symmetric matrix M_IJ.
#[derive(Debug, Clone)]
pub(crate) struct PairLayout {
    n: usize,
    m: usize,
    list: Vec<(usize, usize)>,
    /// packed index and sign for every full index (a, b, c, d); sign 0 marks zero
    gather: Vec<(usize, f64)>,
}

impl PairLayout {
    pub(crate) fn new(n: usize) -> PairLayout {
        let mut list = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                list.push((a, b));
            }
        }
        let m = list.len();
        let mut pair = vec![(usize::MAX, 0.0); n * n];
        for (i, &(a, b)) in list.iter().enumerate() {
            pair[a * n + b] = (i, 1.0);
            pair[b * n + a] = (i, -1.0);
        }
        let mut gather = vec![(0, 0.0); n.pow(4)];
        for ab in 0..n * n {
            let (i, si) = pair[ab];
            for cd in 0..n * n {
                let (j, sj) = pair[cd];
                if i != usize::MAX && j != usize::MAX {
                    gather[ab * n * n + cd] = (tri_index(m, i, j), si * sj);
                }
            }
        }
        PairLayout { n, m, list, gather }
    }

    /// Number of packed components of a pair-symmetric tensor.
    pub(crate) fn packed_len(&self) -> usize {
        self.m * (self.m + 1) / 2
    }

    pub(crate) fn sym(&self, i: usize, j: usize) -> usize {
        tri_index(self.m, i, j)
    }

    /// Packed index and sign of the full component (a, b, c, d).
    pub(crate) fn entry(&self, a: usize, b: usize, c: usize, d: usize) -> (usize, f64) {
        let n = self.n;
        self.gather[((a * n + b) * n + c) * n + d]
    }

    /// Expand packed M_IJ into the full n⁴ array R_abcd.
    pub(crate) fn unpack(&self, packed: &[f64], full: &mut [f64]) {
        for (f, &(k, s)) in full.iter_mut().zip(&self.gather) {
            *f = s * packed[k];
        }
    }
}

/// Γ^a_bc at one point from packed first derivatives d[c][s] and g^ab.
fn christoffel_point<const N: usize>(d: &[f64], gi: &[f64], out: &mut [f64]) {
    let ns = N * (N + 1) / 2;
    let mut dg = [[[0.0; N]; N]; N];
    for (c, dc) in dg.iter_mut().enumerate() {
        for a in 0..N {
            for b in a..N {
                let v = d[c * ns + tri_index(N, a, b)];
                dc[a][b] = v;
                dc[b][a] = v;
            }
        }
    }
    let mut low = [[[0.0; N]; N]; N];
    for e in 0..N {
        for b in 0..N {
            for c in b..N {
                let v = 0.5 * (dg[b][e][c] + dg[c][b][e] - dg[e][b][c]);
                low[e][b][c] = v;
                low[e][c][b] = v;
            }
        }
    }
    for a in 0..N {
        let gia = &gi[a * N..(a + 1) * N];
        for b in 0..N {
            for c in b..N {
                let mut s = 0.0;
                for e in 0..N {
                    s += gia[e] * low[e][b][c];
                }
                out[(a * N + b) * N + c] = s;
                out[(a * N + c) * N + b] = s;
            }
        }
    }
}

/// Point inputs and outputs of the curvature core.
struct CorePoint<'a> {
    layout: &'a PairLayout,
    gl: &'a [f64],
    gi: &'a [f64],
    gam: &'a [f64],
    riemann: &'a mut [f64],
    weyl: &'a mut [f64],
    ricci: &'a mut [f64],
    schouten: &'a mut [f64],
}

/// Add the quadratic Christoffel terms to the packed Riemann tensor, then
/// form Ricci, the scalar, Schouten and Weyl. Returns the scalar curvature.
fn curvature_point<const N: usize>(pt: CorePoint) -> f64 {
    let CorePoint {
        layout,
        gl,
        gi,
        gam,
        riemann,
        weyl,
        ricci,
        schouten,
    } = pt;
    let mut up = [[[0.0; N]; N]; N];
    for (q, uq) in up.iter_mut().enumerate() {
        for (c, uqc) in uq.iter_mut().enumerate() {
            uqc.copy_from_slice(&gam[(q * N + c) * N..(q * N + c + 1) * N]);
        }
    }
    // Γ_q,cb with the first index lowered
    let mut low = [[[0.0; N]; N]; N];
    for q in 0..N {
        for p in 0..N {
            let w = gl[q * N + p];
            for c in 0..N {
                for b in 0..N {
                    low[q][c][b] += w * up[p][c][b];
                }
            }
        }
    }
    for (i, &(a, b)) in layout.list.iter().enumerate() {
        for (j, &(c, d)) in layout.list.iter().enumerate().skip(i) {
            let mut s = 0.0;
            for q in 0..N {
                s += up[q][d][a] * low[q][c][b] - up[q][c][a] * low[q][d][b];
            }
            riemann[layout.sym(i, j)] += s;
        }
    }
    let mut ric = [[0.0; N]; N];
    for b in 0..N {
        for d in b..N {
            let mut s = 0.0;
            for a in 0..N {
                for c in 0..N {
                    let (k, sg) = layout.entry(a, b, c, d);
                    s += gi[a * N + c] * sg * riemann[k];
                }
            }
            ric[b][d] = s;
            ric[d][b] = s;
        }
    }
    let mut rs = 0.0;
    for a in 0..N {
        for b in 0..N {
            rs += ric[a][b] * gi[a * N + b];
        }
    }
    let nf = N as f64;
    let mut sch = [[0.0; N]; N];
    for a in 0..N {
        for b in 0..N {
            ricci[a * N + b] = ric[a][b];
            let v = (ric[a][b] - rs * gl[a * N + b] / (2.0 * (nf - 1.0))) / (nf - 2.0);
            sch[a][b] = v;
            schouten[a * N + b] = v;
        }
    }
    let gm = |a: usize, b: usize| gl[a * N + b];
    for (i, &(a, b)) in layout.list.iter().enumerate() {
        for (j, &(c, d)) in layout.list.iter().enumerate().skip(i) {
            let kn = sch[a][c] * gm(b, d) - sch[b][c] * gm(a, d) + sch[b][d] * gm(a, c)
                - sch[a][d] * gm(b, c);
            let k = layout.sym(i, j);
            weyl[k] = riemann[k] - kn;
        }
    }
    rs
}

/// Pointwise algebraic pieces of the curvature, packed where symmetric.
pub(crate) struct CurvatureCore {
    layout: PairLayout,
    /// lowered Riemann tensor, packed
    riemann: Vec<f64>,
    /// Ricci, full n²
    ricci: Vec<f64>,
    scalar: Vec<f64>,
    schouten: Vec<f64>,
    /// Weyl, packed
    weyl: Vec<f64>,
}

/// The lowered Riemann tensor is assembled as
///
/// ```text
/// R_abcd = ½(∂_b∂_c g_ad + ∂_a∂_d g_bc − ∂_a∂_c g_bd − ∂_b∂_d g_ac)
///        + g_pq (Γ^p_da Γ^q_cb − Γ^p_ca Γ^q_db)
/// ```
///
/// Periodic difference operators commute, so every algebraic symmetry of
/// the curvature tensor, first Bianchi included, holds to rounding.
fn curvature_core(g: &MetricField, conn: &Connection, stencil: &Stencil) -> Result<CurvatureCore> {
    let grid = g.grid();
    let n = grid.dim();
    if n < 3 {
        return Err(Error::Dimension {
            found: n,
            reason: "Schouten and Weyl tensors need n ≥ 3",
        });
    }
    let layout = PairLayout::new(n);
    let nn = n * n;
    let ns = n * (n + 1) / 2;
    let pl = layout.packed_len();
    let np = grid.len();

    // second-derivative contributions, grouped by the axis pair they need
    let mut terms: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); ns];
    for (i, &(a, b)) in layout.list.iter().enumerate() {
        for (j, &(c, d)) in layout.list.iter().enumerate().skip(i) {
            let k = layout.sym(i, j);
            terms[tri_index(n, b, c)].push((k, tri_index(n, a, d), 0.5));
            terms[tri_index(n, a, d)].push((k, tri_index(n, b, c), 0.5));
            terms[tri_index(n, a, c)].push((k, tri_index(n, b, d), -0.5));
            terms[tri_index(n, b, d)].push((k, tri_index(n, a, c), -0.5));
        }
    }
    let gp = pack_symmetric(g.g().data(), n);
    let mut riemann = scratch(np * pl);
    let mut d1 = scratch(np * ns);
    let mut d2 = scratch(np * ns);
    for i in 0..n {
        partial_into(grid, &gp, ns, i, stencil, &mut d1);
        for j in i..n {
            partial_into(grid, &d1, ns, j, stencil, &mut d2);
            let list = &terms[tri_index(n, i, j)];
            riemann
                .par_chunks_mut(pl)
                .zip(d2.par_chunks(ns))
                .for_each(|(r, h)| {
                    for &(k, s, c) in list {
                        r[k] += c * h[s];
                    }
                });
        }
    }
    recycle(d1);
    recycle(d2);
    recycle(gp);

    let mut ricci = scratch(np * nn);
    let mut scalar = scratch(np);
    let mut schouten = scratch(np * nn);
    let mut weyl = scratch(np * pl);
    let gl_all = g.g().data();
    let gi_all = g.inv().data();
    let kernel: fn(CorePoint) -> f64 = by_dim!(n, curvature_point);
    riemann
        .par_chunks_mut(pl)
        .zip(weyl.par_chunks_mut(pl))
        .zip(ricci.par_chunks_mut(nn))
        .zip(schouten.par_chunks_mut(nn))
        .zip(scalar.par_iter_mut())
        .enumerate()
        .for_each(|(p, ((((r, we), ric), sch), sc))| {
            *sc = kernel(CorePoint {
                layout: &layout,
                gl: &gl_all[p * nn..(p + 1) * nn],
                gi: &gi_all[p * nn..(p + 1) * nn],
                gam: conn.point(p),
                riemann: r,
                weyl: we,
                ricci: ric,
                schouten: sch,
            });
        });
    Ok(CurvatureCore {
        layout,
        riemann,
        ricci,
        scalar,
        schouten,
        weyl,
    })
}

impl Drop for CurvatureCore {
    fn drop(&mut self) {
        for v in [
            &mut self.riemann,
            &mut self.ricci,
            &mut self.scalar,
            &mut self.schouten,
            &mut self.weyl,
        ] {
            recycle(std::mem::take(v));
        }
    }
}

const N4: usize = 4;

/// G^{pd}_a = g^df Γ^p_fa and its trace γ^p = G^{pd}_d at one point.
fn raised_connection(gi: &[f64; 16], gam: &[f64], big: &mut [f64; 64], small: &mut [f64; 4]) {
    for p in 0..N4 {
        for d in 0..N4 {
            for a in 0..N4 {
                let mut s = 0.0;
                for f in 0..N4 {
                    s += gi[d * N4 + f] * gam[(p * N4 + f) * N4 + a];
                }
                big[(p * N4 + d) * N4 + a] = s;
            }
        }
        small[p] = (0..N4).map(|d| big[(p * N4 + d) * N4 + d]).sum();
    }
}

/// B_ab = ∇^c∇^d C_acbd + ½ R^cd C_acbd from the packed core, n = 4 only.
///
/// The inner divergence D_acb = ∇^d C_acbd is formed first (antisymmetric
/// in a, c), then E_ab = ∇^c D_acb.
fn bach_from_core(
    g: &MetricField,
    conn: &Connection,
    core: &CurvatureCore,
    stencil: &Stencil,
) -> Result<TensorField> {
    let grid = g.grid();
    if grid.dim() != N4 {
        return Err(Error::Dimension {
            found: grid.dim(),
            reason: "the Bach tensor is implemented for n = 4",
        });
    }
    const NN: usize = N4 * N4;
    const N3: usize = NN * N4;
    const PL: usize = 21;
    const DPER: usize = 6 * N4;
    let layout = &core.layout;
    let np = grid.len();
    let gi_all = g.inv().data();
    let gl_all = g.g().data();
    let mut pairs = [(0usize, 0usize); 6];
    pairs.copy_from_slice(&layout.list);
    // C_acbd for (a < c) = pairs[i], as packed index and sign per (b, d)
    let mut ctab = [[[(0usize, 0.0f64); N4]; N4]; 6];
    for (i, &(a, c)) in pairs.iter().enumerate() {
        for b in 0..N4 {
            for d in 0..N4 {
                ctab[i][b][d] = layout.entry(a, c, b, d);
            }
        }
    }
    let m16 = |s: &[f64]| -> [f64; NN] { s.try_into().expect("16 components") };
    // full D_acb (antisymmetric in a, c) from packed [pair][b]
    let expand_d = |dp: &[f64], out: &mut [f64; N3]| {
        out.fill(0.0);
        for (i, &(a, c)) in pairs.iter().enumerate() {
            for b in 0..N4 {
                let v = dp[i * N4 + b];
                out[(a * N4 + c) * N4 + b] = v;
                out[(c * N4 + a) * N4 + b] = -v;
            }
        }
    };

    // D_acb = g^df ∂_f C_acbd, then the connection terms of ∇_f
    let mut dfield = scratch(np * DPER);
    let mut dc = scratch(np * PL);
    for f in 0..N4 {
        partial_into(grid, &core.weyl, PL, f, stencil, &mut dc);
        dfield
            .par_chunks_mut(DPER)
            .zip(dc.par_chunks(PL))
            .zip(gi_all.par_chunks(NN))
            .for_each(|((dp, dcp), gi)| {
                let u = [gi[f], gi[N4 + f], gi[2 * N4 + f], gi[3 * N4 + f]];
                for i in 0..6 {
                    for b in 0..N4 {
                        let t = &ctab[i][b];
                        let mut s = 0.0;
                        for d in 0..N4 {
                            s += u[d] * t[d].1 * dcp[t[d].0];
                        }
                        dp[i * N4 + b] += s;
                    }
                }
            });
    }
    recycle(dc);
    dfield
        .par_chunks_mut(DPER)
        .zip(core.weyl.par_chunks(PL))
        .zip(conn.gamma.par_chunks(N3))
        .zip(gi_all.par_chunks(NN))
        .for_each_init(
            || ([0.0; NN * NN], [0.0; N3], [0.0; N4]),
            |(full, big, small), (((dp, cp), gam), gi)| {
                layout.unpack(cp, full);
                raised_connection(&m16(gi), gam, big, small);
                let cf =
                    |a: usize, b: usize, c: usize, d: usize| full[((a * N4 + b) * N4 + c) * N4 + d];
                for (i, &(a, c)) in pairs.iter().enumerate() {
                    for b in 0..N4 {
                        let mut s = 0.0;
                        for q in 0..N4 {
                            for d in 0..N4 {
                                let row = (q * N4 + d) * N4;
                                s += big[row + a] * cf(q, c, b, d)
                                    + big[row + c] * cf(a, q, b, d)
                                    + big[row + b] * cf(a, c, q, d);
                            }
                            s += small[q] * cf(a, c, b, q);
                        }
                        dp[i * N4 + b] -= s;
                    }
                }
            },
        );

    // E_ab = g^ce ∂_e D_acb
    let mut e_acc = scratch(np * NN);
    let mut dd = scratch(np * DPER);
    for e in 0..N4 {
        partial_into(grid, &dfield, DPER, e, stencil, &mut dd);
        e_acc
            .par_chunks_mut(NN)
            .zip(dd.par_chunks(DPER))
            .zip(gi_all.par_chunks(NN))
            .for_each_init(
                || [0.0; N3],
                |dfull, ((ea, ddp), gi)| {
                    expand_d(ddp, dfull);
                    let u = [gi[e], gi[N4 + e], gi[2 * N4 + e], gi[3 * N4 + e]];
                    for a in 0..N4 {
                        for b in 0..N4 {
                            let mut s = 0.0;
                            for c in 0..N4 {
                                s += u[c] * dfull[(a * N4 + c) * N4 + b];
                            }
                            ea[a * N4 + b] += s;
                        }
                    }
                },
            );
    }
    recycle(dd);

    // connection terms of ∇_e, the Ricci-Weyl term, then symmetrise and
    // remove the trace
    let mut out = scratch(np * NN);
    out.par_chunks_mut(NN)
        .zip(e_acc.par_chunks(NN))
        .zip(dfield.par_chunks(DPER))
        .zip(core.weyl.par_chunks(PL))
        .zip(conn.gamma.par_chunks(N3))
        .enumerate()
        .for_each_init(
            || ([0.0; NN * NN], [0.0; N3], [0.0; N4], [0.0; N3]),
            |(full, big, small, dfull), (p, ((((o, ea), dp), cp), gam))| {
                let gi = m16(&gi_all[p * NN..(p + 1) * NN]);
                let gl = m16(&gl_all[p * NN..(p + 1) * NN]);
                let ric = m16(&core.ricci[p * NN..(p + 1) * NN]);
                raised_connection(&gi, gam, big, small);
                layout.unpack(cp, full);
                expand_d(dp, dfull);
                let mut half = [0.0; NN];
                let mut ric_up = [0.0; NN];
                for c in 0..N4 {
                    for y in 0..N4 {
                        half[c * N4 + y] = (0..N4).map(|x| gi[c * N4 + x] * ric[x * N4 + y]).sum();
                    }
                }
                for c in 0..N4 {
                    for d in 0..N4 {
                        ric_up[c * N4 + d] =
                            (0..N4).map(|y| half[c * N4 + y] * gi[y * N4 + d]).sum();
                    }
                }
                for a in 0..N4 {
                    for b in 0..N4 {
                        let mut s = ea[a * N4 + b];
                        for q in 0..N4 {
                            for c in 0..N4 {
                                let row = (q * N4 + c) * N4;
                                s -= big[row + a] * dfull[(q * N4 + c) * N4 + b];
                                s -= big[row + b] * dfull[(a * N4 + c) * N4 + q];
                            }
                            s -= small[q] * dfull[(a * N4 + q) * N4 + b];
                        }
                        let mut rc = 0.0;
                        for c in 0..N4 {
                            for d in 0..N4 {
                                rc += ric_up[c * N4 + d] * full[((a * N4 + c) * N4 + b) * N4 + d];
                            }
                        }
                        o[a * N4 + b] = s + 0.5 * rc;
                    }
                }
                for a in 0..N4 {
                    for b in a + 1..N4 {
                        let s = 0.5 * (o[a * N4 + b] + o[b * N4 + a]);
                        o[a * N4 + b] = s;
                        o[b * N4 + a] = s;
                    }
                }
                project_tracefree(o, &gl, &gi, N4);
            },
        );
    recycle(e_acc);
    recycle(dfield);
    let mut t = TensorField::from_data(grid, vec![Slot::Co, Slot::Co], out)?;
    t.set_symmetry(Symmetry::TfSymmetric2);
    Ok(t)
}

/// The Bach tensor of a four-dimensional metric.
pub fn bach(g: &MetricField, fd_order: usize) -> Result<TensorField> {
    if g.dim() != N4 {
        return Err(Error::Dimension {
            found: g.dim(),
            reason: "the Bach tensor is implemented for n = 4",
        });
    }
    let stencil = g.grid().check_stencil(fd_order)?;
    let conn = christoffel(g, fd_order)?;
    let core = curvature_core(g, &conn, &stencil)?;
    bach_from_core(g, &conn, &core, &stencil)
}

#[derive(Debug, Clone)]
pub struct CurvaturePack {
    pub connection: Connection,
    pub riemann: TensorField,
    pub ricci: TensorField,
    pub scalar: ScalarField,
    pub schouten: TensorField,
    pub weyl: TensorField,
    pub cotton: TensorField,
    bach: Option<TensorField>,
}

impl CurvaturePack {
    pub fn bach(&self) -> Result<&TensorField> {
        self.bach.as_ref().ok_or(Error::Dimension {
            found: self.ricci.dim(),
            reason: "the Bach tensor is implemented for n = 4",
        })
    }
}

fn packed_to_field(
    grid: &Arc<ChartGrid>,
    layout: &PairLayout,
    packed: &[f64],
) -> Result<TensorField> {
    let n4 = grid.dim().pow(4);
    let pl = layout.packed_len();
    let mut data = vec![0.0; grid.len() * n4];
    data.par_chunks_mut(n4)
        .zip(packed.par_chunks(pl))
        .for_each(|(full, pk)| layout.unpack(pk, full));
    let mut t = TensorField::from_data(grid, vec![Slot::Co; 4], data)?;
    t.set_symmetry(Symmetry::AlgCurvature);
    Ok(t)
}

/// Every curvature quantity of `g`; the Bach entry is present for n = 4.
pub fn curvature_pack(g: &MetricField, fd_order: usize) -> Result<CurvaturePack> {
    let grid = g.grid().clone();
    let stencil = grid.check_stencil(fd_order)?;
    let n = grid.dim();
    let nn = n * n;
    let conn = christoffel(g, fd_order)?;
    let core = curvature_core(g, &conn, &stencil)?;
    let riemann = packed_to_field(&grid, &core.layout, &core.riemann)?;
    let weyl = packed_to_field(&grid, &core.layout, &core.weyl)?;
    let ricci = TensorField::from_data(&grid, vec![Slot::Co, Slot::Co], core.ricci.clone())?
        .tag_symmetric()?;
    let schouten = TensorField::from_data(&grid, vec![Slot::Co, Slot::Co], core.schouten.clone())?
        .tag_symmetric()?;
    let scalar = ScalarField::from_values(&grid, core.scalar.clone())?;
    let dp = covariant_derivative(&schouten, &conn, fd_order)?;
    let mut cot = vec![0.0; grid.len() * n * nn];
    cot.par_chunks_mut(n * nn)
        .zip(dp.data().par_chunks(n * nn))
        .for_each(|(c, d)| {
            for a in 0..n {
                for b in 0..n {
                    for e in 0..n {
                        c[(a * n + b) * n + e] = d[(a * n + b) * n + e] - d[(b * n + a) * n + e];
                    }
                }
            }
        });
    let cotton = TensorField::from_data(&grid, vec![Slot::Co; 3], cot)?;
    let bach = if n == N4 {
        Some(bach_from_core(g, &conn, &core, &stencil)?)
    } else {
        None
    };
    Ok(CurvaturePack {
        connection: conn,
        riemann,
        ricci,
        scalar,
        schouten,
        weyl,
        cotton,
        bach,
    })
}

/// Componentwise coordinate bi-Laplacian (Σ_i ∂_i²)² with the same stencil,
/// used as the magnitude of fourth-derivative terms.
pub fn coordinate_bilaplacian(t: &TensorField, fd_order: usize) -> Result<TensorField> {
    let grid = t.grid().clone();
    let stencil = grid.check_stencil(fd_order)?;
    let nc = t.ncomp();
    let lap = |src: &[f64]| {
        let mut acc = vec![0.0; src.len()];
        for axis in 0..grid.dim() {
            let d1 = partial_vec(&grid, src, nc, axis, &stencil);
            let d2 = partial_vec(&grid, &d1, nc, axis, &stencil);
            acc.iter_mut().zip(&d2).for_each(|(a, b)| *a += b);
        }
        acc
    };
    let once = lap(t.data());
    TensorField::from_data(&grid, t.slots().to_vec(), lap(&once))
}

/// Magnitude of the individual fourth-derivative terms that cancel inside
/// the Bach tensor of `g`: sup of the coordinate bi-Laplacian of g_ab.
pub fn bach_scale(g: &MetricField, fd_order: usize) -> Result<f64> {
    Ok(coordinate_bilaplacian(g.g(), fd_order)?.sup_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ChartGrid;
    use crate::tensor::trace;

    fn conformal_metric(grid: &Arc<ChartGrid>) -> MetricField {
        MetricField::from_fn(grid, |x, g| {
            let e = (2.0 * upsilon(x)).exp();
            for a in 0..4 {
                g[a * 4 + a] = e;
            }
        })
        .unwrap()
    }

    fn upsilon(x: &[f64]) -> f64 {
        0.1 * x[0].sin() * x[1].cos()
    }

    fn d_upsilon(x: &[f64]) -> [f64; 4] {
        [
            0.1 * x[0].cos() * x[1].cos(),
            -0.1 * x[0].sin() * x[1].sin(),
            0.0,
            0.0,
        ]
    }

    pub(crate) fn generic_metric(grid: &Arc<ChartGrid>) -> MetricField {
        MetricField::from_fn(grid, |x, g| {
            for a in 0..4 {
                g[a * 4 + a] = 1.0;
            }
            g[0] += 0.05 * (x[1] + x[2]).sin();
            g[5] += 0.05 * (x[0] - x[3]).cos();
            g[10] += 0.05 * x[0].sin() * x[1].cos();
            g[1] = 0.05 * (x[2] + x[3]).cos();
            g[4] = g[1];
            g[11] = 0.05 * (x[0] + x[1]).sin();
            g[14] = g[11];
        })
        .unwrap()
    }

    #[test]
    fn packed_layout_is_consistent() {
        for n in 3..6 {
            let layout = PairLayout::new(n);
            let mut seen = vec![false; layout.packed_len()];
            for i in 0..layout.m {
                for j in i..layout.m {
                    let k = layout.sym(i, j);
                    assert!(!seen[k]);
                    seen[k] = true;
                    assert_eq!(k, layout.sym(j, i));
                }
            }
            assert!(seen.iter().all(|s| *s));
        }
    }

    #[test]
    fn flat_metric_has_no_curvature() {
        let grid = ChartGrid::new(4, 9).unwrap();
        let g = MetricField::flat(&grid);
        let pack = curvature_pack(&g, 6).unwrap();
        assert!(pack.connection.sup_norm() == 0.0);
        for t in [
            &pack.riemann,
            &pack.ricci,
            &pack.schouten,
            &pack.weyl,
            &pack.cotton,
            pack.bach().unwrap(),
        ] {
            assert!(t.sup_norm() <= 1e-12);
        }
        assert!(pack.scalar.sup_norm() <= 1e-12);
    }

    #[test]
    fn conformal_christoffels_match_closed_form() {
        let mut errs = Vec::new();
        for n in [12, 16, 24] {
            let grid = ChartGrid::new(4, n).unwrap();
            let g = conformal_metric(&grid);
            let conn = christoffel(&g, 6).unwrap();
            let mut worst = 0.0f64;
            for p in 0..grid.len() {
                let x = grid.coords(p);
                let du = d_upsilon(&x);
                for a in 0..4 {
                    for b in 0..4 {
                        for c in 0..4 {
                            let dab = (a == b) as u8 as f64;
                            let dac = (a == c) as u8 as f64;
                            let dbc = (b == c) as u8 as f64;
                            let exact = dab * du[c] + dac * du[b] - dbc * du[a];
                            worst = worst.max((conn.at(p, a, b, c) - exact).abs());
                        }
                    }
                }
            }
            errs.push((n, worst));
        }
        let fit = crate::grid::convergence_rate(&errs).unwrap();
        assert!(fit.monotone && fit.rate > 5.0, "{errs:?}");
        assert!(errs[2].1 < 1e-5, "{errs:?}");
    }

    #[test]
    fn conformal_ricci_matches_closed_form() {
        // Ric = −(n−2)(∂∂u − du du) − (Δu + (n−2)|du|²) δ for e^{2u}δ
        let mut errs = Vec::new();
        for n in [10, 14, 20] {
            let grid = ChartGrid::new(4, n).unwrap();
            let g = conformal_metric(&grid);
            let pack = curvature_pack(&g, 6).unwrap();
            let mut worst = 0.0f64;
            for p in 0..grid.len() {
                let x = grid.coords(p);
                let du = d_upsilon(&x);
                let (s1, c1, s2, c2) = (x[0].sin(), x[0].cos(), x[1].sin(), x[1].cos());
                let mut hess = [[0.0; 4]; 4];
                hess[0][0] = -0.1 * s1 * c2;
                hess[1][1] = -0.1 * s1 * c2;
                hess[0][1] = -0.1 * c1 * s2;
                hess[1][0] = hess[0][1];
                let lap = hess[0][0] + hess[1][1];
                let grad2: f64 = du.iter().map(|v| v * v).sum();
                for a in 0..4 {
                    for b in 0..4 {
                        let delta = (a == b) as u8 as f64;
                        let exact =
                            -2.0 * (hess[a][b] - du[a] * du[b]) - (lap + 2.0 * grad2) * delta;
                        worst = worst.max((pack.ricci.at(p, &[a, b]) - exact).abs());
                    }
                }
            }
            errs.push((n, worst));
        }
        let fit = crate::grid::convergence_rate(&errs).unwrap();
        assert!(fit.monotone && fit.rate > 5.0, "{errs:?}");
    }

    #[test]
    fn metric_is_parallel_to_rounding() {
        let mut errs = Vec::new();
        for n in [10, 14, 20] {
            let grid = ChartGrid::new(4, n).unwrap();
            let g = generic_metric(&grid);
            let conn = christoffel(&g, 6).unwrap();
            let dg = covariant_derivative(g.g(), &conn, 6).unwrap();
            errs.push((n, dg.sup_norm()));
        }
        // the discrete Christoffels are built from the same differences
        assert!(errs.iter().all(|e| e.1 < 1e-14), "{errs:?}");
    }

    #[test]
    fn covariant_derivative_basics() {
        let grid = ChartGrid::new(4, 8).unwrap();
        let g = generic_metric(&grid);
        let conn = christoffel(&g, 4).unwrap();
        let c = TensorField::from_fn(&grid, vec![], |_, v| v[0] = 2.5);
        assert!(covariant_derivative(&c, &conn, 4).unwrap().sup_norm() < 1e-13);

        let flat = MetricField::flat(&grid);
        let fconn = christoffel(&flat, 4).unwrap();
        let f = TensorField::from_fn(&grid, vec![], |x, v| v[0] = (x[0] + 2.0 * x[3]).sin());
        let grad = covariant_derivative(&f, &fconn, 4).unwrap();
        let sf = f.component(&[]);
        for axis in 0..4 {
            let d = sf.partial(axis, 4).unwrap();
            let gc = grad.component(&[axis]);
            assert_eq!(d.values(), gc.values());
        }
        let hess = covariant_derivative(&grad, &fconn, 4).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let x = hess.component(&[a, b]);
                let y = hess.component(&[b, a]);
                let d = x.zip_map(&y, |u, v| u - v).unwrap().sup_norm();
                assert!(d < 1e-13);
            }
        }
    }

    #[test]
    fn riemann_symmetries_and_weyl_traces() {
        let grid = ChartGrid::new(4, 12).unwrap();
        let g = generic_metric(&grid);
        let pack = curvature_pack(&g, 6).unwrap();
        let n = 4;
        let r = &pack.riemann;
        let scale = r.sup_norm();
        let mut anti = 0.0f64;
        let mut pair = 0.0f64;
        let mut bianchi = 0.0f64;
        for p in (0..grid.len()).step_by(97) {
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        for d in 0..n {
                            let v = r.at(p, &[a, b, c, d]);
                            anti = anti.max((v + r.at(p, &[b, a, c, d])).abs());
                            pair = pair.max((v - r.at(p, &[c, d, a, b])).abs());
                            bianchi = bianchi
                                .max((v + r.at(p, &[a, c, d, b]) + r.at(p, &[a, d, b, c])).abs());
                        }
                    }
                }
            }
        }
        assert!(bianchi < 1e-15 * scale.max(1.0), "{bianchi}");
        assert!(anti == 0.0 && pair == 0.0);

        let w = &pack.weyl;
        let mut worst = 0.0f64;
        for p in 0..grid.len() {
            let gi = g.inv().point(p);
            for (s1, s2) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
                for i in 0..n {
                    for j in 0..n {
                        let mut s = 0.0;
                        for a in 0..n {
                            for b in 0..n {
                                let mut idx = [0usize; 4];
                                let free: Vec<usize> =
                                    (0..4).filter(|k| *k != s1 && *k != s2).collect();
                                idx[s1] = a;
                                idx[s2] = b;
                                idx[free[0]] = i;
                                idx[free[1]] = j;
                                s += gi[a * n + b] * w.at(p, &idx);
                            }
                        }
                        worst = worst.max(s.abs());
                    }
                }
            }
        }
        assert!(worst < 1e-15 * w.sup_norm().max(1.0) * 16.0, "{worst}");
        let tb = trace(pack.bach().unwrap(), &g).unwrap().sup_norm();
        assert!(tb <= 1e-12, "{tb}");
    }

    // With commuting difference operators the discrete Riemann tensor of
    // e^{2u}δ is an exact Kulkarni-Nomizu product with g up to rounding.
    #[test]
    fn conformally_flat_weyl_and_bach_vanish() {
        let mut weyl = Vec::new();
        let mut bach_res = Vec::new();
        for n in [12, 16, 24] {
            let grid = ChartGrid::new(4, n).unwrap();
            let g = conformal_metric(&grid);
            let pack = curvature_pack(&g, 6).unwrap();
            weyl.push((n, pack.weyl.sup_norm() / pack.riemann.sup_norm()));
            bach_res.push((
                n,
                pack.bach().unwrap().sup_norm() / bach_scale(&g, 6).unwrap(),
            ));
        }
        assert!(weyl.iter().all(|e| e.1 < 1e-13), "{weyl:?}");
        assert!(bach_res.iter().all(|e| e.1 < 1e-13), "{bach_res:?}");
    }

    #[test]
    fn flat_divergence_closed_form() {
        let grid = ChartGrid::new(4, 16).unwrap();
        let g = MetricField::flat(&grid);
        let t = TensorField::from_fn(&grid, vec![Slot::Co, Slot::Co], |x, t| t[0] = x[0].sin())
            .tag_symmetric()
            .unwrap();
        let conn = christoffel(&g, 8).unwrap();
        let div = divergence(&t, &g, &conn).unwrap();
        for p in 0..grid.len() {
            let x = grid.coords(p);
            assert!((div.at(p, &[0]) - x[0].cos()).abs() < 1e-6);
            for a in 1..4 {
                assert!(div.at(p, &[a]).abs() < 1e-15);
            }
        }
        assert!(divergence(g.g(), &g, &conn).unwrap().sup_norm() < 1e-14);
    }

    #[test]
    fn divergence_forms_agree() {
        let mut errs = Vec::new();
        for n in [10, 14, 20] {
            let grid = ChartGrid::new(4, n).unwrap();
            let g = generic_metric(&grid);
            let conn = christoffel(&g, 6).unwrap();
            let t = TensorField::from_fn(&grid, vec![Slot::Co, Slot::Co], |x, t| {
                for a in 0..4 {
                    for b in a..4 {
                        let v = (x[b] + a as f64).sin() * 0.3 + (x[a] - x[(b + 1) % 4]).cos();
                        t[a * 4 + b] = v;
                        t[b * 4 + a] = v;
                    }
                }
            })
            .tag_symmetric()
            .unwrap();
            let d1 = divergence(&t, &g, &conn).unwrap();
            let d2 = divergence_covariant(&t, &g, &conn).unwrap();
            errs.push((n, d1.sub(&d2).unwrap().sup_norm() / d1.sup_norm()));
        }
        let fit = crate::grid::convergence_rate(&errs).unwrap();
        assert!(fit.monotone && fit.rate > 4.0, "{errs:?}");
    }

    #[test]
    fn metric_divergence_vanishes_to_stencil_order() {
        let grid = ChartGrid::new(4, 12).unwrap();
        let g = generic_metric(&grid);
        let conn = christoffel(&g, 6).unwrap();
        let d = divergence(g.g(), &g, &conn).unwrap().sup_norm();
        assert!(d < 1e-4, "{d}");
        assert!(divergence_covariant(g.g(), &g, &conn).unwrap().sup_norm() < 1e-14);
    }

    #[test]
    fn bach_rejects_other_dimensions() {
        let grid = ChartGrid::new(3, 8).unwrap();
        let g = MetricField::flat(&grid);
        assert!(matches!(
            bach(&g, 6),
            Err(Error::Dimension { found: 3, .. })
        ));
        let pack = curvature_pack(&g, 6).unwrap();
        assert!(pack.bach().is_err());
        assert!(pack.weyl.sup_norm() == 0.0);
    }
}
