//! Periodic coordinate lattices and the finite-difference calculus on them.
//!
//! Points are stored with axis 0 varying fastest. Multi-component data is
//! point-major: component `c` of point `p` lives at `p * ncomp + c`, so one
//! stencil sweep differentiates every component at once.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported central-difference orders.
pub const FD_ORDERS: [usize; 4] = [2, 4, 6, 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartGrid {
    points: Vec<usize>,
    periods: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl ChartGrid {
    /// `dim` axes with `n` points each and period 2π.
    pub fn new(dim: usize, n: usize) -> Result<Arc<ChartGrid>> {
        Self::with_axes(vec![n; dim], vec![2.0 * PI; dim])
    }

    pub fn with_axes(points: Vec<usize>, periods: Vec<f64>) -> Result<Arc<ChartGrid>> {
        if points.len() < 2 {
            return Err(Error::Dimension {
                found: points.len(),
                reason: "charts need at least two axes",
            });
        }
        if points.len() != periods.len() {
            return Err(Error::invalid("points and periods differ in length"));
        }
        if points.contains(&0) || periods.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(
                "axes need at least one point and a positive period",
            ));
        }
        let mut strides = Vec::with_capacity(points.len());
        let mut len = 1usize;
        for &n in &points {
            strides.push(len);
            len *= n;
        }
        Ok(Arc::new(ChartGrid {
            points,
            periods,
            strides,
            len,
        }))
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    /// Total number of lattice points.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn points(&self, axis: usize) -> usize {
        self.points[axis]
    }

    pub fn period(&self, axis: usize) -> f64 {
        self.periods[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.periods[axis] / self.points[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Volume of the coordinate box, Π L_i.
    pub fn box_volume(&self) -> f64 {
        self.periods.iter().product()
    }

    pub fn coords_into(&self, mut p: usize, x: &mut [f64]) {
        for axis in 0..self.dim() {
            let n = self.points[axis];
            x[axis] = (p % n) as f64 * self.spacing(axis);
            p /= n;
        }
    }

    pub fn coords(&self, p: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coords_into(p, &mut x);
        x
    }

    /// Linear index of the lattice point with integer coordinates `k`.
    pub fn index(&self, k: &[usize]) -> usize {
        k.iter()
            .zip(&self.strides)
            .zip(&self.points)
            .map(|((&ki, &s), &n)| (ki % n) * s)
            .sum()
    }

    pub fn check_stencil(&self, order: usize) -> Result<Stencil> {
        let stencil = Stencil::central(order)?;
        for axis in 0..self.dim() {
            let needed = order + 1;
            if self.points[axis] < needed {
                return Err(Error::GridTooSmall {
                    axis,
                    points: self.points[axis],
                    order,
                    needed,
                });
            }
        }
        Ok(stencil)
    }
}

/// Antisymmetric central first-derivative weights `c_m`, m = 1..order/2:
/// f'(x) ≈ Σ c_m (f(x + m h) − f(x − m h)) / h.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    order: usize,
    weights: Vec<f64>,
}

impl Stencil {
    pub fn central(order: usize) -> Result<Stencil> {
        let weights = match order {
            2 => vec![0.5],
            4 => vec![2.0 / 3.0, -1.0 / 12.0],
            6 => vec![0.75, -0.15, 1.0 / 60.0],
            8 => vec![0.8, -0.2, 4.0 / 105.0, -1.0 / 280.0],
            _ => return Err(Error::FdOrder(order)),
        };
        Ok(Stencil { order, weights })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Differentiate point-major data with `ncomp` components along `axis`.
pub(crate) fn partial_into(
    grid: &ChartGrid,
    src: &[f64],
    ncomp: usize,
    axis: usize,
    stencil: &Stencil,
    dst: &mut [f64],
) {
    debug_assert_eq!(src.len(), grid.len() * ncomp);
    debug_assert_eq!(dst.len(), src.len());
    let n = grid.points[axis];
    let run = grid.strides[axis] * ncomp;
    let block = run * n;
    let inv_h = 1.0 / grid.spacing(axis);
    let weights: Vec<f64> = stencil.weights.iter().map(|w| w * inv_h).collect();
    let line = |src: &[f64], out: &mut [f64], k: usize| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (m, &w) in weights.iter().enumerate() {
            let m = m + 1;
            let plus = ((k + m) % n) * run;
            let minus = ((k + n * m - m) % n) * run;
            let fp = &src[plus..plus + run];
            let fm = &src[minus..minus + run];
            for ((o, a), c) in out.iter_mut().zip(fp).zip(fm) {
                *o += w * (a - c);
            }
        }
    };
    if run <= 512 {
        // short runs: whole lines, with the interior as contiguous slices
        let task = block * (4096 / block).max(1);
        dst.par_chunks_mut(task)
            .zip(src.par_chunks(task))
            .for_each(|(outs, ss)| {
                for (out, s) in outs.chunks_mut(block).zip(ss.chunks(block)) {
                    out.iter_mut().for_each(|v| *v = 0.0);
                    for (m, &w) in weights.iter().enumerate() {
                        let m = m + 1;
                        let len = (n - 2 * m) * run;
                        let (fp, fm) = (&s[2 * m * run..2 * m * run + len], &s[..len]);
                        for ((o, a), c) in out[m * run..m * run + len].iter_mut().zip(fp).zip(fm) {
                            *o += w * (a - c);
                        }
                        for k in (0..m).chain(n - m..n) {
                            let plus = ((k + m) % n) * run;
                            let minus = ((k + n - m) % n) * run;
                            for c in 0..run {
                                out[k * run + c] += w * (s[plus + c] - s[minus + c]);
                            }
                        }
                    }
                }
            });
    } else {
        dst.par_chunks_mut(run).enumerate().for_each(|(q, out)| {
            let b = q / n;
            line(&src[b * block..(b + 1) * block], out, q % n);
        });
    }
}

pub(crate) fn partial_vec(
    grid: &ChartGrid,
    src: &[f64],
    ncomp: usize,
    axis: usize,
    stencil: &Stencil,
) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    partial_into(grid, src, ncomp, axis, stencil, &mut out);
    out
}

/// Gradient of point-major data: output has `dim * ncomp` components per
/// point with the derivative index first.
pub(crate) fn gradient_vec(
    grid: &ChartGrid,
    src: &[f64],
    ncomp: usize,
    stencil: &Stencil,
) -> Vec<f64> {
    let dim = grid.dim();
    let np = grid.len();
    let mut out = scratch(np * ncomp * dim);
    let mut tmp = scratch(np * ncomp);
    for axis in 0..dim {
        partial_into(grid, src, ncomp, axis, stencil, &mut tmp);
        out.par_chunks_mut(dim * ncomp)
            .zip(tmp.par_chunks(ncomp))
            .for_each(|(o, t)| o[axis * ncomp..(axis + 1) * ncomp].copy_from_slice(t));
    }
    recycle(tmp);
    out
}

/// Compensated (Neumaier) sum in index order.
/// Large scratch buffers kept between kernel calls. Touching freshly
/// mapped pages dominates the cost of short passes over big arrays, so the
/// curvature kernels recycle their intermediates through this pool.
static POOL: Mutex<Vec<Vec<f64>>> = Mutex::new(Vec::new());
const POOL_BYTES: usize = 1 << 30;

/// A zeroed buffer of `len` values, reusing pooled storage when possible.
pub(crate) fn scratch(len: usize) -> Vec<f64> {
    let reused = {
        let mut pool = POOL.lock().unwrap_or_else(|e| e.into_inner());
        let best = pool
            .iter()
            .enumerate()
            .filter(|(_, v)| v.capacity() >= len)
            .min_by_key(|(_, v)| v.capacity())
            .map(|(i, _)| i);
        best.map(|i| pool.swap_remove(i))
    };
    match reused {
        Some(mut v) => {
            v.clear();
            v.resize(len, 0.0);
            v
        }
        None => vec![0.0; len],
    }
}

/// Return a buffer to the pool; the smallest buffers are dropped when the
/// pool exceeds its byte budget.
pub(crate) fn recycle(v: Vec<f64>) {
    if v.capacity() < 1 << 16 {
        return;
    }
    let mut pool = POOL.lock().unwrap_or_else(|e| e.into_inner());
    pool.push(v);
    pool.sort_by_key(|v| std::cmp::Reverse(v.capacity()));
    let mut total = 0;
    pool.retain(|v| {
        total += v.capacity() * 8;
        total <= POOL_BYTES
    });
}

pub(crate) fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<ChartGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(grid: &Arc<ChartGrid>, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    pub fn constant(grid: &Arc<ChartGrid>, c: f64) -> ScalarField {
        ScalarField {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: &Arc<ChartGrid>, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|p| {
                grid.coords_into(p, &mut x);
                f(&x)
            })
            .collect();
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<ChartGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &ScalarField,
        f: impl Fn(f64, f64) -> f64 + Sync,
    ) -> Result<ScalarField> {
        same_grid(&self.grid, &other.grid)?;
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self
                .values
                .par_iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Central-difference ∂f/∂x^axis with periodic wraparound.
    pub fn partial(&self, axis: usize, fd_order: usize) -> Result<ScalarField> {
        partial(self, axis, fd_order)
    }
}

pub(crate) fn same_grid(a: &Arc<ChartGrid>, b: &Arc<ChartGrid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "{:?}/{:?} vs {:?}/{:?}",
            a.points, a.periods, b.points, b.periods
        )))
    }
}

pub fn partial(f: &ScalarField, axis: usize, fd_order: usize) -> Result<ScalarField> {
    let grid = &f.grid;
    if axis >= grid.dim() {
        return Err(Error::invalid(format!(
            "axis {axis} on a {}-dimensional chart",
            grid.dim()
        )));
    }
    let stencil = grid.check_stencil(fd_order)?;
    Ok(ScalarField {
        grid: grid.clone(),
        values: partial_vec(grid, &f.values, 1, axis, &stencil),
    })
}

/// Σ f · density · Π h_i over the lattice (periodic trapezoidal rule).
pub fn integrate(f: &ScalarField, density: &ScalarField) -> Result<f64> {
    same_grid(&f.grid, &density.grid)?;
    let s = stable_sum(f.values.iter().zip(&density.values).map(|(a, b)| a * b));
    Ok(s * f.grid.cell_volume())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit {
    pub rate: f64,
    pub monotone: bool,
    pub warning: Option<String>,
}

/// Least-squares slope of log(residual) against log(1/N).
pub fn convergence_rate(errors: &[(usize, f64)]) -> Result<ConvergenceFit> {
    if errors.len() < 3 {
        return Err(Error::invalid(format!(
            "convergence fit needs at least 3 resolutions, got {}",
            errors.len()
        )));
    }
    if let Some((n, r)) = errors
        .iter()
        .find(|(n, r)| !(*r > 0.0 && r.is_finite()) || *n == 0)
    {
        return Err(Error::invalid(format!(
            "residual {r} at N = {n} is not positive"
        )));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by_key(|(n, _)| *n);
    let xs: Vec<f64> = sorted.iter().map(|(n, _)| -(*n as f64).ln()).collect();
    let ys: Vec<f64> = sorted.iter().map(|(_, r)| r.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let rate = sxy / sxx;
    let monotone = sorted.windows(2).all(|w| w[1].1 < w[0].1);
    let warning = (!monotone).then(|| "residuals do not decrease monotonically".to_string());
    Ok(ConvergenceFit {
        rate,
        monotone,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine_error(n: usize, order: usize) -> f64 {
        let grid = ChartGrid::new(2, n).unwrap();
        let f = ScalarField::from_fn(&grid, |x| x[0].sin());
        let d = f.partial(0, order).unwrap();
        let exact = ScalarField::from_fn(&grid, |x| x[0].cos());
        d.zip_map(&exact, |a, b| a - b).unwrap().sup_norm()
    }

    /// Leading truncation term of the order-p central difference on sin:
    /// κ(θ)/θ − 1 with θ = h, evaluated from the stencil's modified wavenumber.
    fn modified_wavenumber_error(n: usize, order: usize) -> f64 {
        let h = 2.0 * PI / n as f64;
        let s = Stencil::central(order).unwrap();
        let kappa: f64 = s
            .weights()
            .iter()
            .enumerate()
            .map(|(m, w)| 2.0 * w * ((m + 1) as f64 * h).sin())
            .sum::<f64>()
            / h;
        (kappa - 1.0).abs()
    }

    #[test]
    fn constant_has_zero_derivative() {
        let grid = ChartGrid::new(3, 9).unwrap();
        let f = ScalarField::constant(&grid, 3.7);
        for order in FD_ORDERS {
            for axis in 0..3 {
                assert!(f.partial(axis, order).unwrap().sup_norm() < 1e-13);
            }
        }
    }

    #[test]
    fn order_six_sine_error() {
        // Leading truncation term h^6/140 · |sin^(7)| with h = 2π/32.
        let h = 2.0 * PI / 32.0;
        let bound = h.powi(6) / 140.0;
        assert!((bound - 4.09e-7).abs() < 1e-9, "{bound}");
        // The discrete derivative of sin is exactly κ·cos, so the sup error is |κ − 1|.
        let predicted = modified_wavenumber_error(32, 6);
        let measured = sine_error(32, 6);
        assert!(measured <= bound, "{measured}");
        assert!((measured - predicted).abs() < 1e-13);
        assert!((measured - bound).abs() < 0.01 * bound);
    }

    #[test]
    fn observed_order_of_sine_derivative() {
        let errors: Vec<_> = [8, 16, 32].iter().map(|&n| (n, sine_error(n, 6))).collect();
        let fit = convergence_rate(&errors).unwrap();
        assert!(fit.monotone);
        assert!(fit.rate >= 5.5 && fit.rate <= 7.0, "{}", fit.rate);
        for w in errors.windows(2) {
            let local = (w[0].1 / w[1].1).ln() / 2f64.ln();
            assert!(local >= 5.5, "{local}");
        }
    }

    #[test]
    fn stencils_reach_their_order() {
        for order in FD_ORDERS {
            let errors: Vec<_> = [12, 16, 24]
                .iter()
                .map(|&n| (n, sine_error(n, order)))
                .collect();
            let fit = convergence_rate(&errors).unwrap();
            assert!(fit.rate > order as f64 - 0.5, "order {order}: {}", fit.rate);
        }
    }

    #[test]
    fn too_small_grid_is_rejected() {
        let grid = ChartGrid::new(2, 6).unwrap();
        let f = ScalarField::constant(&grid, 1.0);
        assert!(matches!(
            f.partial(0, 6),
            Err(Error::GridTooSmall { needed: 7, .. })
        ));
        assert!(matches!(f.partial(0, 5), Err(Error::FdOrder(5))));
        assert!(f.partial(2, 2).is_err());
    }

    #[test]
    fn integrals() {
        let g4 = ChartGrid::new(4, 6).unwrap();
        let one = ScalarField::constant(&g4, 1.0);
        let expect = (2.0 * PI).powi(4);
        assert!((integrate(&one, &one).unwrap() - expect).abs() < 1e-10 * expect);

        let g2 = ChartGrid::new(2, 16).unwrap();
        let one = ScalarField::constant(&g2, 1.0);
        let s = ScalarField::from_fn(&g2, |x| x[0].sin());
        assert!(integrate(&s, &one).unwrap().abs() < 1e-13);
        // ∫∫ sin² x1 dx1 dx2 = π · 2π.
        let s2 = s.map(|v| v * v);
        assert!((integrate(&s2, &one).unwrap() - 2.0 * PI * PI).abs() < 1e-12);

        let other = ChartGrid::new(2, 8).unwrap();
        assert!(integrate(&s, &ScalarField::constant(&other, 1.0)).is_err());
    }

    #[test]
    fn rate_of_constructed_sequences() {
        let four: Vec<_> = [8usize, 16, 32]
            .iter()
            .map(|&n| (n, 3.0 * (n as f64).powi(-4)))
            .collect();
        assert!((convergence_rate(&four).unwrap().rate - 4.0).abs() < 1e-12);
        let two: Vec<_> = [8usize, 16, 32]
            .iter()
            .map(|&n| (n, 0.5 * (n as f64).powi(-2)))
            .collect();
        assert!((convergence_rate(&two).unwrap().rate - 2.0).abs() < 1e-12);
        let bumpy = [(8, 1e-3), (16, 2e-3), (32, 1e-5)];
        let fit = convergence_rate(&bumpy).unwrap();
        assert!(!fit.monotone && fit.warning.is_some());
        assert!(convergence_rate(&four[..2]).is_err());
        assert!(convergence_rate(&[(8, 1.0), (16, 0.0), (32, 1.0)]).is_err());
    }

    #[test]
    fn mixed_partials_commute() {
        let grid = ChartGrid::new(3, 10).unwrap();
        let f = ScalarField::from_fn(&grid, |x| (x[0] + 2.0 * x[1]).sin() * x[2].cos().exp());
        let a = f.partial(0, 4).unwrap().partial(2, 4).unwrap();
        let b = f.partial(2, 4).unwrap().partial(0, 4).unwrap();
        let diff = a.zip_map(&b, |x, y| x - y).unwrap().sup_norm();
        assert!(diff < 1e-13 * a.sup_norm().max(1.0), "{diff}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn partial_is_linear_and_sums_to_zero(
            c in prop::collection::vec(-1.0f64..1.0, 6),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            axis in 0usize..2,
            order_idx in 0usize..4,
        ) {
            let order = FD_ORDERS[order_idx];
            let grid = ChartGrid::new(2, 11).unwrap();
            let f = ScalarField::from_fn(&grid, |x| c[0] * x[0].sin() + c[1] * (x[0] - x[1]).cos() + c[2]);
            let g = ScalarField::from_fn(&grid, |x| c[3] * (2.0 * x[1]).sin() * x[0].cos() + c[4] * (x[0] + x[1]).sin().exp() + c[5]);
            let combo = f.zip_map(&g, |u, v| a * u + b * v).unwrap();
            let lhs = combo.partial(axis, order).unwrap();
            let rhs = f.partial(axis, order).unwrap()
                .zip_map(&g.partial(axis, order).unwrap(), |u, v| a * u + b * v).unwrap();
            let scale = lhs.sup_norm().max(1.0);
            prop_assert!(lhs.zip_map(&rhs, |u, v| u - v).unwrap().sup_norm() < 1e-13 * scale);

            let one = ScalarField::constant(&grid, 1.0);
            let total = integrate(&g.partial(axis, order).unwrap(), &one).unwrap();
            prop_assert!(total.abs() < 1e-12);
        }
    }
}
