//! Seeded band-limited random fields on periodic charts.
//!
//! A field is a short sum of integer-frequency modes per component. The
//! modes are drawn first and then sampled, so one seed gives the same
//! smooth function on every grid and convergence studies compare like with
//! like.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ChartGrid, ScalarField};
use crate::tensor::{tracefree_part, MetricField, Slot, TensorField};

/// Modes per component.
const MODES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Scalar,
    Vector,
    TracefreeSymmetric,
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The seed of draw `draw` in the stream named `label` under `seed`.
pub fn draw_seed(seed: u64, label: &str, draw: usize) -> u64 {
    let h = label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    mix(mix(seed ^ h) ^ draw as u64)
}

#[derive(Debug, Clone)]
struct Mode {
    k: Vec<i64>,
    amplitude: f64,
    phase: f64,
}

fn draw_modes(rng: &mut ChaCha8Rng, dim: usize, max_frequency: u32) -> Vec<Mode> {
    let kmax = max_frequency as i64;
    (0..MODES)
        .map(|_| {
            let k = loop {
                let k: Vec<i64> = (0..dim).map(|_| rng.gen_range(-kmax..=kmax)).collect();
                if k.iter().any(|&v| v != 0) {
                    break k;
                }
            };
            Mode {
                k,
                amplitude: rng.gen_range(-1.0..1.0),
                phase: rng.gen_range(0.0..TAU),
            }
        })
        .collect()
}

fn eval_modes(modes: &[Mode], x: &[f64]) -> f64 {
    modes
        .iter()
        .map(|m| m.amplitude * (m.k.iter().zip(x).map(|(k, x)| *k as f64 * x).sum::<f64>() + m.phase).cos())
        .sum()
}

fn check_period(grid: &ChartGrid) -> Result<()> {
    for a in 0..grid.dim() {
        if (grid.period(a) - TAU).abs() > 1e-12 {
            return Err(Error::invalid("random fields use integer frequencies and need period 2π"));
        }
    }
    Ok(())
}

fn unit(t: TensorField) -> TensorField {
    let s = t.sup_norm();
    if s > 0.0 {
        t.scale(1.0 / s)
    } else {
        t
    }
}

/// A random scalar with unit sup-norm and wave numbers |k_a| ≤ max_frequency.
pub fn random_scalar(seed: u64, grid: &Arc<ChartGrid>, max_frequency: u32) -> Result<ScalarField> {
    check_period(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = draw_modes(&mut rng, grid.dim(), max_frequency);
    let f = ScalarField::from_fn(grid, |x| eval_modes(&modes, x));
    let s = f.sup_norm();
    Ok(if s > 0.0 { f.map(|v| v / s) } else { f })
}

/// A random contravariant vector field with unit sup-norm.
pub fn random_vector(seed: u64, grid: &Arc<ChartGrid>, max_frequency: u32) -> Result<TensorField> {
    check_period(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.dim();
    let modes: Vec<Vec<Mode>> = (0..n).map(|_| draw_modes(&mut rng, n, max_frequency)).collect();
    Ok(unit(TensorField::from_fn(grid, vec![Slot::Contra], |x, v| {
        for (c, m) in v.iter_mut().zip(&modes) {
            *c = eval_modes(m, x);
        }
    })))
}

/// A random symmetric 2-tensor made trace-free with respect to `g`, with
/// unit sup-norm. The projection multiplies by g, so frequencies exceed
/// the bound when g is not constant.
pub fn random_tracefree(seed: u64, g: &MetricField, max_frequency: u32) -> Result<TensorField> {
    let grid = g.grid();
    check_period(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.dim();
    let modes: Vec<Vec<Mode>> = (0..n * (n + 1) / 2).map(|_| draw_modes(&mut rng, n, max_frequency)).collect();
    let t = TensorField::from_fn(grid, vec![Slot::Co, Slot::Co], |x, t| {
        let mut k = 0;
        for a in 0..n {
            for b in a..n {
                let v = eval_modes(&modes[k], x);
                t[a * n + b] = v;
                t[b * n + a] = v;
                k += 1;
            }
        }
    });
    let tf = tracefree_part(&t, g)?;
    let s = tf.sup_norm();
    let out = if s > 0.0 { tf.scale(1.0 / s) } else { tf };
    out.tag_tracefree(g)
}

/// A random field of the given kind as a tensor field (rank 0 for scalars).
/// Trace-free fields are taken with respect to `g`.
pub fn random_field(seed: u64, g: &MetricField, kind: FieldKind, max_frequency: u32) -> Result<TensorField> {
    match kind {
        FieldKind::Scalar => {
            let f = random_scalar(seed, g.grid(), max_frequency)?;
            TensorField::from_data(g.grid(), vec![], f.into_values())
        }
        FieldKind::Vector => random_vector(seed, g.grid(), max_frequency),
        FieldKind::TracefreeSymmetric => random_tracefree(seed, g, max_frequency),
    }
}
