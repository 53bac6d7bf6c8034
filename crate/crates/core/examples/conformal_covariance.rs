//! The Bach tensor has conformal weight -2: under g -> e^{2u}g it is
//! multiplied by e^{-2u}. The residual of that law shrinks at the stencil
//! rate as the grid is refined.
//!
//! cargo run --release --example conformal_covariance

use detour::conformal::{preset, rescale, weight_check_scaled, PresetParams};
use detour::exprlang::{parse, Params};
use detour::geometry::{bach, bach_scale};
use detour::grid::{convergence_rate, ChartGrid};

fn main() -> detour::Result<()> {
    let fd = 4;
    let upsilon = parse("0.1*sin(x1)")?;
    let mut rows = Vec::new();
    for n in [8, 10, 12] {
        let grid = ChartGrid::new(4, n)?;
        let g = preset("bumpy", &PresetParams::new(), &grid)?;
        let u = upsilon.sample(&grid, &Params::new())?;
        let gh = rescale(&g, &u)?;
        let scale = bach_scale(&g, fd)?.max(bach_scale(&gh, fd)?);
        let r = weight_check_scaled(&bach(&g, fd)?, &bach(&gh, fd)?, &u, -2.0, scale)?;
        println!("N = {n:>2}: relative residual {r:.3e}");
        rows.push((n, r));
    }
    let fit = convergence_rate(&rows)?;
    println!("fitted order {:.2} (stencil order {fd}), monotone: {}", fit.rate, fit.monotone);
    Ok(())
}
