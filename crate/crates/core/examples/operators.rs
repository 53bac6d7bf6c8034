//! The operators of the complex: K0, its formal adjoint, and the
//! linearised Bach operator with a Richardson error estimate.
//!
//! cargo run --release --example operators

use detour::conformal::{preset, PresetParams};
use detour::geometry::christoffel;
use detour::grid::ChartGrid;
use detour::harness::{random_tracefree, random_vector};
use detour::operators::{conformal_killing, k0_adjoint, linearized_bach, naturality_residual, LinearizationPlan};
use detour::tensor::{inner_product, lower_index, trace};

fn main() -> detour::Result<()> {
    let fd = 6;
    let grid = ChartGrid::new(4, 10)?;
    let g = preset("bumpy", &PresetParams::new(), &grid)?;
    let conn = christoffel(&g, fd)?;
    let x = random_vector(1, &grid, 2)?;
    let h = random_tracefree(2, &g, 2)?;

    let k0x = conformal_killing(&g, &conn, &x)?;
    println!("sup |tr K0 X| = {:.3e}", trace(&k0x, &g)?.sup_norm());

    let lhs = inner_product(&k0x, &h, &g)?;
    let rhs = inner_product(&lower_index(&x, 0, &g)?, &k0_adjoint(&g, &conn, &h)?, &g)?;
    println!("<K0 X, h> = {lhs:.15e}");
    println!("<X, K0* h> = {rhs:.15e}");

    let plan = LinearizationPlan::default();
    let bh = linearized_bach(&g, &h, &plan, fd)?;
    println!(
        "B h: sup {:.3e}, error estimate {:.1e}, {} Bach evaluations",
        bh.value.sup_norm(),
        bh.error_estimate.unwrap_or(f64::NAN),
        bh.evaluations
    );
    println!("naturality residual at N = 10: {:.3e}", naturality_residual(&g, &conn, &x, &plan)?);
    Ok(())
}
