//! The curvature chain from Christoffel symbols to the Bach tensor.
//!
//! cargo run --release --example curvature

use detour::conformal::{preset, PresetParams};
use detour::geometry::{bach_scale, curvature_pack};
use detour::grid::ChartGrid;
use detour::tensor::trace;

fn main() -> detour::Result<()> {
    let grid = ChartGrid::new(4, 12)?;
    let fd = 6;
    for name in ["flat", "conf_flat", "bumpy"] {
        let g = preset(name, &PresetParams::new(), &grid)?;
        let pack = curvature_pack(&g, fd)?;
        let b = pack.bach()?;
        println!("{name}:");
        println!("  sup |Riemann| = {:.3e}", pack.riemann.sup_norm());
        println!("  sup |Ricci|   = {:.3e}", pack.ricci.sup_norm());
        println!("  sup |Weyl|    = {:.3e}", pack.weyl.sup_norm());
        println!("  sup |Cotton|  = {:.3e}", pack.cotton.sup_norm());
        println!("  sup |Bach|    = {:.3e} (scale {:.3e})", b.sup_norm(), bach_scale(&g, fd)?);
        println!("  sup |tr Bach| = {:.3e}", trace(b, &g)?.sup_norm());
    }
    Ok(())
}
