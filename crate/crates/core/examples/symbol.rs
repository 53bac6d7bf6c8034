//! Principal symbols at a point: ranks of sigma(K0), sigma(W), sigma(B)
//! and the principal angle between im sigma(K0) and ker sigma(B).
//!
//! cargo run --release --example symbol

use detour::symbol::{ellipticity_trials, exactness_check, homogeneity, PointFrame, DEFAULT_ANGLE_TOL};

fn main() -> detour::Result<()> {
    let frame = PointFrame::identity([1.0, 2.0, 0.0, -1.0])?;
    let e = exactness_check(&frame, DEFAULT_ANGLE_TOL)?;
    println!(
        "ranks (K0, W, B) = ({}, {}, {}), dim im = {}, dim ker = {}, max angle {:.2e}",
        e.rank_k0, e.rank_w, e.rank_b, e.image_dim, e.kernel_dim, e.max_angle
    );
    let h = homogeneity(&frame)?;
    println!("homogeneity degrees {:?}, deviation {:.2e}", h.degrees, h.max_deviation);

    let (summary, _) = ellipticity_trials(50, DEFAULT_ANGLE_TOL, 3)?;
    println!(
        "{}/{} random Riemannian frames exact, max angle {:.2e}",
        summary.exact, summary.trials, summary.max_angle
    );
    Ok(())
}
