//! Parse, inspect, evaluate and sample coordinate expressions.
//!
//! cargo run --release --example expressions

use detour::exprlang::{parse, Params};
use detour::grid::ChartGrid;

fn main() -> detour::Result<()> {
    let e = parse("1 + a*sin(x1)*cos(x2)^2")?;
    println!("parameters: {:?}, highest coordinate: x{}", e.param_names(), e.max_coordinate());

    let params = Params::from([("a".to_string(), 0.3)]);
    let x = [0.5, 1.0, 0.0, 0.0];
    println!("value at {x:?}: {:.12}", e.eval(&x, &params)?);

    let grid = ChartGrid::new(4, 8)?;
    let f = e.sample(&grid, &params)?;
    println!("sampled on {} points, sup-norm {:.6}", grid.len(), f.sup_norm());

    match parse("1 + sin(x1") {
        Ok(_) => unreachable!(),
        Err(err) => println!("malformed input is rejected: {err}"),
    }
    Ok(())
}
