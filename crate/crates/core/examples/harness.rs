//! Run a configuration end to end and print the verdicts and the CSV
//! hand-off.
//!
//! cargo run --release --example harness [-- path/to/config.toml]

use std::path::PathBuf;

use detour::harness::{run_suite_with_progress, Format, SuiteConfig};

fn main() -> detour::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/quick.toml")));
    let cfg = SuiteConfig::load(&path)?;
    let report = run_suite_with_progress(&cfg, &mut |label| eprintln!("running {label}"))?;
    print!("{}", report.summary());
    println!("{}", report.render(Format::Csv)?);
    Ok(())
}
