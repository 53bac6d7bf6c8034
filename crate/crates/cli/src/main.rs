//! `detour`: run verification suites, list presets, check ellipticity.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use detour::conformal::presets;
use detour::harness::{emit, run_suite_with_progress, Format, Suite, SuiteConfig};
use detour::symbol::{ellipticity_trials, HOMOGENEITY_TOL};

#[derive(Parser)]
#[command(name = "detour", version, about = "Numerical verification of the conformal deformation detour complex")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the suites of a configuration file and write a report.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config file).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_format)]
        format: Option<Format>,
        /// Restrict to the named suites; repeatable.
        #[arg(long = "suite", value_parser = parse_suite)]
        suites: Vec<Suite>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Show the built-in metric presets.
    Presets {
        #[arg(long)]
        list: bool,
    },
    /// Standalone ellipticity check on random Riemannian frames.
    Symbol {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = detour::symbol::DEFAULT_ANGLE_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: detour::Error| e.to_string())
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: detour::Error| e.to_string())
}

fn verify(
    config: PathBuf,
    out: Option<PathBuf>,
    format: Option<Format>,
    suites: Vec<Suite>,
    seed: Option<u64>,
) -> detour::Result<bool> {
    let mut cfg = SuiteConfig::load(&config)?;
    if !suites.is_empty() {
        cfg.suites = suites;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let format = format.unwrap_or(cfg.output.format);
    let dir = out.or_else(|| cfg.output.dir.clone());
    let report = run_suite_with_progress(&cfg, &mut |label| eprintln!("running {label}"))?;
    print!("{}", report.summary());
    match dir {
        Some(d) => {
            let path = emit(&report, &d, format)?;
            eprintln!("report written to {}", path.display());
        }
        None => println!("{}", report.render(format)?),
    }
    Ok(report.passed)
}

fn list_presets() {
    for p in presets() {
        let params: Vec<String> = p.defaults.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{:<10} {:?}  {}", p.name, p.property, p.summary);
        if !params.is_empty() {
            println!("           {}", params.join(" "));
        }
    }
}

fn symbol(trials: usize, tol: f64, seed: u64) -> detour::Result<bool> {
    let (s, _) = ellipticity_trials(trials, tol, seed)?;
    println!(
        "{}/{} exact, {}/{} ranks (4,5,5), {}/{} exact with random Gram form",
        s.exact, s.trials, s.ranks_ok, s.trials, s.exact_with_random_gram, s.trials
    );
    println!(
        "max principal angle {:.3e}, homogeneity deviation {:.3e}, smallest sigma(K0) singular value {:.3e}",
        s.max_angle, s.max_homogeneity_deviation, s.min_singular_k0
    );
    let ok = s.passed(HOMOGENEITY_TOL);
    println!("{}", if ok { "elliptic: pass" } else { "elliptic: FAIL" });
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Verify {
            config,
            out,
            format,
            suites,
            seed,
        } => verify(config, out, format, suites, seed),
        Command::Presets { list: _ } => {
            list_presets();
            Ok(true)
        }
        Command::Symbol { trials, tol, seed } => symbol(trials, tol, seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
