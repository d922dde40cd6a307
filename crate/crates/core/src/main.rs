use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use polylab::runner::{self, ExperimentConfig, EXIT_VERIFICATION};

#[derive(Parser)]
#[command(name = "polylab", version, about = "Higher-order Dirichlet problems on rough lattice domains")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Solve the Dirichlet problem and write the solution raster.
    Solve(Common),
    /// Fit local energy decay exponents at the configured centers.
    Decay(Common),
    /// Estimate Hölder exponents and Campanato seminorms of derivatives.
    Holder(Common),
    /// Scan the boundary flatness of the configured domain.
    Flatness(Common),
    /// Run the identity and inequality suite.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (verb, common) = match &cli.verb {
        Verb::Solve(c) => ("solve", c),
        Verb::Decay(c) => ("decay", c),
        Verb::Holder(c) => ("holder", c),
        Verb::Flatness(c) => ("flatness", c),
        Verb::Verify(c) => ("verify", c),
    };
    match run(verb, common) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            error!("{e}");
            ExitCode::from(runner::exit_code(&e) as u8)
        }
    }
}

fn run(verb: &str, c: &Common) -> polylab::Result<i32> {
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(polylab::Error::Config {
                field: "--threads".into(),
                message: "must be positive".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(out) = &c.out {
        // command-line paths are relative to the working directory
        cfg.output = std::env::current_dir()?.join(out);
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    match verb {
        "solve" => {
            let o = runner::run_solve(&cfg)?;
            println!(
                "{}: {} iterations, relative residual {:.3e} -> {}",
                cfg.label,
                o.report.iterations,
                o.report.relative_residual,
                o.raster.display()
            );
        }
        "decay" => {
            let o = runner::run_decay(&cfg)?;
            let s = &o.summary;
            println!(
                "{}: {} of {} centers fitted; exponent min {:.4} median {:.4} max {:.4}",
                cfg.label, s.fitted, s.centers, s.min, s.median, s.max
            );
        }
        "holder" => {
            let o = runner::run_holder(&cfg)?;
            for (alpha, r) in &o.components {
                println!(
                    "{}: ∂^{alpha} exponent {} campanato({:.3}) {:.4e}",
                    cfg.label,
                    r.exponent_estimate.map_or("undefined".into(), |a| format!("{a:.4}")),
                    r.campanato_lambda,
                    r.campanato_seminorm
                );
            }
        }
        "flatness" => {
            let r = runner::run_flatness(&cfg)?;
            println!("{}: eps_max {:.4} up to r0 = {}", cfg.label, r.eps_max, r.r0);
        }
        "verify" => {
            let o = runner::run_verify(&cfg)?;
            for ch in &o.checks {
                println!(
                    "{:<30} margin {:>12.4e} tol {:>10.3e} {}",
                    ch.name,
                    ch.margin,
                    ch.tolerance,
                    if ch.pass { "pass" } else { "FAIL" }
                );
            }
            if !o.passed() {
                return Ok(EXIT_VERIFICATION);
            }
        }
        _ => unreachable!(),
    }
    Ok(0)
}
