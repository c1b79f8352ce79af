//! Command-line front end for the vaekit training and diagnostics toolkit:
//! JSON-configured runs, deterministic CSV/JSON emission, and the standard
//! comparison sweeps.

pub mod config;
pub mod runner;

use std::path::PathBuf;

use clap::Parser;

pub use config::{ConfigError, RunConfig};
pub use runner::{run, sweep, RunReport, SweepAxis, SweepReport};

/// Command-line arguments.
#[derive(Debug, Parser)]
#[command(name = "vaekit", about = "VAE training runs with convergence diagnostics")]
pub struct Args {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Override data.seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for records.csv / summary.json / params.json.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Sweep an axis instead of a single run: AXIS=v1,v2,...
    /// (axes: beta, K, activation, BK; BK values are BxK).
    #[arg(long)]
    pub sweep: Option<String>,
    /// Number of seeds per sweep point (consecutive from the base seed).
    #[arg(long, default_value_t = 5)]
    pub sweep_seeds: usize,
    /// Suppress progress output.
    #[arg(long)]
    pub quiet: bool,
}

/// Exit code contract: 0 success, 1 runtime failure, 2 config error.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Run the CLI against explicit arguments; returns the process exit code.
pub fn cli_run(args: Args) -> i32 {
    let mut cfg = match RunConfig::from_file(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(seed) = args.seed {
        cfg.data.seed = seed;
    }

    match &args.sweep {
        None => match runner::run(&cfg, &args.out) {
            Ok(rep) => {
                if !args.quiet {
                    let f = rep.summary.final_record;
                    println!(
                        "run finished at iteration {} (elbo_test {:.6}, grad_norm_sq {:.6e}) -> {}",
                        rep.summary.final_iter,
                        f.elbo_test,
                        f.grad_norm_sq,
                        args.out.display()
                    );
                }
                if rep.succeeded() {
                    EXIT_OK
                } else {
                    if let Some(a) = &rep.summary.aborted {
                        eprintln!("aborted after iteration {}: {}", a.last_good_iter, a.reason);
                    }
                    EXIT_RUNTIME
                }
            }
            Err(runner::RunError::Config(e)) => {
                eprintln!("{e}");
                EXIT_CONFIG
            }
            Err(e) => {
                eprintln!("run failed: {e}");
                EXIT_RUNTIME
            }
        },
        Some(spec) => {
            let axis = match SweepAxis::parse(spec) {
                Ok(a) => a,
                Err(e) => {
                    eprintln!("{e}");
                    return EXIT_CONFIG;
                }
            };
            let seeds: Vec<u64> =
                (0..args.sweep_seeds.max(1) as u64).map(|i| cfg.data.seed + i).collect();
            match runner::sweep(&cfg, &axis, &seeds, &args.out) {
                Ok(rep) => {
                    if !args.quiet {
                        for m in &rep.medians {
                            println!(
                                "{}={}: median grad_norm_sq {:.6e}, median elbo_test {:.6}",
                                m.axis, m.value, m.median_grad_norm_sq, m.median_elbo_test
                            );
                        }
                    }
                    if rep.rows.iter().all(|r| r.status == "ok") {
                        EXIT_OK
                    } else {
                        EXIT_RUNTIME
                    }
                }
                Err(runner::RunError::Config(e)) => {
                    eprintln!("{e}");
                    EXIT_CONFIG
                }
                Err(e) => {
                    eprintln!("sweep failed: {e}");
                    EXIT_RUNTIME
                }
            }
        }
    }
}

/// Entry point for the `vaekit` binary.
pub fn cli_main() -> i32 {
    cli_run(Args::parse())
}
