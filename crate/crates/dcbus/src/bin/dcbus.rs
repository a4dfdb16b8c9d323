//! Command-line front end: `dcbus simulate|verify|compare`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dcbus::cli::{
    cmd_compare, cmd_simulate, cmd_verify, CliError, EXIT_CHECK_FAILED, EXIT_OK,
};

#[derive(Parser)]
#[command(
    name = "dcbus",
    about = "Simulate and verify a multi-source DC bus under adaptive, droop, and known-R consensus controllers",
    version
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one controller over the configured load profile and write
    /// trajectory/metrics/summary files.
    Simulate {
        /// Path to the run configuration (TOML).
        #[arg(long, short)]
        config: PathBuf,
        /// Controller to run: c1 (adaptive), c2 (droop), c3 (known-R consensus).
        #[arg(long, default_value = "c1")]
        controller: String,
        /// Output directory (defaults to the configured one).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Static checks on a configuration: gain condition, equilibrium
    /// residual, port-Hamiltonian structure, energy-rate agreement,
    /// conservation law.
    Verify {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Run all three controllers on the same scenario and compare voltage
    /// regulation and current sharing.
    Compare {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn fail(err: CliError) -> ExitCode {
    eprintln!("error: {err}");
    let mut source = std::error::Error::source(&err);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match args.command {
        Command::Simulate {
            config,
            controller,
            out,
        } => match cmd_simulate(&config, &controller, out.as_deref()) {
            Ok(summary) => {
                println!(
                    "{}: {} samples over {:.3} s, final V_dc = {:.4} V",
                    summary.controller, summary.samples, summary.t_end_s, summary.final_v_dc_v
                );
                for seg in &summary.segments {
                    let settle = seg
                        .settle_time_s
                        .map(|t| format!("{t:.3} s"))
                        .unwrap_or_else(|| "not settled".into());
                    println!(
                        "  segment {}: load {:.3} A, end |dV| = {:.4}%, settle {}, sharing err {:.3e} A",
                        seg.segment, seg.i_ell_a, seg.v_dev_end_pct, settle, seg.sharing_err_end_a
                    );
                }
                ExitCode::from(EXIT_OK as u8)
            }
            Err(e) => fail(e),
        },
        Command::Verify { config } => match cmd_verify(&config) {
            Ok(report) => {
                for row in &report.rows {
                    println!(
                        "[{}] {}: {}",
                        if row.pass { "PASS" } else { "FAIL" },
                        row.check,
                        row.detail
                    );
                }
                if report.pass {
                    println!("verify: all checks passed");
                    ExitCode::from(EXIT_OK as u8)
                } else {
                    println!("verify: CHECKS FAILED");
                    ExitCode::from(EXIT_CHECK_FAILED as u8)
                }
            }
            Err(e) => fail(e),
        },
        Command::Compare { config, out } => match cmd_compare(&config, out.as_deref()) {
            Ok(report) => {
                for row in &report.rows {
                    println!(
                        "{}: end |dV| = {:.4}%, sharing err = {:.3e} A, max weighted gap = {:.3e} A",
                        row.controller,
                        row.v_dev_end_pct,
                        row.sharing_err_end_a,
                        row.max_weighted_gap_end_a
                    );
                }
                println!(
                    "voltage ordering c1 < c3 < c2: {}",
                    if report.voltage_ordering_ok { "ok" } else { "VIOLATED" }
                );
                println!(
                    "floored sharing ratio c3/c1 = {:.3} (floor {:.3e} A): {}",
                    report.sharing_ratio_c3_over_c1,
                    report.sharing_floor_a,
                    if report.sharing_ratio_ok { "ok" } else { "OUT OF BAND" }
                );
                if report.pass {
                    ExitCode::from(EXIT_OK as u8)
                } else {
                    ExitCode::from(EXIT_CHECK_FAILED as u8)
                }
            }
            Err(e) => fail(e),
        },
    }
}
