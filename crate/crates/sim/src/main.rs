use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use prepaid_sim::{run_simulation, run_stress, SimConfig, StressConfig};

#[derive(Parser)]
#[command(name = "sim", about = "Simulate and stress the prepaid card services")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one deterministic simulation and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration in the canonical format.
    Config {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Race concurrent checkouts against one card over loopback.
    Stress {
        /// Request handler threads on the provider.
        #[arg(long, default_value_t = 8)]
        threads: usize,
        #[arg(long, default_value_t = 1000)]
        card_balance: u64,
        #[arg(long, default_value_t = 100)]
        request_amount: u64,
        #[arg(long, default_value_t = 32)]
        workers: usize,
        /// Checkouts per worker.
        #[arg(long, default_value_t = 1)]
        rounds: usize,
    },
}

fn status(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> Result<ExitCode> {
    let level = std::env::var("RUST_LOG")
        .ok()
        .and_then(|v| v.parse::<tracing::Level>().ok())
        .unwrap_or(tracing::Level::WARN);
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::Run { config, out } => {
            let cfg = SimConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let report = run_simulation(&cfg)?;
            std::fs::write(&out, report.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
            let o = &report.outcomes;
            println!(
                "{} purchases: {} captured, {} insufficient funds, {} auth failures, {} unreachable",
                o.attempted, o.captured, o.insufficient_funds, o.auth_failure, o.unreachable
            );
            let t = &report.totals;
            println!(
                "issued {} remaining {} payouts {} fees {} undemanded {}",
                t.issued, t.remaining, t.payouts, t.fees, t.undemanded
            );
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("wall clock {:.2}s", report.wall_clock.as_secs_f64());
            Ok(status(report.passed()))
        }
        Cmd::Config { out } => {
            let bytes = SimConfig::default().to_bytes();
            match out {
                Some(path) => std::fs::write(&path, bytes)?,
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Stress {
            threads,
            card_balance,
            request_amount,
            workers,
            rounds,
        } => {
            let r = run_stress(&StressConfig {
                threads,
                card_balance,
                request_amount,
                workers,
                rounds,
            })?;
            println!(
                "{} attempts: {} captured (expected {}), {} declined, {} errors",
                r.attempts, r.captures, r.expected_captures, r.declined, r.errors
            );
            println!(
                "final balance {}, negative balance events {}, invariants {}",
                r.final_balance,
                r.negative_balance_events,
                if r.invariants_ok { "ok" } else { "VIOLATED" }
            );
            Ok(status(r.passed()))
        }
    }
}
