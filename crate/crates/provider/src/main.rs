use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use prepaid_core::issuance::load_batch;
use prepaid_core::{canonical, Clock, FileJournal, Period, SettlementDemand, SystemClock};
use prepaid_provider::{wire_handler, Provider, ProviderConfig};

#[derive(Parser)]
#[command(name = "provider", about = "Prepaid card provider service")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Listen for credit requests.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Handler worker threads; overrides the config file.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Release holds that have expired. Run while the server is stopped.
    ExpireHolds {
        #[arg(long)]
        config: PathBuf,
        /// Treat this as the current time (seconds since epoch).
        #[arg(long)]
        now: Option<i64>,
    },
    /// Ingest a card batch file. Run while the server is stopped.
    LoadCards {
        #[arg(long)]
        config: PathBuf,
        batch: PathBuf,
    },
    /// Write the settlement report for a merchant and period. If the period
    /// has not been settled yet, `--demand` supplies the merchant's demand.
    Settle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        merchant: String,
        #[arg(long)]
        period: Period,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        demand: Option<PathBuf>,
    },
    /// Print a fresh signing key and its public key, hex encoded.
    Keygen,
}

fn open(cfg: &ProviderConfig) -> Result<Provider> {
    let journal = FileJournal::open(&cfg.data_dir).with_context(|| format!("opening {}", cfg.data_dir.display()))?;
    Ok(Provider::open(
        cfg.registry()?,
        Arc::new(SystemClock),
        cfg.options(),
        Box::new(journal),
    )?)
}

fn serve(config: &Path, threads: Option<usize>) -> Result<()> {
    let cfg = ProviderConfig::load(config)?;
    let provider = Arc::new(open(&cfg)?);
    let listener = TcpListener::bind(cfg.listen_addr()).with_context(|| format!("binding {}", cfg.listen_addr()))?;
    let transport = cfg.transport(provider.registry());
    let server = prepaid_wire::spawn(
        listener,
        transport,
        wire_handler(provider.clone()),
        threads.unwrap_or(cfg.workers),
    )?;
    tracing::info!(addr = %server.local_addr(), provider = provider.id(), "listening");
    let sweep = Duration::from_secs(cfg.expiry_sweep_secs.max(1));
    loop {
        std::thread::sleep(sweep);
        match provider.expire_holds(SystemClock.now()) {
            Ok(0) => {}
            Ok(n) => tracing::info!(released = n, "expired holds"),
            Err(e) => tracing::error!(error = %e, "hold expiry failed"),
        }
    }
}

fn settle(config: &Path, merchant: &str, period: Period, out: &Path, demand: Option<&Path>) -> Result<()> {
    let cfg = ProviderConfig::load(config)?;
    let provider = open(&cfg)?;
    let report = match provider.with_state(|s| s.report(merchant, &period).cloned()) {
        Some(r) => r,
        None => {
            let Some(path) = demand else {
                bail!(
                    "no report for {merchant} over {}..{}; pass --demand",
                    period.start,
                    period.end
                );
            };
            let demand: SettlementDemand = canonical::from_bytes(trim_newline(&std::fs::read(path)?))
                .with_context(|| format!("decoding {}", path.display()))?;
            if demand.period != period {
                bail!("demand covers {}..{}", demand.period.start, demand.period.end);
            }
            provider.handle_settlement(merchant, &demand)?
        }
    };
    let mut bytes = report.to_canonical();
    bytes.push(b'\n');
    std::fs::write(out, bytes)?;
    println!(
        "matched {} records, total {}, fee {}, payout {}, {} discrepancies, {} undemanded",
        report.matched.len(),
        report.matched_total,
        report.fee,
        report.payout,
        report.discrepancies.len(),
        report.undemanded.len()
    );
    Ok(())
}

fn trim_newline(b: &[u8]) -> &[u8] {
    b.strip_suffix(b"\n").unwrap_or(b)
}

fn main() -> Result<()> {
    let level = std::env::var("RUST_LOG")
        .ok()
        .and_then(|v| v.parse::<tracing::Level>().ok())
        .unwrap_or(tracing::Level::INFO);
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::Serve { config, threads } => serve(&config, threads),
        Cmd::ExpireHolds { config, now } => {
            let provider = open(&ProviderConfig::load(&config)?)?;
            let n = provider.expire_holds(now.unwrap_or_else(|| SystemClock.now()))?;
            println!("released {n} holds");
            Ok(())
        }
        Cmd::LoadCards { config, batch } => {
            let provider = open(&ProviderConfig::load(&config)?)?;
            let batch = load_batch(&batch)?;
            let n = provider.load_cards(&batch)?;
            println!("loaded {n} cards of {}", batch.denomination);
            Ok(())
        }
        Cmd::Settle {
            config,
            merchant,
            period,
            out,
            demand,
        } => settle(&config, &merchant, period, &out, demand.as_deref()),
        Cmd::Keygen => {
            let sk = prepaid_core::keys::generate_signing_key(&mut rand::rngs::OsRng);
            println!("signing_key = \"{}\"", hex::encode(sk.to_bytes()));
            println!("public_key = \"{}\"", hex::encode(sk.verifying_key().as_bytes()));
            Ok(())
        }
    }
}
