use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use prepaid_core::{FileJournal, Period, SystemClock};
use prepaid_merchant::{http, Catalog, Merchant, MerchantConfig, MerchantOptions};

#[derive(Parser)]
#[command(name = "merchant", about = "Merchant service for prepaid card payments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the catalog and checkout endpoints over HTTP.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build the settlement demand for a period, send it to the provider
    /// and book the report. Run while the server is stopped.
    Demand {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        period: Period,
        /// Also write the signed demand here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only build and write the demand.
        #[arg(long)]
        no_send: bool,
    },
    /// Ledger maintenance.
    Ledger {
        #[command(subcommand)]
        cmd: LedgerCmd,
    },
    /// Print a fresh signing key and its public key, hex encoded.
    Keygen,
}

#[derive(Subcommand)]
enum LedgerCmd {
    /// Write every record, one canonical line each.
    Export {
        #[arg(long)]
        config: PathBuf,
        path: PathBuf,
    },
}

fn open(config: &Path) -> Result<Merchant> {
    let cfg = MerchantConfig::load(config)?;
    let registry = cfg.registry()?;
    let catalog = Catalog::load(&cfg.catalog).with_context(|| format!("loading {}", cfg.catalog.display()))?;
    let journal = FileJournal::open(&cfg.data_dir).with_context(|| format!("opening {}", cfg.data_dir.display()))?;
    let link = Arc::new(cfg.link(&registry));
    Ok(Merchant::open(
        registry,
        cfg.provider_id.clone(),
        catalog,
        link,
        Arc::new(SystemClock),
        MerchantOptions::default(),
        Box::new(journal),
    )?)
}

fn serve(config: &Path) -> Result<()> {
    let cfg = MerchantConfig::load(config)?;
    let merchant = Arc::new(open(config)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.http_bind)
            .await
            .with_context(|| format!("binding {}", cfg.http_bind))?;
        tracing::info!(addr = %listener.local_addr()?, merchant = merchant.id(), "listening");
        axum::serve(listener, http::router(merchant)).await?;
        Ok(())
    })
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
        Cmd::Serve { config } => serve(&config),
        Cmd::Demand {
            config,
            period,
            out,
            no_send,
        } => {
            let merchant = open(&config)?;
            let demand = merchant.build_demand(period)?;
            if let Some(path) = out {
                let mut bytes = prepaid_core::canonical::to_bytes(&demand)?;
                bytes.push(b'\n');
                std::fs::write(path, bytes)?;
            }
            println!("demand: {} records, total {}", demand.records.len(), demand.total());
            if !no_send {
                let s = merchant.settle(period)?;
                println!(
                    "settled {} of {}, matched {}, fee {}, payout {}, {} discrepancies",
                    s.settled,
                    s.demanded,
                    s.matched_total,
                    s.fee,
                    s.payout,
                    s.discrepancies.len()
                );
                for d in &s.discrepancies {
                    println!("  {} {:?}: {}", d.txn_id, d.kind, d.detail);
                }
                for w in &s.warnings {
                    println!("  warning: {w}");
                }
            }
            Ok(())
        }
        Cmd::Ledger {
            cmd: LedgerCmd::Export { config, path },
        } => {
            let merchant = open(&config)?;
            std::fs::write(&path, merchant.export_ledger())?;
            println!("wrote {} records", merchant.with_ledger(|l| l.records.len()));
            Ok(())
        }
        Cmd::Keygen => {
            let sk = prepaid_core::keys::generate_signing_key(&mut rand::rngs::OsRng);
            println!("signing_key = \"{}\"", hex::encode(sk.to_bytes()));
            println!("public_key = \"{}\"", hex::encode(sk.verifying_key().as_bytes()));
            Ok(())
        }
    }
}
