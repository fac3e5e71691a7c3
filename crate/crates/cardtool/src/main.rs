//! `cardtool`: issue batches of prepaid cards and check batch files.
//!
//! The batch file carries plaintext secrets, so it is created with
//! owner-only permissions and never overwritten.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use prepaid_core::issuance::{issue_batch, load_batch, CardBatch, IssueOptions};
use prepaid_core::{Clock, Money, SystemClock};

#[derive(Parser)]
#[command(name = "cardtool", about = "Issue and verify prepaid card batches")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a batch of cards and write it to a new file.
    Issue {
        #[arg(long)]
        provider: String,
        /// Face value in minor units (100 to 100000).
        #[arg(long)]
        denomination: u64,
        #[arg(long)]
        count: u64,
        /// Hex seed. Makes the batch fully reproducible, for simulation only.
        #[arg(long)]
        seed: Option<String>,
        /// Serial block to use. Random unless given.
        #[arg(long)]
        batch_id: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a batch file and print its summary.
    Verify { path: PathBuf },
}

fn write_new(path: &Path, batch: &CardBatch) -> Result<()> {
    let mut opts = std::fs::OpenOptions::new();
    opts.write(true).create_new(true);
    #[cfg(unix)]
    std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
    let mut file = opts
        .open(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let mut bytes = batch.to_canonical();
    bytes.push(b'\n');
    file.write_all(&bytes)?;
    file.sync_all()?;
    Ok(())
}

fn summary(batch: &CardBatch) -> String {
    format!(
        "provider {} batch {} denomination {} cards {} total {}",
        batch.provider_id,
        batch.batch_id,
        batch.denomination,
        batch.cards.len(),
        batch.total_value()
    )
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Issue {
            provider,
            denomination,
            count,
            seed,
            batch_id,
            out,
        } => {
            let seed = seed
                .map(|s| hex::decode(s.trim()).context("--seed must be hex"))
                .transpose()?;
            if seed.as_ref().is_some_and(|s| s.is_empty()) {
                bail!("--seed must not be empty");
            }
            // A seeded batch must not depend on when it was generated.
            let issued_at = if seed.is_some() { 0 } else { SystemClock.now() };
            let batch = issue_batch(
                &provider,
                Money::from_minor(denomination),
                count,
                &IssueOptions {
                    seed,
                    batch_id,
                    issued_at,
                },
            )?;
            write_new(&out, &batch)?;
            println!("wrote {}: {}", out.display(), summary(&batch));
        }
        Cmd::Verify { path } => {
            let batch = load_batch(&path).with_context(|| format!("checking {}", path.display()))?;
            println!("ok: {}", summary(&batch));
        }
    }
    Ok(())
}
