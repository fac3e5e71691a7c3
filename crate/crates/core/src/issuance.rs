//! Card batch issuance and the batch file format.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical;
use crate::card::{self, CardFormatError, CardNumber, SECRET_ALPHABET, SECRET_LEN};
use crate::money::Money;

/// Cards per batch; the serial is `batch_id * BATCH_CAPACITY + index`.
pub const BATCH_CAPACITY: u64 = 1_000_000;
pub const MAX_BATCH_ID: u32 = 999_999;

#[derive(Debug, Error)]
pub enum IssueError {
    #[error("denomination {0} minor units is outside 100..=100000")]
    DenominationOutOfRange(u64),
    #[error("batch holds at most {BATCH_CAPACITY} cards, asked for {0}")]
    TooManyCards(u64),
    #[error("batch id {0} exceeds {MAX_BATCH_ID}")]
    BadBatchId(u32),
    #[error(transparent)]
    Format(#[from] CardFormatError),
    #[error("malformed batch file: {0}")]
    MalformedBatchFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuedCard {
    pub card_number: CardNumber,
    /// Plaintext secret as printed on the card stock.
    pub secret: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardBatch {
    pub batch_id: u32,
    pub provider_id: String,
    pub denomination: Money,
    pub issued_at: i64,
    pub cards: Vec<IssuedCard>,
}

#[derive(Debug, Clone, Default)]
pub struct IssueOptions {
    /// Fully determines secrets (and the batch id unless given).
    pub seed: Option<Vec<u8>>,
    pub batch_id: Option<u32>,
    pub issued_at: i64,
}

pub fn issue_batch(
    provider_id: &str,
    denomination: Money,
    count: u64,
    opts: &IssueOptions,
) -> Result<CardBatch, IssueError> {
    if !denomination.is_valid_denomination() {
        return Err(IssueError::DenominationOutOfRange(denomination.minor()));
    }
    if count > BATCH_CAPACITY {
        return Err(IssueError::TooManyCards(count));
    }
    card::validate_provider_id(provider_id)?;
    let mut rng: Box<dyn RngCore> = match &opts.seed {
        Some(seed) => {
            let digest: [u8; 32] = Sha256::digest([b"card-batch:v1:".as_slice(), seed].concat()).into();
            Box::new(ChaCha20Rng::from_seed(digest))
        }
        None => Box::new(rand::rngs::OsRng),
    };
    let batch_id = match opts.batch_id {
        Some(id) if id > MAX_BATCH_ID => return Err(IssueError::BadBatchId(id)),
        Some(id) => id,
        None => rng.gen_range(0..=MAX_BATCH_ID),
    };
    let base = u64::from(batch_id) * BATCH_CAPACITY;
    let cards = (0..count)
        .map(|i| {
            Ok(IssuedCard {
                card_number: CardNumber::build(provider_id, base + i)?,
                secret: card::generate_secret(rng.as_mut()),
            })
        })
        .collect::<Result<_, IssueError>>()?;
    Ok(CardBatch {
        batch_id,
        provider_id: provider_id.to_string(),
        denomination,
        issued_at: opts.issued_at,
        cards,
    })
}

impl CardBatch {
    pub fn to_canonical(&self) -> Vec<u8> {
        canonical::to_bytes(self).expect("batches are always encodable")
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Self, IssueError> {
        let batch: CardBatch =
            canonical::from_bytes(bytes).map_err(|e| IssueError::MalformedBatchFile(e.to_string()))?;
        batch.validate()?;
        Ok(batch)
    }

    pub fn total_value(&self) -> Money {
        Money::from_minor(self.denomination.minor() * self.cards.len() as u64)
    }

    /// Format checks on every card; what `cardtool verify` reports.
    pub fn validate(&self) -> Result<(), IssueError> {
        let bad = |m: String| IssueError::MalformedBatchFile(m);
        if !self.denomination.is_valid_denomination() {
            return Err(IssueError::DenominationOutOfRange(self.denomination.minor()));
        }
        card::validate_provider_id(&self.provider_id)?;
        let mut seen = HashSet::new();
        for c in &self.cards {
            CardNumber::parse(c.card_number.as_str(), Some(&self.provider_id))?;
            if !seen.insert(c.card_number.as_str()) {
                return Err(bad(format!("card {} listed twice", c.card_number)));
            }
            if c.secret.len() != SECRET_LEN || !c.secret.bytes().all(|b| SECRET_ALPHABET.contains(&b)) {
                return Err(bad(format!("card {} has a malformed secret", c.card_number)));
            }
        }
        Ok(())
    }
}

pub fn export_batch(batch: &CardBatch, path: &Path) -> Result<(), IssueError> {
    let mut bytes = batch.to_canonical();
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_batch(path: &Path) -> Result<CardBatch, IssueError> {
    let bytes = std::fs::read(path)?;
    let body = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
    CardBatch::from_canonical(body)
}
