use std::path::Path;

use prepaid_core::{canonical, Money, Period};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One simulation run. The seed determines everything else that is random.
///
/// Stored in the canonical format, so every field must be present and keys
/// sorted; `sim config` prints a valid starting point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub num_cards: u64,
    /// Face values in minor units, spread evenly over the cards.
    pub denominations: Vec<u64>,
    pub num_customers: u64,
    pub num_purchases: u64,
    pub catalog_size: u64,
    pub price_min: u64,
    pub price_max: u64,
    /// Chance that a customer types the wrong password.
    pub wrong_password_pct: u32,
    pub drop_pct: u32,
    pub duplicate_pct: u32,
    pub reorder_pct: u32,
    /// Crash and recover the provider right after the merchant's n-th
    /// acknowledged capture, for each n listed.
    pub provider_crash_points: Vec<u64>,
    pub hold_ttl: i64,
    pub fee_rate_bp: u32,
    pub settlement_periods: u32,
    /// Simulated seconds per purchase.
    pub tick_secs: i64,
    pub expiry_sweep_secs: i64,
    pub start_time: i64,
}

impl Default for SimConfig {
    /// 100 cards from $1 to $1000, 10,000 purchases, 5% of each fault.
    fn default() -> Self {
        Self {
            seed: 42,
            num_cards: 100,
            denominations: vec![100, 500, 1_000, 2_000, 5_000, 10_000, 50_000, 100_000],
            num_customers: 50,
            num_purchases: 10_000,
            catalog_size: 20,
            price_min: 100,
            price_max: 2_000,
            wrong_password_pct: 2,
            drop_pct: 5,
            duplicate_pct: 5,
            reorder_pct: 5,
            provider_crash_points: vec![],
            hold_ttl: 900,
            fee_rate_bp: 100,
            settlement_periods: 3,
            tick_secs: 1,
            expiry_sweep_secs: 60,
            start_time: 1_700_000_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::ConfigInvalid(m.into()));
        if [
            self.drop_pct,
            self.duplicate_pct,
            self.reorder_pct,
            self.wrong_password_pct,
        ]
        .iter()
        .any(|&p| p > 100)
        {
            return bad("rates must be within 0..=100");
        }
        if self.seed > i64::MAX as u64 {
            return bad("seed must fit in 63 bits");
        }
        if self.num_cards == 0 || self.num_customers == 0 {
            return bad("need at least one card and one customer");
        }
        if self.num_customers > self.num_cards {
            return bad("every customer needs a card");
        }
        if self.denominations.is_empty() {
            return bad("denominations must not be empty");
        }
        if let Some(d) = self
            .denominations
            .iter()
            .find(|&&d| !Money::from_minor(d).is_valid_denomination())
        {
            return Err(SimError::ConfigInvalid(format!(
                "denomination {d} outside 100..=100000"
            )));
        }
        if self.catalog_size == 0 || self.price_min == 0 || self.price_min > self.price_max {
            return bad("catalog needs items with 0 < price_min <= price_max");
        }
        if self.fee_rate_bp > 10_000 {
            return bad("fee_rate_bp must be at most 10000");
        }
        if self.settlement_periods == 0 {
            return bad("need at least one settlement period");
        }
        if self.tick_secs <= 0 || self.expiry_sweep_secs <= 0 || self.hold_ttl <= 0 {
            return bad("tick_secs, expiry_sweep_secs and hold_ttl must be positive");
        }
        Ok(())
    }

    /// Equal-length periods that together cover every purchase tick.
    pub fn periods(&self) -> Vec<Period> {
        let span = (self.num_purchases as i64 * self.tick_secs).max(1);
        let n = i64::from(self.settlement_periods);
        let len = (span + n - 1) / n;
        (0..n)
            .map(|k| Period::new(self.start_time + k * len, self.start_time + (k + 1) * len))
            .collect()
    }

    /// Independent 32-byte seed for one part of the run.
    pub fn derive_seed(&self, purpose: &str) -> [u8; 32] {
        Sha256::digest(format!("sim:v1:{}:{purpose}", self.seed).as_bytes()).into()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = canonical::to_bytes(self).expect("config is encodable");
        b.push(b'\n');
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SimError> {
        let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
        let cfg: SimConfig = canonical::from_bytes(body).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
