use std::collections::BTreeMap;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use prepaid_core::keys::{signing_key_from_hex, verifying_key_from_hex};
use prepaid_core::settlement::DEFAULT_FEE_RATE_BP;
use prepaid_core::{KeyRegistry, REQUEST_WINDOW_SECS};
use prepaid_wire::{Transport, DEFAULT_PORT};
use serde::Deserialize;

use crate::service::{ServiceOptions, DEFAULT_HOLD_TTL};

/// Provider configuration file (TOML).
///
/// ```toml
/// provider_id = "4021"
/// signing_key = "<64 hex chars>"
/// data_dir = "provider-data"
///
/// [merchants]
/// shop-1 = "<64 hex chars, public key>"
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub provider_id: String,
    /// Ed25519 secret key, hex.
    pub signing_key: String,
    /// Merchant id to Ed25519 public key, hex.
    #[serde(default)]
    pub merchants: BTreeMap<String, String>,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_hold_ttl")]
    pub hold_ttl: i64,
    #[serde(default = "default_fee_rate")]
    pub fee_rate_bp: u32,
    #[serde(default = "default_window")]
    pub request_window: i64,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    /// Relative paths resolve against the config file's directory.
    pub data_dir: PathBuf,
    /// Handler worker threads.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// When set, serve plaintext and accept only these peer addresses.
    /// For tests only.
    #[serde(default)]
    pub plaintext_allowlist: Option<Vec<IpAddr>>,
    /// Seconds between background hold-expiry sweeps.
    #[serde(default = "default_sweep")]
    pub expiry_sweep_secs: u64,
}

fn default_bind() -> String {
    "127.0.0.1".into()
}
fn default_port() -> u16 {
    DEFAULT_PORT
}
fn default_hold_ttl() -> i64 {
    DEFAULT_HOLD_TTL
}
fn default_fee_rate() -> u32 {
    DEFAULT_FEE_RATE_BP
}
fn default_window() -> i64 {
    REQUEST_WINDOW_SECS
}
fn default_snapshot_every() -> u64 {
    5000
}
fn default_workers() -> usize {
    8
}
fn default_sweep() -> u64 {
    30
}

impl ProviderConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ProviderConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if cfg.data_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.data_dir = base.join(&cfg.data_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        prepaid_core::card::validate_provider_id(&self.provider_id)?;
        if self.hold_ttl <= 0 {
            bail!("hold_ttl must be positive");
        }
        if self.fee_rate_bp > prepaid_core::settlement::BASIS_POINTS {
            bail!("fee_rate_bp must be at most 10000");
        }
        if self.request_window < 0 {
            bail!("request_window must not be negative");
        }
        if self.merchants.contains_key(&self.provider_id) {
            bail!("a merchant cannot share the provider id");
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<KeyRegistry> {
        let sk = signing_key_from_hex(&self.signing_key).context("signing_key")?;
        let mut reg = KeyRegistry::new(self.provider_id.clone(), sk);
        for (id, pk) in &self.merchants {
            reg.add_peer(
                id.clone(),
                verifying_key_from_hex(pk).with_context(|| format!("merchant {id}"))?,
            );
        }
        Ok(reg)
    }

    pub fn options(&self) -> ServiceOptions {
        ServiceOptions {
            hold_ttl: self.hold_ttl,
            fee_rate_bp: self.fee_rate_bp,
            request_window: self.request_window,
            snapshot_every: self.snapshot_every,
            rng_seed: None,
        }
    }

    pub fn transport(&self, registry: &KeyRegistry) -> Transport {
        match &self.plaintext_allowlist {
            Some(list) => Transport::Plaintext {
                allowlist: list.clone(),
            },
            None => Transport::Secure(registry.clone()),
        }
    }

    pub fn listen_addr(&self) -> String {
        format!("{}:{}", self.bind, self.port)
    }
}
