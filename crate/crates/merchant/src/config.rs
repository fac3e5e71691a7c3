use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use prepaid_core::keys::{signing_key_from_hex, verifying_key_from_hex};
use prepaid_core::KeyRegistry;
use prepaid_wire::{TcpLink, Transport};
use serde::Deserialize;

/// Merchant configuration file (TOML).
///
/// ```toml
/// merchant_id = "shop-1"
/// signing_key = "<64 hex chars>"
/// provider_id = "4021"
/// provider_public_key = "<64 hex chars>"
/// provider_addr = "127.0.0.1:7402"
/// catalog = "catalog.canon"
/// data_dir = "merchant-data"
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MerchantConfig {
    pub merchant_id: String,
    pub signing_key: String,
    pub provider_id: String,
    pub provider_public_key: String,
    #[serde(default = "default_provider_addr")]
    pub provider_addr: String,
    /// Relative paths resolve against the config file's directory.
    pub catalog: PathBuf,
    pub data_dir: PathBuf,
    #[serde(default = "default_http")]
    pub http_bind: String,
    #[serde(default = "default_timeout")]
    pub provider_timeout_secs: u64,
    /// Talk to the provider without encryption. For tests only.
    #[serde(default)]
    pub plaintext: bool,
}

fn default_provider_addr() -> String {
    format!("127.0.0.1:{}", prepaid_wire::DEFAULT_PORT)
}
fn default_http() -> String {
    "127.0.0.1:8080".into()
}
fn default_timeout() -> u64 {
    10
}

impl MerchantConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: MerchantConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.catalog, &mut cfg.data_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.merchant_id == cfg.provider_id {
            anyhow::bail!("merchant_id and provider_id must differ");
        }
        Ok(cfg)
    }

    pub fn registry(&self) -> Result<KeyRegistry> {
        let sk = signing_key_from_hex(&self.signing_key).context("signing_key")?;
        let pk = verifying_key_from_hex(&self.provider_public_key).context("provider_public_key")?;
        Ok(KeyRegistry::new(self.merchant_id.clone(), sk).with_peer(self.provider_id.clone(), pk))
    }

    pub fn link(&self, registry: &KeyRegistry) -> TcpLink {
        let transport = if self.plaintext {
            Transport::Plaintext { allowlist: vec![] }
        } else {
            Transport::Secure(registry.clone())
        };
        TcpLink::new(self.provider_addr.clone(), self.provider_id.clone(), transport)
            .with_timeout(Duration::from_secs(self.provider_timeout_secs.max(1)))
    }
}
