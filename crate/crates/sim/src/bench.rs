//! An in-process provider and merchant wired through a [`SimLink`].

use std::collections::BTreeMap;
use std::sync::Arc;

use prepaid_core::issuance::{issue_batch, IssueOptions};
use prepaid_core::keys::test_signing_key;
use prepaid_core::messages::ActivateRequest;
use prepaid_core::{card::card_ref, KeyRegistry, ManualClock, MemJournal, Money};
use prepaid_merchant::{Catalog, CatalogItem, CheckoutError, CheckoutRequest, Merchant, MerchantOptions, Receipt};
use prepaid_provider::{Provider, ServiceOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::config::{SimConfig, SimError};
use crate::link::SimLink;

pub const PROVIDER_ID: &str = "4021";
pub const MERCHANT_ID: &str = "sim-shop";

#[derive(Debug, Clone)]
pub struct SimCard {
    pub card_number: String,
    pub card_ref: String,
    pub secret: String,
    pub password: String,
    pub denomination: Money,
}

pub struct Bench {
    pub clock: ManualClock,
    pub provider_disk: MemJournal,
    pub merchant_disk: MemJournal,
    pub link: Arc<SimLink>,
    pub merchant: Merchant,
    pub cards: Vec<SimCard>,
    pub items: Vec<CatalogItem>,
    provider_registry: KeyRegistry,
    merchant_registry: KeyRegistry,
    provider_opts: ServiceOptions,
}

impl Bench {
    /// Issues, loads and activates every card. Faults start disabled.
    pub fn new(cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let setup = |e: &dyn std::fmt::Display| SimError::Setup(e.to_string());
        let provider_key = test_signing_key(&format!("sim:{}:provider", cfg.seed));
        let merchant_key = test_signing_key(&format!("sim:{}:merchant", cfg.seed));
        let provider_registry =
            KeyRegistry::new(PROVIDER_ID, provider_key.clone()).with_peer(MERCHANT_ID, merchant_key.verifying_key());
        let merchant_registry =
            KeyRegistry::new(MERCHANT_ID, merchant_key).with_peer(PROVIDER_ID, provider_key.verifying_key());

        let clock = ManualClock::new(cfg.start_time);
        let provider_disk = MemJournal::new();
        let provider_opts = ServiceOptions {
            hold_ttl: cfg.hold_ttl,
            fee_rate_bp: cfg.fee_rate_bp,
            rng_seed: Some(cfg.derive_seed("provider")),
            ..ServiceOptions::default()
        };
        let provider = Arc::new(
            Provider::open(
                provider_registry.clone(),
                Arc::new(clock.clone()),
                provider_opts.clone(),
                Box::new(provider_disk.clone()),
            )
            .map_err(|e| setup(&e))?,
        );

        let mut rng = ChaCha20Rng::from_seed(cfg.derive_seed("catalog"));
        let items: Vec<CatalogItem> = (0..cfg.catalog_size)
            .map(|k| CatalogItem {
                item_id: format!("item-{k:04}"),
                title: format!("Item {k}"),
                price: Money::from_minor(rng.gen_range(cfg.price_min..=cfg.price_max)),
            })
            .collect();
        let catalog = Catalog::new(items.clone()).map_err(|e| setup(&e))?;

        let mut cards = Vec::new();
        for (k, &denom) in cfg.denominations.iter().enumerate() {
            let len = cfg.denominations.len() as u64;
            let count = (cfg.num_cards + len - 1 - k as u64) / len;
            if count == 0 {
                continue;
            }
            let batch = issue_batch(
                PROVIDER_ID,
                Money::from_minor(denom),
                count,
                &IssueOptions {
                    seed: Some(cfg.derive_seed(&format!("batch-{k}")).to_vec()),
                    batch_id: Some(k as u32 + 1),
                    issued_at: cfg.start_time,
                },
            )
            .map_err(|e| setup(&e))?;
            provider.load_cards(&batch).map_err(|e| setup(&e))?;
            for c in batch.cards {
                let number = c.card_number.as_str().to_string();
                cards.push(SimCard {
                    card_ref: card_ref(&number),
                    password: format!("pw-{}", &number[number.len() - 6..]),
                    card_number: number,
                    secret: c.secret,
                    denomination: batch.denomination,
                });
            }
        }

        let link = Arc::new(SimLink::new(provider, cfg.derive_seed("network")));
        let merchant_disk = MemJournal::new();
        let merchant = Merchant::open(
            merchant_registry.clone(),
            PROVIDER_ID,
            catalog,
            link.clone(),
            Arc::new(clock.clone()),
            MerchantOptions {
                rng_seed: Some(cfg.derive_seed("merchant")),
                ..MerchantOptions::default()
            },
            Box::new(merchant_disk.clone()),
        )
        .map_err(|e| setup(&e))?;

        for c in &cards {
            merchant
                .activate(&ActivateRequest {
                    card_number: c.card_number.clone(),
                    secret: c.secret.clone(),
                    new_password: c.password.clone(),
                })
                .map_err(|e| setup(&e))?;
        }
        Ok(Self {
            clock,
            provider_disk,
            merchant_disk,
            link,
            merchant,
            cards,
            items,
            provider_registry,
            merchant_registry,
            provider_opts,
        })
    }

    pub fn provider(&self) -> Option<Arc<Provider>> {
        self.link.provider()
    }

    pub fn provider_registry(&self) -> &KeyRegistry {
        &self.provider_registry
    }

    pub fn merchant_registry(&self) -> &KeyRegistry {
        &self.merchant_registry
    }

    /// Drops the running provider; its journal stays on the simulated disk.
    pub fn crash_provider(&self) -> Option<Arc<Provider>> {
        self.link.take_provider()
    }

    /// Rebuilds the provider from its journal and puts it back online.
    pub fn restart_provider(&self) -> Result<Arc<Provider>, SimError> {
        let provider = Arc::new(
            Provider::open(
                self.provider_registry.clone(),
                Arc::new(self.clock.clone()),
                self.provider_opts.clone(),
                Box::new(self.provider_disk.clone()),
            )
            .map_err(|e| SimError::Setup(format!("recovery: {e}")))?,
        );
        self.link.set_provider(provider.clone());
        Ok(provider)
    }

    pub fn request(&self, card: usize, item: usize, wrong_password: bool) -> CheckoutRequest {
        let c = &self.cards[card];
        CheckoutRequest {
            item_id: self.items[item].item_id.clone(),
            card_number: c.card_number.clone(),
            secret: c.secret.clone(),
            password: if wrong_password {
                format!("{}-x", c.password)
            } else {
                c.password.clone()
            },
            provider_id: PROVIDER_ID.into(),
        }
    }

    pub fn checkout(&self, card: usize, item: usize) -> Result<Receipt, CheckoutError> {
        self.merchant.checkout(&self.request(card, item, false))
    }

    /// Card balances by card number, as the provider holds them.
    pub fn balances(&self) -> Option<BTreeMap<String, Money>> {
        self.provider()
            .map(|p| p.with_state(|s| s.cards.iter().map(|(k, c)| (k.clone(), c.balance)).collect()))
    }
}
