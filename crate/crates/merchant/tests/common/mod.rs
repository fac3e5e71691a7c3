#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use prepaid_core::issuance::{issue_batch, IssueOptions};
use prepaid_core::keys::test_signing_key;
use prepaid_core::messages::{ActivateRequest, MessageType};
use prepaid_core::{CaptureConfirm, Envelope, Journal, KeyRegistry, ManualClock, MemJournal, Money};
use prepaid_merchant::{Catalog, CatalogItem, CheckoutRequest, Merchant, MerchantOptions};
use prepaid_provider::{Provider, ServiceOptions};
use prepaid_wire::{LinkError, ProviderLink};

pub const PROVIDER: &str = "4021";
pub const MERCHANT: &str = "shop";
pub const T0: i64 = 1_700_000_000;
pub const PASSWORD: &str = "hunter22";

pub fn provider_registry() -> KeyRegistry {
    KeyRegistry::new(PROVIDER, test_signing_key(PROVIDER))
        .with_peer(MERCHANT, test_signing_key(MERCHANT).verifying_key())
}

pub fn merchant_registry() -> KeyRegistry {
    KeyRegistry::new(MERCHANT, test_signing_key(MERCHANT))
        .with_peer(PROVIDER, test_signing_key(PROVIDER).verifying_key())
}

/// Calls the provider in-process, as if over an authenticated channel.
pub struct DirectLink(pub Arc<Provider>);

impl ProviderLink for DirectLink {
    fn exchange(&self, request: &Envelope) -> Result<Envelope, LinkError> {
        let reply = self.0.handle_line(Some(&request.sender_id), &request.to_line());
        Envelope::from_line(&reply).map_err(|e| LinkError::Protocol(e.to_string()))
    }
}

/// Nothing ever answers.
pub struct DownLink;

impl ProviderLink for DownLink {
    fn exchange(&self, _: &Envelope) -> Result<Envelope, LinkError> {
        Err(LinkError::Unreachable("connection refused".into()))
    }
}

/// Delivers every request twice and hands back the second reply.
pub struct DoublingLink(pub Arc<Provider>);

impl ProviderLink for DoublingLink {
    fn exchange(&self, request: &Envelope) -> Result<Envelope, LinkError> {
        let line = request.to_line();
        let _ = self.0.handle_line(Some(&request.sender_id), &line);
        let reply = self.0.handle_line(Some(&request.sender_id), &line);
        Envelope::from_line(&reply).map_err(|e| LinkError::Protocol(e.to_string()))
    }
}

/// A provider that corrupts its countersignature but still signs the
/// envelope with the genuine key.
pub struct ForgingLink(pub Arc<Provider>);

impl ProviderLink for ForgingLink {
    fn exchange(&self, request: &Envelope) -> Result<Envelope, LinkError> {
        let reply = self.0.handle_line(Some(&request.sender_id), &request.to_line());
        let env = Envelope::from_line(&reply).unwrap();
        if env.kind != MessageType::CaptureConfirm {
            return Ok(env);
        }
        let mut confirm: CaptureConfirm = env.body_as().unwrap();
        confirm.record.provider_sig = Some(confirm.record.provider_sig.unwrap().with_bit_flipped(77));
        Ok(Envelope::seal(
            MessageType::CaptureConfirm,
            &confirm,
            env.nonce,
            env.ts,
            &provider_registry(),
        )
        .unwrap())
    }
}

/// Switchable link used to take the provider down and bring it back.
pub struct SwitchLink(pub Mutex<Option<Arc<Provider>>>);

impl ProviderLink for SwitchLink {
    fn exchange(&self, request: &Envelope) -> Result<Envelope, LinkError> {
        let p = self.0.lock().unwrap().clone();
        match p {
            Some(p) => DirectLink(p).exchange(request),
            None => DownLink.exchange(request),
        }
    }
}

pub fn catalog() -> Catalog {
    Catalog::new([
        item("book", "A book", 250),
        item("pen", "A pen", 100),
        item("lamp", "A lamp", 300),
        item("mug", "A mug", 200),
        item("tv", "A television", 90_000),
    ])
    .unwrap()
}

pub fn item(id: &str, title: &str, price: u64) -> CatalogItem {
    CatalogItem {
        item_id: id.into(),
        title: title.into(),
        price: Money::from_minor(price),
    }
}

pub struct World {
    pub clock: ManualClock,
    pub provider: Arc<Provider>,
    pub merchant_disk: MemJournal,
    /// (card number, secret) of activated cards.
    pub cards: Vec<(String, String)>,
}

pub fn world(fee_rate_bp: u32, denomination: u64, n_cards: u64) -> World {
    let clock = ManualClock::new(T0);
    let journal: Box<dyn Journal> = Box::new(MemJournal::new());
    let provider = Arc::new(
        Provider::open(
            provider_registry(),
            Arc::new(clock.clone()),
            ServiceOptions {
                fee_rate_bp,
                rng_seed: Some([1; 32]),
                ..ServiceOptions::default()
            },
            journal,
        )
        .unwrap(),
    );
    let batch = issue_batch(
        PROVIDER,
        Money::from_minor(denomination),
        n_cards,
        &IssueOptions {
            seed: Some(b"merchant-tests".to_vec()),
            batch_id: Some(1),
            issued_at: 0,
        },
    )
    .unwrap();
    provider.load_cards(&batch).unwrap();
    let cards = batch
        .cards
        .iter()
        .map(|c| {
            provider
                .activate_card(&ActivateRequest {
                    card_number: c.card_number.as_str().into(),
                    secret: c.secret.clone(),
                    new_password: PASSWORD.into(),
                })
                .unwrap();
            (c.card_number.as_str().to_string(), c.secret.clone())
        })
        .collect();
    World {
        clock,
        provider,
        merchant_disk: MemJournal::new(),
        cards,
    }
}

impl World {
    pub fn merchant(&self, link: Arc<dyn ProviderLink>) -> Merchant {
        Merchant::open(
            merchant_registry(),
            PROVIDER,
            catalog(),
            link,
            Arc::new(self.clock.clone()),
            MerchantOptions {
                rng_seed: Some([2; 32]),
                reserve_block: 4,
                ..MerchantOptions::default()
            },
            Box::new(self.merchant_disk.clone()),
        )
        .unwrap()
    }

    pub fn direct(&self) -> Merchant {
        self.merchant(Arc::new(DirectLink(self.provider.clone())))
    }

    pub fn buy(&self, card: usize, item_id: &str) -> CheckoutRequest {
        CheckoutRequest {
            item_id: item_id.into(),
            card_number: self.cards[card].0.clone(),
            secret: self.cards[card].1.clone(),
            password: PASSWORD.into(),
            provider_id: PROVIDER.into(),
        }
    }

    pub fn balance(&self, card: usize) -> u64 {
        self.provider
            .with_state(|s| s.cards[&self.cards[card].0].balance.minor())
    }
}
