#![allow(dead_code)]

use std::sync::Arc;

use prepaid_core::card::card_ref;
use prepaid_core::issuance::{issue_batch, CardBatch, IssueOptions};
use prepaid_core::keys::test_signing_key;
use prepaid_core::messages::{ActivateRequest, CaptureRequest};
use prepaid_core::record::txn_id_for;
use prepaid_core::{
    sign_record, AuthorizationDecision, CreditRequest, Journal, KeyRegistry, ManualClock, MemJournal, Money,
    TransactionRecord, TxnState,
};
use prepaid_provider::{Provider, ServiceOptions};

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

pub struct Fixture {
    pub provider: Provider,
    pub clock: ManualClock,
    pub disk: MemJournal,
    pub merchant: KeyRegistry,
}

pub fn options() -> ServiceOptions {
    ServiceOptions {
        rng_seed: Some([9; 32]),
        ..ServiceOptions::default()
    }
}

pub fn open_on(disk: &MemJournal, clock: &ManualClock, opts: ServiceOptions) -> Provider {
    let journal: Box<dyn Journal> = Box::new(disk.clone());
    Provider::open(provider_registry(), Arc::new(clock.clone()), opts, journal).unwrap()
}

pub fn fixture() -> Fixture {
    fixture_with(options())
}

pub fn fixture_with(opts: ServiceOptions) -> Fixture {
    let clock = ManualClock::new(T0);
    let disk = MemJournal::new();
    Fixture {
        provider: open_on(&disk, &clock, opts),
        clock,
        disk,
        merchant: merchant_registry(),
    }
}

pub fn batch(denomination: u64, count: u64, seed: &[u8], batch_id: u32) -> CardBatch {
    issue_batch(
        PROVIDER,
        Money::from_minor(denomination),
        count,
        &IssueOptions {
            seed: Some(seed.to_vec()),
            batch_id: Some(batch_id),
            issued_at: 0,
        },
    )
    .unwrap()
}

/// Loads and activates `count` cards, returning (card_number, secret) pairs.
pub fn active_cards(p: &Provider, denomination: u64, count: u64, batch_id: u32) -> Vec<(String, String)> {
    let b = batch(denomination, count, &batch_id.to_be_bytes(), batch_id);
    p.load_cards(&b).unwrap();
    b.cards
        .iter()
        .map(|c| {
            p.activate_card(&ActivateRequest {
                card_number: c.card_number.as_str().into(),
                secret: c.secret.clone(),
                new_password: PASSWORD.into(),
            })
            .unwrap();
            (c.card_number.as_str().to_string(), c.secret.clone())
        })
        .collect()
}

pub fn credit(card: &(String, String), rid: &str, amount: u64, ts: i64) -> CreditRequest {
    CreditRequest {
        request_id: rid.into(),
        provider_id: PROVIDER.into(),
        card_number: card.0.clone(),
        secret: card.1.clone(),
        password: PASSWORD.into(),
        amount: Money::from_minor(amount),
        merchant_id: MERCHANT.into(),
        item_id: "item-1".into(),
        timestamp: ts,
    }
}

/// The merchant-signed record for a request the provider approved.
pub fn merchant_record(req: &CreditRequest, merchant: &KeyRegistry) -> TransactionRecord {
    let mut r = TransactionRecord {
        txn_id: txn_id_for(&req.merchant_id, &req.request_id),
        request_id: req.request_id.clone(),
        timestamp: req.timestamp,
        amount: req.amount,
        merchant_id: req.merchant_id.clone(),
        item_id: req.item_id.clone(),
        card_ref: card_ref(&req.card_number),
        provider_id: req.provider_id.clone(),
        state: TxnState::Authorized,
        merchant_sig: None,
        provider_sig: None,
    };
    r.merchant_sig = Some(sign_record(&r, merchant).unwrap());
    r
}

pub fn capture_req(d: &AuthorizationDecision, req: &CreditRequest, merchant: &KeyRegistry) -> CaptureRequest {
    CaptureRequest {
        hold_id: d.hold_id.clone().unwrap(),
        record: merchant_record(req, merchant),
    }
}

pub fn available(p: &Provider, card: &str) -> u64 {
    p.with_state(|s| s.available(card).unwrap().minor())
}
