//! Multi-threaded stress run over loopback with the real wire stack.
//!
//! Many checkout workers race against one card. Only safety is checked:
//! the number of captures, the final balance and the provider invariants.

use std::net::TcpListener;
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::Duration;

use prepaid_core::issuance::{issue_batch, IssueOptions};
use prepaid_core::keys::test_signing_key;
use prepaid_core::messages::ActivateRequest;
use prepaid_core::{KeyRegistry, MemJournal, Money, SystemClock};
use prepaid_merchant::{Catalog, CatalogItem, CheckoutError, CheckoutRequest, Merchant, MerchantOptions};
use prepaid_provider::{wire_handler, Provider, ServiceOptions};
use prepaid_wire::{TcpLink, Transport};
use serde::{Deserialize, Serialize};

use crate::bench::{MERCHANT_ID, PROVIDER_ID};
use crate::config::SimError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StressConfig {
    /// Request handler threads on the provider.
    pub threads: usize,
    pub card_balance: u64,
    pub request_amount: u64,
    pub workers: usize,
    /// Checkouts per worker.
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StressReport {
    pub attempts: u64,
    pub captures: u64,
    pub declined: u64,
    pub errors: u64,
    pub expected_captures: u64,
    pub final_balance: Money,
    pub negative_balance_events: u64,
    pub ledger_records: u64,
    pub invariants_ok: bool,
}

impl StressReport {
    pub fn passed(&self) -> bool {
        self.captures == self.expected_captures
            && self.errors == 0
            && self.negative_balance_events == 0
            && self.invariants_ok
            && self.ledger_records == self.captures
    }
}

pub fn run_stress(cfg: &StressConfig) -> Result<StressReport, SimError> {
    let setup = |e: &dyn std::fmt::Display| SimError::Setup(e.to_string());
    if cfg.request_amount == 0 || cfg.workers == 0 || cfg.rounds == 0 {
        return Err(SimError::ConfigInvalid(
            "request amount, workers and rounds must be positive".into(),
        ));
    }
    let provider_key = test_signing_key("stress:provider");
    let merchant_key = test_signing_key("stress:merchant");
    let provider_registry =
        KeyRegistry::new(PROVIDER_ID, provider_key.clone()).with_peer(MERCHANT_ID, merchant_key.verifying_key());
    let merchant_registry =
        KeyRegistry::new(MERCHANT_ID, merchant_key).with_peer(PROVIDER_ID, provider_key.verifying_key());

    let provider = Arc::new(
        Provider::open(
            provider_registry.clone(),
            Arc::new(SystemClock),
            ServiceOptions::default(),
            Box::new(MemJournal::new()),
        )
        .map_err(|e| setup(&e))?,
    );
    let batch = issue_batch(
        PROVIDER_ID,
        Money::from_minor(cfg.card_balance),
        1,
        &IssueOptions::default(),
    )
    .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
    provider.load_cards(&batch).map_err(|e| setup(&e))?;
    let card = &batch.cards[0];
    let password = "stress-pw";
    provider
        .activate_card(&ActivateRequest {
            card_number: card.card_number.as_str().into(),
            secret: card.secret.clone(),
            new_password: password.into(),
        })
        .map_err(|e| setup(&e))?;

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let server = prepaid_wire::spawn(
        listener,
        Transport::Secure(provider_registry),
        wire_handler(provider.clone()),
        cfg.threads,
    )?;
    let link = TcpLink::new(
        server.local_addr().to_string(),
        PROVIDER_ID,
        Transport::Secure(merchant_registry.clone()),
    )
    .with_timeout(Duration::from_secs(30));
    let catalog = Catalog::new([CatalogItem {
        item_id: "unit".into(),
        title: "One unit".into(),
        price: Money::from_minor(cfg.request_amount),
    }])
    .map_err(|e| setup(&e))?;
    let merchant = Arc::new(
        Merchant::open(
            merchant_registry,
            PROVIDER_ID,
            catalog,
            Arc::new(link),
            Arc::new(SystemClock),
            MerchantOptions::default(),
            Box::new(MemJournal::new()),
        )
        .map_err(|e| setup(&e))?,
    );

    let request = CheckoutRequest {
        item_id: "unit".into(),
        card_number: card.card_number.as_str().into(),
        secret: card.secret.clone(),
        password: password.into(),
        provider_id: PROVIDER_ID.into(),
    };
    let barrier = Arc::new(Barrier::new(cfg.workers));
    let handles: Vec<_> = (0..cfg.workers)
        .map(|_| {
            let (merchant, barrier, request, rounds) = (merchant.clone(), barrier.clone(), request.clone(), cfg.rounds);
            thread::spawn(move || {
                barrier.wait();
                (0..rounds).map(|_| merchant.checkout(&request)).collect::<Vec<_>>()
            })
        })
        .collect();
    let mut report = StressReport {
        attempts: 0,
        captures: 0,
        declined: 0,
        errors: 0,
        expected_captures: (cfg.card_balance / cfg.request_amount).min((cfg.workers * cfg.rounds) as u64),
        final_balance: Money::ZERO,
        negative_balance_events: 0,
        ledger_records: 0,
        invariants_ok: false,
    };
    for h in handles {
        for result in h.join().map_err(|_| SimError::Setup("worker panicked".into()))? {
            report.attempts += 1;
            match result {
                Ok(_) => report.captures += 1,
                Err(CheckoutError::PaymentDeclined(_)) => report.declined += 1,
                Err(e) => {
                    tracing::warn!(error = %e, "stress checkout failed");
                    report.errors += 1;
                }
            }
        }
    }
    server.shutdown();

    provider.with_state(|s| {
        report.final_balance = s.cards[card.card_number.as_str()].balance;
        report.negative_balance_events = s.negative_balance_events;
    });
    report.invariants_ok = provider.check_invariants().is_ok() && merchant.check_ledger().is_ok();
    report.ledger_records = merchant.with_ledger(|l| l.records.len() as u64);
    Ok(report)
}
