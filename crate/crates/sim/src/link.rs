//! In-process channel between the merchant and the provider.
//!
//! Faults act on whole envelopes: a request or its reply can be lost, a
//! request can be delivered twice, or held back and delivered after the
//! next one. Settlement traffic is never faulted.

use std::sync::{Arc, Mutex, MutexGuard};

use prepaid_core::messages::MessageType;
use prepaid_core::{CaptureConfirm, Envelope, Money};
use prepaid_provider::Provider;
use prepaid_wire::{LinkError, ProviderLink};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultRates {
    pub drop_pct: u32,
    pub duplicate_pct: u32,
    pub reorder_pct: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultCounts {
    pub dropped_requests: u64,
    pub dropped_replies: u64,
    pub duplicated: u64,
    pub reordered: u64,
    pub late_deliveries: u64,
    /// Late deliveries discarded because the provider was down.
    pub lost_in_flight: u64,
    /// Exchanges refused because the provider was down.
    pub provider_down: u64,
    /// Duplicate deliveries whose two replies differed.
    pub replay_mismatches: u64,
}

/// What the provider said when it countersigned a capture. The reference
/// ledger is rebuilt from these alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureEvent {
    pub txn_id: String,
    pub card_ref: String,
    pub amount: Money,
}

struct Net {
    rng: ChaCha20Rng,
    rates: FaultRates,
    enabled: bool,
    pending: Vec<Envelope>,
    counts: FaultCounts,
    captures: Vec<CaptureEvent>,
    recording: bool,
    transcript: Vec<(Envelope, Vec<u8>)>,
}

pub struct SimLink {
    provider: Mutex<Option<Arc<Provider>>>,
    net: Mutex<Net>,
}

impl SimLink {
    pub fn new(provider: Arc<Provider>, seed: [u8; 32]) -> Self {
        Self {
            provider: Mutex::new(Some(provider)),
            net: Mutex::new(Net {
                rng: ChaCha20Rng::from_seed(seed),
                rates: FaultRates::default(),
                enabled: false,
                pending: Vec::new(),
                counts: FaultCounts::default(),
                captures: Vec::new(),
                recording: false,
                transcript: Vec::new(),
            }),
        }
    }

    fn net(&self) -> MutexGuard<'_, Net> {
        self.net.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn provider(&self) -> Option<Arc<Provider>> {
        self.provider.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Takes the provider off the network and returns it.
    pub fn take_provider(&self) -> Option<Arc<Provider>> {
        self.provider.lock().unwrap_or_else(|p| p.into_inner()).take()
    }

    pub fn set_provider(&self, provider: Arc<Provider>) {
        *self.provider.lock().unwrap_or_else(|p| p.into_inner()) = Some(provider);
    }

    pub fn set_faults(&self, rates: FaultRates) {
        let mut net = self.net();
        net.rates = rates;
        net.enabled = true;
    }

    pub fn disable_faults(&self) {
        self.net().enabled = false;
    }

    /// Keep every delivered request and the reply bytes it produced.
    pub fn record(&self, on: bool) {
        self.net().recording = on;
    }

    pub fn transcript(&self) -> Vec<(Envelope, Vec<u8>)> {
        self.net().transcript.clone()
    }

    pub fn counts(&self) -> FaultCounts {
        self.net().counts.clone()
    }

    pub fn capture_events(&self) -> Vec<CaptureEvent> {
        self.net().captures.clone()
    }

    /// Delivers every held-back request now.
    pub fn flush(&self) {
        let provider = self.provider();
        let mut net = self.net();
        let pending = std::mem::take(&mut net.pending);
        for env in pending {
            match &provider {
                Some(p) => {
                    deliver(&mut net, p, &env);
                    net.counts.late_deliveries += 1;
                }
                None => net.counts.lost_in_flight += 1,
            }
        }
    }
}

fn deliver(net: &mut Net, provider: &Provider, request: &Envelope) -> Vec<u8> {
    let reply = provider.handle_line(Some(&request.sender_id), &request.to_line());
    if let Ok(env) = Envelope::from_line(&reply) {
        if env.kind == MessageType::CaptureConfirm {
            if let Ok(c) = env.body_as::<CaptureConfirm>() {
                net.captures.push(CaptureEvent {
                    txn_id: c.record.txn_id,
                    card_ref: c.record.card_ref,
                    amount: c.record.amount,
                });
            }
        }
    }
    if net.recording {
        net.transcript.push((request.clone(), reply.clone()));
    }
    reply
}

fn parse(reply: &[u8]) -> Result<Envelope, LinkError> {
    Envelope::from_line(reply).map_err(|e| LinkError::Protocol(e.to_string()))
}

impl ProviderLink for SimLink {
    fn exchange(&self, request: &Envelope) -> Result<Envelope, LinkError> {
        let Some(provider) = self.provider() else {
            self.net().counts.provider_down += 1;
            return Err(LinkError::Unreachable("provider down".into()));
        };
        let mut net = self.net();
        if !net.enabled || request.kind == MessageType::SettleDemand {
            return parse(&deliver(&mut net, &provider, request));
        }
        let rates = net.rates;
        if net.rng.gen_range(0..100) < rates.drop_pct {
            if net.rng.gen_bool(0.5) {
                net.counts.dropped_requests += 1;
            } else {
                deliver(&mut net, &provider, request);
                net.counts.dropped_replies += 1;
            }
            return Err(LinkError::Unreachable("message lost".into()));
        }
        if net.rng.gen_range(0..100) < rates.reorder_pct {
            net.pending.push(request.clone());
            net.counts.reordered += 1;
            return Err(LinkError::Unreachable("no reply in time".into()));
        }
        let mut reply = deliver(&mut net, &provider, request);
        // Anything held back arrives after this request overtook it.
        for env in std::mem::take(&mut net.pending) {
            deliver(&mut net, &provider, &env);
            net.counts.late_deliveries += 1;
        }
        if net.rng.gen_range(0..100) < rates.duplicate_pct {
            let again = deliver(&mut net, &provider, request);
            net.counts.duplicated += 1;
            if again != reply {
                net.counts.replay_mismatches += 1;
            }
            reply = again;
        }
        parse(&reply)
    }
}
