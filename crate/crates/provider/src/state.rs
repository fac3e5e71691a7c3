//! The provider's durable state and the journal entries that mutate it.
//!
//! [`ProviderState::apply`] is the only mutation path. Live operations
//! validate, journal an entry, then apply it; recovery applies the same
//! entries in order, so replay reproduces the acknowledged state exactly.

use std::collections::BTreeMap;

use prepaid_core::card::{card_ref, PasswordHash};
use prepaid_core::messages::{AuthorizationDecision, CaptureConfirm};
use prepaid_core::settlement::{ReplicaSource, SettlementReport};
use prepaid_core::{canonical, Card, CardState, Money, TransactionRecord, TxnState};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hold {
    pub hold_id: String,
    pub card_number: String,
    pub amount: Money,
    pub request_id: String,
    pub merchant_id: String,
    pub item_id: String,
    pub created_at: i64,
    pub expiry: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum HoldOutcome {
    Captured { confirm: CaptureConfirm, at: i64 },
    Released { at: i64 },
}

/// Captured, fully signed records keyed by transaction id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplicaStore(BTreeMap<String, TransactionRecord>);

impl ReplicaStore {
    pub fn get(&self, txn_id: &str) -> Option<&TransactionRecord> {
        self.0.get(txn_id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransactionRecord> {
        self.0.values()
    }

    /// Idempotent by txn id for byte-identical content; refuses a different
    /// record under an existing id.
    fn insert(&mut self, record: TransactionRecord) -> bool {
        match self.0.get(&record.txn_id) {
            Some(existing) => existing == &record,
            None => {
                self.0.insert(record.txn_id.clone(), record);
                true
            }
        }
    }
}

impl ReplicaSource for ReplicaStore {
    fn replica(&self, txn_id: &str) -> Option<&TransactionRecord> {
        self.0.get(txn_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Entry {
    LoadCards {
        cards: Vec<Card>,
    },
    Activate {
        card_number: String,
        password: PasswordHash,
    },
    PlaceHold {
        hold: Hold,
        decision: AuthorizationDecision,
    },
    ReleaseHold {
        hold_id: String,
        at: i64,
    },
    Capture {
        hold_id: String,
        confirm: CaptureConfirm,
        at: i64,
    },
    Settle {
        report: SettlementReport,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalLine {
    pub seq: u64,
    pub entry: Entry,
}

fn period_key(report: &SettlementReport) -> String {
    format!("{}..{}", report.period.start, report.period.end)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderState {
    /// Sequence number of the last applied entry.
    pub seq: u64,
    pub cards: BTreeMap<String, Card>,
    /// Active holds.
    pub holds: BTreeMap<String, Hold>,
    /// Sum of active holds per card.
    pub held: BTreeMap<String, Money>,
    /// Holds that were captured or released.
    pub finished_holds: BTreeMap<String, HoldOutcome>,
    /// AVAILABLE decisions by merchant, then request id.
    pub decisions: BTreeMap<String, BTreeMap<String, AuthorizationDecision>>,
    pub replicas: ReplicaStore,
    /// Settlement reports by merchant, then period.
    pub reports: BTreeMap<String, BTreeMap<String, SettlementReport>>,
    /// Captured value per card reference.
    pub captured_by_card: BTreeMap<String, Money>,
    /// Count of mutations that would have driven a balance negative. Must
    /// stay zero; the checks before journaling make it unreachable.
    pub negative_balance_events: u64,
}

impl ProviderState {
    pub fn to_snapshot(&self) -> Vec<u8> {
        canonical::to_bytes(self).expect("provider state is always encodable")
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self, canonical::CanonicalError> {
        canonical::from_bytes(bytes)
    }

    pub fn held_on(&self, card_number: &str) -> Money {
        self.held.get(card_number).copied().unwrap_or(Money::ZERO)
    }

    /// Balance minus active holds.
    pub fn available(&self, card_number: &str) -> Option<Money> {
        let card = self.cards.get(card_number)?;
        Some(
            card.balance
                .checked_sub(self.held_on(card_number))
                .unwrap_or(Money::ZERO),
        )
    }

    pub fn decision(&self, merchant_id: &str, request_id: &str) -> Option<&AuthorizationDecision> {
        self.decisions.get(merchant_id)?.get(request_id)
    }

    pub fn report(&self, merchant_id: &str, period: &prepaid_core::Period) -> Option<&SettlementReport> {
        self.reports
            .get(merchant_id)?
            .get(&format!("{}..{}", period.start, period.end))
    }

    fn adjust_held(&mut self, card_number: &str, add: Option<Money>, remove: Option<Money>) {
        let cur = self.held_on(card_number);
        let mut next = cur;
        if let Some(a) = add {
            next = next.checked_add(a).unwrap_or(next);
        }
        if let Some(r) = remove {
            match next.checked_sub(r) {
                Some(n) => next = n,
                None => {
                    self.negative_balance_events += 1;
                    next = Money::ZERO;
                }
            }
        }
        if next.is_zero() {
            self.held.remove(card_number);
        } else {
            self.held.insert(card_number.to_string(), next);
        }
    }

    /// Applies one journaled entry. Entries are validated before they are
    /// journaled, so application never fails.
    pub fn apply(&mut self, line: &JournalLine) {
        self.seq = line.seq;
        match &line.entry {
            Entry::LoadCards { cards } => {
                for card in cards {
                    self.cards.insert(card.card_number.as_str().to_string(), card.clone());
                }
            }
            Entry::Activate { card_number, password } => {
                if let Some(card) = self.cards.get_mut(card_number) {
                    card.password = Some(password.clone());
                    card.state = CardState::Activated;
                }
            }
            Entry::PlaceHold { hold, decision } => {
                self.adjust_held(&hold.card_number, Some(hold.amount), None);
                if let Some(card) = self.cards.get(&hold.card_number) {
                    if card.balance < self.held_on(&hold.card_number) {
                        self.negative_balance_events += 1;
                    }
                }
                self.holds.insert(hold.hold_id.clone(), hold.clone());
                self.decisions
                    .entry(hold.merchant_id.clone())
                    .or_default()
                    .insert(hold.request_id.clone(), decision.clone());
            }
            Entry::ReleaseHold { hold_id, at } => {
                if let Some(hold) = self.holds.remove(hold_id) {
                    self.adjust_held(&hold.card_number, None, Some(hold.amount));
                    self.finished_holds
                        .insert(hold_id.clone(), HoldOutcome::Released { at: *at });
                }
            }
            Entry::Capture { hold_id, confirm, at } => {
                if let Some(hold) = self.holds.remove(hold_id) {
                    self.adjust_held(&hold.card_number, None, Some(hold.amount));
                    if let Some(card) = self.cards.get_mut(&hold.card_number) {
                        match card.balance.checked_sub(hold.amount) {
                            Some(b) => card.balance = b,
                            None => {
                                self.negative_balance_events += 1;
                                card.balance = Money::ZERO;
                            }
                        }
                        if card.balance.is_zero() {
                            card.state = CardState::Exhausted;
                        }
                    }
                    let cref = card_ref(&hold.card_number);
                    let total = self.captured_by_card.entry(cref).or_default();
                    *total = total.checked_add(hold.amount).unwrap_or(*total);
                    self.replicas.insert(confirm.record.clone());
                    self.finished_holds.insert(
                        hold_id.clone(),
                        HoldOutcome::Captured {
                            confirm: confirm.clone(),
                            at: *at,
                        },
                    );
                }
            }
            Entry::Settle { report } => {
                for txn_id in &report.matched {
                    if let Some(r) = self.replicas.0.get_mut(txn_id) {
                        r.state = TxnState::Settled;
                    }
                }
                self.reports
                    .entry(report.merchant_id.clone())
                    .or_default()
                    .insert(period_key(report), report.clone());
            }
        }
    }

    /// Per-card conservation: denomination = balance + active holds +
    /// captured value, and available balance never negative.
    pub fn check_card_invariants(&self) -> Result<(), String> {
        if self.negative_balance_events > 0 {
            return Err(format!("{} negative balance events", self.negative_balance_events));
        }
        for (number, card) in &self.cards {
            card.check_invariants()?;
            let held = self.held_on(number);
            if held > card.balance {
                return Err(format!("{number}: holds {held} exceed balance {}", card.balance));
            }
            let captured = self
                .captured_by_card
                .get(&card_ref(number))
                .copied()
                .unwrap_or(Money::ZERO);
            if card.balance.minor() + captured.minor() != card.denomination.minor() {
                return Err(format!(
                    "{number}: denomination {} != balance {} + captured {captured}",
                    card.denomination, card.balance
                ));
            }
        }
        Ok(())
    }
}
