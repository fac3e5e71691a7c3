//! The merchant's signed transaction ledger.
//!
//! Append-only: a recorded entry never changes except for its lifecycle
//! flag moving from CAPTURED to SETTLED. Every change goes through
//! [`LedgerState::apply`], both live and on journal replay.

use std::collections::{BTreeMap, BTreeSet};

use prepaid_core::settlement::Discrepancy;
use prepaid_core::{canonical, Money, Period, TransactionRecord, TxnState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Merchant-side outcome of applying a settlement report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementSummary {
    pub period: Period,
    pub demanded: u64,
    pub settled: u64,
    pub matched_total: Money,
    pub fee: Money,
    pub payout: Money,
    pub fee_rate_bp: u32,
    /// Records the provider did not match; they stay CAPTURED.
    pub discrepancies: Vec<Discrepancy>,
    /// Problems with the report itself, for operator review.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LedgerEntry {
    /// Request-id counter values below `upto` may have been handed out.
    Reserve {
        upto: u64,
    },
    Append {
        record: TransactionRecord,
    },
    Demand {
        period: Period,
        txn_ids: Vec<String>,
    },
    Settle {
        summary: SettlementSummary,
        settled: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerLine {
    pub seq: u64,
    pub entry: LedgerEntry,
}

pub fn period_key(p: &Period) -> String {
    format!("{}..{}", p.start, p.end)
}

/// `sha256("receipt:v1:" || content digest)`. The content digest covers the
/// signed fields and both signatures, so only a record countersigned by
/// the provider yields a valid token.
pub fn receipt_token(record: &TransactionRecord) -> String {
    hex::encode(Sha256::digest(
        format!("receipt:v1:{}", record.content_digest()).as_bytes(),
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerState {
    pub seq: u64,
    pub counter_reserved: u64,
    /// Records in append order.
    pub records: Vec<TransactionRecord>,
    pub by_txn: BTreeMap<String, u64>,
    pub by_request: BTreeMap<String, u64>,
    /// Outstanding and answered demands by period.
    pub demands: BTreeMap<String, Vec<String>>,
    pub settlements: BTreeMap<String, SettlementSummary>,
}

impl LedgerState {
    pub fn to_snapshot(&self) -> Vec<u8> {
        canonical::to_bytes(self).expect("ledger state is always encodable")
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self, canonical::CanonicalError> {
        canonical::from_bytes(bytes)
    }

    pub fn get(&self, txn_id: &str) -> Option<&TransactionRecord> {
        self.by_txn.get(txn_id).map(|&i| &self.records[i as usize])
    }

    pub fn by_request_id(&self, request_id: &str) -> Option<&TransactionRecord> {
        self.by_request.get(request_id).map(|&i| &self.records[i as usize])
    }

    /// Transaction ids already listed in some demand.
    pub fn demanded(&self) -> BTreeSet<&str> {
        self.demands.values().flatten().map(String::as_str).collect()
    }

    pub fn apply(&mut self, line: &LedgerLine) {
        self.seq = line.seq;
        match &line.entry {
            LedgerEntry::Reserve { upto } => self.counter_reserved = self.counter_reserved.max(*upto),
            LedgerEntry::Append { record } => {
                if self.by_txn.contains_key(&record.txn_id) || self.by_request.contains_key(&record.request_id) {
                    return;
                }
                let idx = self.records.len() as u64;
                self.by_txn.insert(record.txn_id.clone(), idx);
                self.by_request.insert(record.request_id.clone(), idx);
                self.records.push(record.clone());
            }
            LedgerEntry::Demand { period, txn_ids } => {
                self.demands.insert(period_key(period), txn_ids.clone());
            }
            LedgerEntry::Settle { summary, settled } => {
                for txn_id in settled {
                    if let Some(&i) = self.by_txn.get(txn_id) {
                        let r = &mut self.records[i as usize];
                        if r.state == TxnState::Captured {
                            r.state = TxnState::Settled;
                        }
                    }
                }
                self.settlements.insert(period_key(&summary.period), summary.clone());
            }
        }
    }
}
