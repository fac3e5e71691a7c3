//! End-of-period settlement: reconciling a merchant's demanded records
//! against the provider's replicas, the provider fee, and the signed report.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::keys::{KeyError, KeyRegistry, Signature};
use crate::lifecycle::TxnState;
use crate::money::Money;
use crate::record::{verify_record, RecordVerdict, TransactionRecord};

pub const BASIS_POINTS: u32 = 10_000;
pub const DEFAULT_FEE_RATE_BP: u32 = 100;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SettlementError {
    #[error("fee rate {0} bp is outside 0..=10000")]
    RateOutOfRange(u32),
    #[error("amount overflow")]
    Overflow,
    #[error(transparent)]
    Key(#[from] KeyError),
}

/// Half-open interval `[start, end)` of seconds since epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Period {
    pub start: i64,
    pub end: i64,
}

impl Period {
    pub fn new(start: i64, end: i64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, ts: i64) -> bool {
        self.start <= ts && ts < self.end
    }

    pub fn is_disjoint(&self, other: &Period) -> bool {
        self.end <= other.start || other.end <= self.start
    }
}

impl std::str::FromStr for Period {
    type Err = String;

    /// Parses `<start>..<end>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| format!("expected <start>..<end>, got {s:?}"))?;
        let start = a.trim().parse().map_err(|e| format!("bad period start: {e}"))?;
        let end = b.trim().parse().map_err(|e| format!("bad period end: {e}"))?;
        if end < start {
            return Err("period end precedes start".into());
        }
        Ok(Period { start, end })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementDemand {
    pub merchant_id: String,
    pub period: Period,
    pub records: Vec<TransactionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand_sig: Option<Signature>,
}

impl SettlementDemand {
    fn signed_bytes(&self) -> Vec<u8> {
        let mut unsigned = self.clone();
        unsigned.demand_sig = None;
        canonical::to_bytes(&unsigned).expect("demands are always encodable")
    }

    pub fn total(&self) -> Money {
        self.records.iter().map(|r| r.amount).sum()
    }

    pub fn sign(mut self, signer: &KeyRegistry) -> Result<Self, KeyError> {
        self.demand_sig = None;
        self.demand_sig = Some(signer.sign(&self.signed_bytes())?);
        Ok(self)
    }

    pub fn verify(&self, registry: &KeyRegistry) -> Result<bool, KeyError> {
        match &self.demand_sig {
            Some(sig) => registry.verify(&self.merchant_id, &self.signed_bytes(), sig),
            None => Ok(false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiscrepancyKind {
    BadSignature,
    MissingReplica,
    ContentMismatch,
    AlreadySettled,
    OutOfPeriod,
    DuplicateDemand,
}

impl DiscrepancyKind {
    pub const ALL: [DiscrepancyKind; 6] = [
        DiscrepancyKind::BadSignature,
        DiscrepancyKind::MissingReplica,
        DiscrepancyKind::ContentMismatch,
        DiscrepancyKind::AlreadySettled,
        DiscrepancyKind::OutOfPeriod,
        DiscrepancyKind::DuplicateDemand,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Discrepancy {
    pub txn_id: String,
    pub kind: DiscrepancyKind,
    pub detail: String,
}

/// Read access to the provider's replica store.
pub trait ReplicaSource {
    fn replica(&self, txn_id: &str) -> Option<&TransactionRecord>;
}

impl ReplicaSource for BTreeMap<String, TransactionRecord> {
    fn replica(&self, txn_id: &str) -> Option<&TransactionRecord> {
        self.get(txn_id)
    }
}

impl ReplicaSource for HashMap<String, TransactionRecord> {
    fn replica(&self, txn_id: &str) -> Option<&TransactionRecord> {
        self.get(txn_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Reconciliation {
    pub matched: Vec<TransactionRecord>,
    pub discrepancies: Vec<Discrepancy>,
}

impl Reconciliation {
    pub fn matched_total(&self) -> Money {
        self.matched.iter().map(|r| r.amount).sum()
    }
}

fn classify(
    demand: &SettlementDemand,
    record: &TransactionRecord,
    replicas: &impl ReplicaSource,
    registry: &KeyRegistry,
    seen: &HashSet<&str>,
) -> Option<(DiscrepancyKind, String)> {
    use DiscrepancyKind as K;
    match verify_record(record, registry) {
        Ok(RecordVerdict::Valid) if record.state == TxnState::Captured => {}
        Ok(RecordVerdict::Valid) => {
            return Some((K::BadSignature, format!("record presented in state {:?}", record.state)))
        }
        Ok(v) => return Some((K::BadSignature, format!("{v:?}"))),
        Err(e) => return Some((K::BadSignature, e.to_string())),
    }
    let Some(replica) = replicas.replica(&record.txn_id) else {
        return Some((K::MissingReplica, "no replica for this transaction".into()));
    };
    if record.merchant_id != demand.merchant_id {
        return Some((K::ContentMismatch, format!("record belongs to {}", record.merchant_id)));
    }
    if replica.signed_payload() != record.signed_payload()
        || replica.merchant_sig != record.merchant_sig
        || replica.provider_sig != record.provider_sig
    {
        return Some((K::ContentMismatch, "differs from the provider replica".into()));
    }
    if replica.state == TxnState::Settled {
        return Some((K::AlreadySettled, "settled in an earlier period".into()));
    }
    if !demand.period.contains(record.timestamp) {
        return Some((K::OutOfPeriod, format!("timestamp {} outside period", record.timestamp)));
    }
    if seen.contains(record.txn_id.as_str()) {
        return Some((K::DuplicateDemand, "listed more than once".into()));
    }
    None
}

/// Classifies every demanded record as matched or as exactly one
/// discrepancy, checking in the fixed order BAD_SIGNATURE, MISSING_REPLICA,
/// CONTENT_MISMATCH, ALREADY_SETTLED, OUT_OF_PERIOD, DUPLICATE_DEMAND.
pub fn reconcile(demand: &SettlementDemand, replicas: &impl ReplicaSource, registry: &KeyRegistry) -> Reconciliation {
    let mut out = Reconciliation::default();
    let mut seen = HashSet::new();
    for record in &demand.records {
        match classify(demand, record, replicas, registry, &seen) {
            None => out.matched.push(record.clone()),
            Some((kind, detail)) => out.discrepancies.push(Discrepancy {
                txn_id: record.txn_id.clone(),
                kind,
                detail,
            }),
        }
        seen.insert(record.txn_id.as_str());
    }
    out
}

/// `fee = ceil(total * rate / 10000)`, `payout = total - fee`.
pub fn compute_fee(matched_total: Money, fee_rate_bp: u32) -> Result<(Money, Money), SettlementError> {
    if fee_rate_bp > BASIS_POINTS {
        return Err(SettlementError::RateOutOfRange(fee_rate_bp));
    }
    let scaled = u128::from(matched_total.minor()) * u128::from(fee_rate_bp);
    let fee = scaled.div_ceil(u128::from(BASIS_POINTS));
    let fee = Money::from_minor(u64::try_from(fee).map_err(|_| SettlementError::Overflow)?);
    let payout = matched_total.checked_sub(fee).ok_or(SettlementError::Overflow)?;
    Ok((fee, payout))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UndemandedEntry {
    pub txn_id: String,
    pub amount: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementReport {
    pub merchant_id: String,
    pub provider_id: String,
    pub period: Period,
    /// Matched transaction ids, sorted.
    pub matched: Vec<String>,
    pub matched_total: Money,
    pub fee: Money,
    pub payout: Money,
    pub fee_rate_bp: u32,
    pub discrepancies: Vec<Discrepancy>,
    /// Provider-side appendix: captured replicas in the period that the
    /// merchant did not demand. They do not affect the payout.
    pub undemanded: Vec<UndemandedEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_sig: Option<Signature>,
}

impl SettlementReport {
    fn signed_bytes(&self) -> Vec<u8> {
        let mut unsigned = self.clone();
        unsigned.report_sig = None;
        canonical::to_bytes(&unsigned).expect("reports are always encodable")
    }

    pub fn verify(&self, registry: &KeyRegistry) -> Result<bool, KeyError> {
        match &self.report_sig {
            Some(sig) => registry.verify(&self.provider_id, &self.signed_bytes(), sig),
            None => Ok(false),
        }
    }

    pub fn to_canonical(&self) -> Vec<u8> {
        canonical::to_bytes(self).expect("reports are always encodable")
    }

    pub fn undemanded_total(&self) -> Money {
        self.undemanded.iter().map(|u| u.amount).sum()
    }
}

/// Builds and signs the report. Output is sorted so equal inputs always give
/// byte-identical reports.
pub fn emit_report(
    merchant_id: &str,
    period: Period,
    reconciliation: &Reconciliation,
    mut undemanded: Vec<UndemandedEntry>,
    fee_rate_bp: u32,
    signer: &KeyRegistry,
) -> Result<SettlementReport, SettlementError> {
    let matched_total = reconciliation
        .matched
        .iter()
        .try_fold(Money::ZERO, |acc, r| acc.checked_add(r.amount))
        .ok_or(SettlementError::Overflow)?;
    let (fee, payout) = compute_fee(matched_total, fee_rate_bp)?;
    let mut matched: Vec<String> = reconciliation.matched.iter().map(|r| r.txn_id.clone()).collect();
    matched.sort();
    let mut discrepancies = reconciliation.discrepancies.clone();
    discrepancies.sort();
    undemanded.sort();
    let mut report = SettlementReport {
        merchant_id: merchant_id.to_string(),
        provider_id: signer.own_id().to_string(),
        period,
        matched,
        matched_total,
        fee,
        payout,
        fee_rate_bp,
        discrepancies,
        undemanded,
        report_sig: None,
    };
    report.report_sig = Some(signer.sign(&report.signed_bytes())?);
    Ok(report)
}
