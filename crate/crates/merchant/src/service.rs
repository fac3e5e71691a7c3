use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use prepaid_core::card::card_ref;
use prepaid_core::messages::{
    ActivateRequest, BalanceReply, BalanceRequest, CaptureRequest, ErrorCode, ErrorReply, MessageType,
};
use prepaid_core::record::txn_id_for;
use prepaid_core::settlement::compute_fee;
use prepaid_core::{
    canonical, sign_record, verify_record, AuthorizationDecision, CaptureConfirm, Clock, CreditRequest, Envelope,
    Journal, KeyRegistry, Money, Period, RecordVerdict, SettlementDemand, SettlementReport, TransactionRecord,
    TxnState, Verdict,
};
use prepaid_wire::{LinkError, ProviderLink};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogItem};
use crate::ledger::{period_key, receipt_token, LedgerEntry, LedgerLine, LedgerState, SettlementSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclineReason {
    InsufficientFunds,
    AuthFailure,
    InvalidRequest,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckoutError {
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("unknown provider {0:?}")]
    UnknownProvider(String),
    #[error("payment declined ({0:?})")]
    PaymentDeclined(DeclineReason),
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("provider signature invalid: {0}")]
    BadProviderSignature(String),
    #[error("provider refused the capture: {0:?}")]
    CaptureRejected(ErrorCode),
    #[error("unexpected provider reply: {0}")]
    ProviderProtocol(String),
    #[error("ledger unavailable: {0}")]
    Ledger(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MerchantError {
    #[error("period {0} has not ended")]
    PeriodOpen(String),
    #[error("settlement report signature does not verify")]
    BadReportSignature,
    #[error("no outstanding demand for period {0}")]
    UnknownPeriod(String),
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("provider signature invalid: {0}")]
    BadProviderSignature(String),
    #[error("provider refused: {0:?} {1}")]
    Rejected(ErrorCode, String),
    #[error("unexpected provider reply: {0}")]
    ProviderProtocol(String),
    #[error("ledger unavailable: {0}")]
    Ledger(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckoutRequest {
    pub item_id: String,
    pub card_number: String,
    pub secret: String,
    pub password: String,
    pub provider_id: String,
}

/// Digital invoice for a captured payment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub txn_id: String,
    pub item_id: String,
    pub amount: Money,
    pub timestamp: i64,
    pub status: TxnState,
    pub receipt_token: String,
}

impl Receipt {
    /// Only captured (or later settled) records have receipts.
    pub fn for_record(r: &TransactionRecord) -> Option<Self> {
        matches!(r.state, TxnState::Captured | TxnState::Settled).then(|| Receipt {
            txn_id: r.txn_id.clone(),
            item_id: r.item_id.clone(),
            amount: r.amount,
            timestamp: r.timestamp,
            status: r.state,
            receipt_token: receipt_token(r),
        })
    }
}

#[derive(Debug, Clone)]
pub struct MerchantOptions {
    pub snapshot_every: u64,
    /// Request-id counter values reserved per journal entry.
    pub reserve_block: u64,
    /// Seeds the request-id salt. Only the simulation sets this.
    pub rng_seed: Option<[u8; 32]>,
}

impl Default for MerchantOptions {
    fn default() -> Self {
        Self {
            snapshot_every: 5000,
            reserve_block: 1000,
            rng_seed: None,
        }
    }
}

struct Inner {
    state: LedgerState,
    journal: Box<dyn Journal>,
    since_snapshot: u64,
    journal_failed: bool,
    counter: u64,
}

impl Inner {
    fn commit(&mut self, entry: LedgerEntry, snapshot_every: u64) -> Result<(), String> {
        if self.journal_failed {
            return Err("journal unavailable after an earlier failure".into());
        }
        let line = LedgerLine {
            seq: self.state.seq + 1,
            entry,
        };
        let bytes = canonical::to_bytes(&line).map_err(|e| e.to_string())?;
        if let Err(e) = self.journal.append(&bytes) {
            self.journal_failed = true;
            tracing::error!(error = %e, "ledger journal append failed");
            return Err(e.to_string());
        }
        self.state.apply(&line);
        self.since_snapshot += 1;
        if snapshot_every > 0 && self.since_snapshot >= snapshot_every {
            match self.journal.write_snapshot(&self.state.to_snapshot()) {
                Ok(()) => self.since_snapshot = 0,
                Err(e) => tracing::warn!(error = %e, "ledger snapshot failed"),
            }
        }
        Ok(())
    }
}

enum CallError {
    Unreachable(String),
    BadSignature(String),
    Protocol(String),
}

/// The merchant: catalog, checkout, ledger and settlement bookkeeping.
pub struct Merchant {
    registry: KeyRegistry,
    provider_id: String,
    catalog: Catalog,
    link: Arc<dyn ProviderLink>,
    clock: Arc<dyn Clock>,
    opts: MerchantOptions,
    salt: String,
    nonce_counter: AtomicU64,
    inner: Mutex<Inner>,
}

fn replay(journal: &mut dyn Journal) -> Result<LedgerState, String> {
    let (snapshot, lines) = journal.load().map_err(|e| e.to_string())?;
    let mut state = match snapshot {
        Some(b) => LedgerState::from_snapshot(&b).map_err(|e| e.to_string())?,
        None => LedgerState::default(),
    };
    for (i, raw) in lines.iter().enumerate() {
        let line: LedgerLine = canonical::from_bytes(raw).map_err(|e| format!("ledger line {}: {e}", i + 1))?;
        if line.seq <= state.seq {
            continue;
        }
        if line.seq != state.seq + 1 {
            return Err(format!("ledger sequence gap at {}", line.seq));
        }
        state.apply(&line);
    }
    Ok(state)
}

impl Merchant {
    pub fn open(
        registry: KeyRegistry,
        provider_id: impl Into<String>,
        catalog: Catalog,
        link: Arc<dyn ProviderLink>,
        clock: Arc<dyn Clock>,
        opts: MerchantOptions,
        mut journal: Box<dyn Journal>,
    ) -> Result<Self, MerchantError> {
        let provider_id = provider_id.into();
        if !registry.is_registered(&provider_id) {
            return Err(MerchantError::Ledger(format!(
                "no public key for provider {provider_id}"
            )));
        }
        let state = replay(journal.as_mut()).map_err(MerchantError::Ledger)?;
        let mut rng = match opts.rng_seed {
            Some(seed) => ChaCha20Rng::from_seed(seed),
            None => ChaCha20Rng::from_entropy(),
        };
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        Ok(Self {
            registry,
            provider_id,
            catalog,
            link,
            clock,
            opts,
            salt: hex::encode(salt),
            nonce_counter: AtomicU64::new(0),
            inner: Mutex::new(Inner {
                counter: state.counter_reserved,
                state,
                journal,
                since_snapshot: 0,
                journal_failed: false,
            }),
        })
    }

    pub fn id(&self) -> &str {
        self.registry.own_id()
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn list_catalog(&self) -> Vec<CatalogItem> {
        self.catalog.list()
    }

    pub fn with_ledger<R>(&self, f: impl FnOnce(&LedgerState) -> R) -> R {
        f(&self.lock().state)
    }

    /// Canonical ledger bytes, for byte-level comparisons.
    pub fn ledger_snapshot(&self) -> Vec<u8> {
        self.lock().state.to_snapshot()
    }

    pub fn receipt(&self, txn_id: &str) -> Option<Receipt> {
        self.with_ledger(|l| l.get(txn_id).and_then(Receipt::for_record))
    }

    /// One canonical record per line, in append order.
    pub fn export_ledger(&self) -> Vec<u8> {
        self.with_ledger(|l| {
            let mut out = Vec::new();
            for r in &l.records {
                out.extend_from_slice(&r.to_canonical());
                out.push(b'\n');
            }
            out
        })
    }

    /// Checks that every entry carries valid signatures and unique ids.
    pub fn check_ledger(&self) -> Result<(), String> {
        self.with_ledger(|l| {
            let mut seen = std::collections::HashSet::new();
            for r in &l.records {
                if !seen.insert(r.txn_id.as_str()) {
                    return Err(format!("{} recorded twice", r.txn_id));
                }
                if !matches!(r.state, TxnState::Captured | TxnState::Settled) {
                    return Err(format!("{} in state {:?}", r.txn_id, r.state));
                }
                match verify_record(r, &self.registry) {
                    Ok(RecordVerdict::Valid) => {}
                    other => return Err(format!("{}: {other:?}", r.txn_id)),
                }
            }
            Ok(())
        })
    }

    /// `digest(merchant_id, counter, salt)`. The counter is reserved in
    /// journaled blocks so it never repeats across restarts.
    fn next_request_id(&self) -> Result<String, String> {
        let mut inner = self.lock();
        if inner.counter >= inner.state.counter_reserved {
            let upto = inner.counter + self.opts.reserve_block.max(1);
            inner.commit(LedgerEntry::Reserve { upto }, self.opts.snapshot_every)?;
        }
        let n = inner.counter;
        inner.counter += 1;
        let d = Sha256::digest(format!("request:v1:{}:{n}:{}", self.id(), self.salt).as_bytes());
        Ok(format!("rq-{}", &hex::encode(d)[..32]))
    }

    fn fresh_nonce(&self, tag: &str) -> String {
        let n = self.nonce_counter.fetch_add(1, Ordering::Relaxed);
        format!("{tag}-{}-{n}", &self.salt[..8])
    }

    fn call<T: Serialize>(&self, kind: MessageType, body: &T, nonce: &str) -> Result<Envelope, CallError> {
        let env = Envelope::seal(kind, body, nonce, self.clock.now(), &self.registry)
            .map_err(|e| CallError::Protocol(e.to_string()))?;
        let reply = self.link.exchange(&env).map_err(|e| match e {
            LinkError::Unreachable(s) => CallError::Unreachable(s),
            LinkError::Protocol(s) => CallError::Protocol(s),
        })?;
        if reply.sender_id != self.provider_id {
            return Err(CallError::BadSignature(format!("reply from {:?}", reply.sender_id)));
        }
        if let Err(e) = reply.verify(&self.registry) {
            return Err(CallError::BadSignature(e.to_string()));
        }
        if reply.nonce != nonce {
            return Err(CallError::Protocol("reply nonce does not match the request".into()));
        }
        Ok(reply)
    }

    fn error_body(reply: &Envelope) -> Option<ErrorReply> {
        (reply.kind == MessageType::Error)
            .then(|| reply.body_as::<ErrorReply>().ok())
            .flatten()
    }

    /// Authorize, sign, capture, record. Nothing is recorded unless the
    /// provider's countersigned record comes back and verifies.
    pub fn checkout(&self, req: &CheckoutRequest) -> Result<Receipt, CheckoutError> {
        use CheckoutError as E;
        let item = self
            .catalog
            .get(&req.item_id)
            .ok_or_else(|| E::UnknownItem(req.item_id.clone()))?;
        if req.provider_id != self.provider_id {
            return Err(E::UnknownProvider(req.provider_id.clone()));
        }
        let request_id = self.next_request_id().map_err(E::Ledger)?;
        let now = self.clock.now();
        let credit = CreditRequest {
            request_id: request_id.clone(),
            provider_id: self.provider_id.clone(),
            card_number: req.card_number.clone(),
            secret: req.secret.clone(),
            password: req.password.clone(),
            amount: item.price,
            merchant_id: self.id().to_string(),
            item_id: item.item_id.clone(),
            timestamp: now,
        };
        let lift = |e: CallError| match e {
            CallError::Unreachable(s) => E::ProviderUnreachable(s),
            CallError::BadSignature(s) => {
                tracing::error!(request = %request_id, detail = %s, "provider reply failed verification");
                E::BadProviderSignature(s)
            }
            CallError::Protocol(s) => E::ProviderProtocol(s),
        };

        let reply = self
            .call(MessageType::CreditRequest, &credit, &format!("a-{request_id}"))
            .map_err(lift)?;
        if let Some(err) = Self::error_body(&reply) {
            return Err(E::ProviderProtocol(format!("{:?}: {}", err.code, err.detail)));
        }
        let decision: AuthorizationDecision = reply
            .expect(MessageType::AuthDecision)
            .and_then(|r| r.body_as())
            .map_err(|e| E::ProviderProtocol(e.to_string()))?;
        if decision.request_id != request_id || !decision.is_well_formed() {
            return Err(E::ProviderProtocol("decision does not answer this request".into()));
        }
        let hold_id = match decision.verdict {
            Verdict::Available => decision.hold_id.clone().expect("well-formed decision"),
            v => {
                tracing::info!(request = %request_id, verdict = ?v, "payment declined");
                return Err(E::PaymentDeclined(match v {
                    Verdict::InsufficientFunds => DeclineReason::InsufficientFunds,
                    Verdict::AuthFailure => DeclineReason::AuthFailure,
                    _ => DeclineReason::InvalidRequest,
                }));
            }
        };

        let mut record = TransactionRecord {
            txn_id: txn_id_for(self.id(), &request_id),
            request_id: request_id.clone(),
            timestamp: now,
            amount: item.price,
            merchant_id: self.id().to_string(),
            item_id: item.item_id.clone(),
            card_ref: card_ref(&req.card_number),
            provider_id: self.provider_id.clone(),
            state: TxnState::Authorized,
            merchant_sig: None,
            provider_sig: None,
        };
        record.merchant_sig = Some(sign_record(&record, &self.registry).map_err(|e| E::Ledger(e.to_string()))?);
        let capture = CaptureRequest {
            hold_id: hold_id.clone(),
            record: record.clone(),
        };
        let reply = self
            .call(MessageType::Capture, &capture, &format!("c-{request_id}"))
            .map_err(lift)?;
        if let Some(err) = Self::error_body(&reply) {
            tracing::warn!(request = %request_id, code = ?err.code, "capture refused");
            return Err(E::CaptureRejected(err.code));
        }
        let confirm: CaptureConfirm = reply
            .expect(MessageType::CaptureConfirm)
            .and_then(|r| r.body_as())
            .map_err(|e| E::ProviderProtocol(e.to_string()))?;
        let c = &confirm.record;
        if confirm.hold_id != hold_id
            || c.signed_payload() != record.signed_payload()
            || c.merchant_sig != record.merchant_sig
            || c.state != TxnState::Captured
        {
            return Err(E::ProviderProtocol("confirmed record differs from the one sent".into()));
        }
        match verify_record(c, &self.registry) {
            Ok(RecordVerdict::Valid) => {}
            other => {
                tracing::error!(request = %request_id, verdict = ?other, "provider countersignature invalid");
                return Err(E::BadProviderSignature(format!("{other:?}")));
            }
        }
        let mut inner = self.lock();
        if inner.state.get(&c.txn_id).is_none() {
            inner
                .commit(LedgerEntry::Append { record: c.clone() }, self.opts.snapshot_every)
                .map_err(E::Ledger)?;
        }
        let stored = inner.state.get(&c.txn_id).expect("just appended");
        Ok(Receipt::for_record(stored).expect("stored records are captured"))
    }

    /// Collects every captured, not yet demanded record in `period`. Asking
    /// again for a period with an outstanding demand returns that demand.
    pub fn build_demand(&self, period: Period) -> Result<SettlementDemand, MerchantError> {
        let key = period_key(&period);
        if period.end > self.clock.now() {
            return Err(MerchantError::PeriodOpen(key));
        }
        let mut inner = self.lock();
        let txn_ids = match inner.state.demands.get(&key) {
            Some(ids) => ids.clone(),
            None => {
                let already = inner.state.demanded();
                let ids: Vec<String> = inner
                    .state
                    .records
                    .iter()
                    .filter(|r| {
                        r.state == TxnState::Captured
                            && period.contains(r.timestamp)
                            && !already.contains(r.txn_id.as_str())
                    })
                    .map(|r| r.txn_id.clone())
                    .collect();
                inner
                    .commit(
                        LedgerEntry::Demand {
                            period,
                            txn_ids: ids.clone(),
                        },
                        self.opts.snapshot_every,
                    )
                    .map_err(MerchantError::Ledger)?;
                ids
            }
        };
        let records = txn_ids
            .iter()
            .filter_map(|id| inner.state.get(id).cloned())
            .map(|mut r| {
                // A demand always presents the captured form.
                r.state = TxnState::Captured;
                r
            })
            .collect();
        drop(inner);
        SettlementDemand {
            merchant_id: self.id().to_string(),
            period,
            records,
            demand_sig: None,
        }
        .sign(&self.registry)
        .map_err(|e| MerchantError::Ledger(e.to_string()))
    }

    /// Books a provider report against the outstanding demand for its period.
    pub fn apply_settlement(&self, report: &SettlementReport) -> Result<SettlementSummary, MerchantError> {
        if report.provider_id != self.provider_id || !report.verify(&self.registry).unwrap_or(false) {
            tracing::error!(period = %period_key(&report.period), "settlement report failed verification");
            return Err(MerchantError::BadReportSignature);
        }
        let key = period_key(&report.period);
        let mut inner = self.lock();
        if report.merchant_id != self.id() {
            return Err(MerchantError::UnknownPeriod(key));
        }
        let Some(demanded) = inner.state.demands.get(&key).cloned() else {
            return Err(MerchantError::UnknownPeriod(key));
        };
        if let Some(done) = inner.state.settlements.get(&key) {
            return Ok(done.clone());
        }
        let mut warnings = Vec::new();
        let mut settled = Vec::new();
        let mut own_total = Money::ZERO;
        for txn_id in &report.matched {
            match inner.state.get(txn_id) {
                Some(r) if demanded.contains(txn_id) && r.state == TxnState::Captured => {
                    own_total = own_total.checked_add(r.amount).unwrap_or(own_total);
                    settled.push(txn_id.clone());
                }
                _ => warnings.push(format!("report matches {txn_id}, which this demand did not list")),
            }
        }
        if own_total != report.matched_total {
            warnings.push(format!(
                "matched total {} but ledger amounts sum to {own_total}",
                report.matched_total
            ));
        }
        match compute_fee(report.matched_total, report.fee_rate_bp) {
            Ok((fee, payout)) if fee == report.fee && payout == report.payout => {}
            _ => warnings.push("fee or payout does not follow from the matched total".into()),
        }
        for w in &warnings {
            tracing::warn!(period = %key, "{w}");
        }
        let summary = SettlementSummary {
            period: report.period,
            demanded: demanded.len() as u64,
            settled: settled.len() as u64,
            matched_total: report.matched_total,
            fee: report.fee,
            payout: report.payout,
            fee_rate_bp: report.fee_rate_bp,
            discrepancies: report.discrepancies.clone(),
            warnings,
        };
        inner
            .commit(
                LedgerEntry::Settle {
                    summary: summary.clone(),
                    settled,
                },
                self.opts.snapshot_every,
            )
            .map_err(MerchantError::Ledger)?;
        Ok(summary)
    }

    fn relay<T: Serialize, R: serde::de::DeserializeOwned>(
        &self,
        kind: MessageType,
        body: &T,
        reply_kind: MessageType,
    ) -> Result<R, MerchantError> {
        let nonce = self.fresh_nonce("x");
        let reply = self.call(kind, body, &nonce).map_err(|e| match e {
            CallError::Unreachable(s) => MerchantError::ProviderUnreachable(s),
            CallError::BadSignature(s) => MerchantError::BadProviderSignature(s),
            CallError::Protocol(s) => MerchantError::ProviderProtocol(s),
        })?;
        if let Some(err) = Self::error_body(&reply) {
            return Err(MerchantError::Rejected(err.code, err.detail));
        }
        reply
            .expect(reply_kind)
            .and_then(|r| r.body_as())
            .map_err(|e| MerchantError::ProviderProtocol(e.to_string()))
    }

    /// Sends the demand for `period` and books the provider's report.
    pub fn settle(&self, period: Period) -> Result<SettlementSummary, MerchantError> {
        let demand = self.build_demand(period)?;
        let report: SettlementReport = self.relay(MessageType::SettleDemand, &demand, MessageType::SettleReport)?;
        self.apply_settlement(&report)
    }

    /// Relays a card activation to the provider.
    pub fn activate(&self, req: &ActivateRequest) -> Result<(), MerchantError> {
        let _: prepaid_core::messages::ActivateAck =
            self.relay(MessageType::Activate, req, MessageType::ActivateAck)?;
        Ok(())
    }

    pub fn balance(&self, req: &BalanceRequest) -> Result<Money, MerchantError> {
        let reply: BalanceReply = self.relay(MessageType::Balance, req, MessageType::BalanceReply)?;
        Ok(reply.available)
    }
}
