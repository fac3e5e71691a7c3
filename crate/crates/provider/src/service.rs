use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};

use prepaid_core::card::{card_ref, generate_salt, password_hash, PasswordHash, MIN_PASSWORD_LEN};
use prepaid_core::issuance::CardBatch;
use prepaid_core::messages::{ActivateRequest, BalanceRequest, CaptureRequest, ErrorCode};
use prepaid_core::record::txn_id_for;
use prepaid_core::settlement::{emit_report, reconcile, SettlementError, UndemandedEntry, DEFAULT_FEE_RATE_BP};
use prepaid_core::{
    canonical, AuthorizationDecision, CaptureConfirm, Card, CardNumber, CardState, Clock, CreditRequest, Journal,
    KeyRegistry, Money, SettlementDemand, SettlementReport, Signature, TransactionRecord, TxnState, Verdict,
    REQUEST_WINDOW_SECS,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::state::{Entry, Hold, HoldOutcome, JournalLine, ProviderState};

pub const DEFAULT_HOLD_TTL: i64 = 900;

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub hold_ttl: i64,
    pub fee_rate_bp: u32,
    /// Accepted distance, in seconds, between a request timestamp and now.
    pub request_window: i64,
    /// Write a snapshot after this many journal entries; 0 disables.
    pub snapshot_every: u64,
    /// Seeds password salts. Only the simulation sets this.
    pub rng_seed: Option<[u8; 32]>,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            hold_ttl: DEFAULT_HOLD_TTL,
            fee_rate_bp: DEFAULT_FEE_RATE_BP,
            request_window: REQUEST_WINDOW_SECS,
            snapshot_every: 5000,
            rng_seed: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("unknown card")]
    UnknownCard,
    #[error("secret does not match")]
    SecretMismatch,
    #[error("card already activated")]
    AlreadyActivated,
    #[error("password must have at least {MIN_PASSWORD_LEN} characters")]
    WeakPassword,
    #[error("authentication failed")]
    AuthFailure,
    #[error("unknown hold")]
    UnknownHold,
    #[error("hold expired")]
    HoldExpired,
    #[error("record does not match the hold: {0}")]
    RecordMismatch(String),
    #[error("merchant signature does not verify")]
    BadMerchantSignature,
    #[error("unknown merchant {0:?}")]
    UnknownMerchant(String),
    #[error("malformed settlement demand: {0}")]
    MalformedDemand(String),
    #[error("{0} card numbers already loaded, first {1}")]
    DuplicateCardNumber(usize, String),
    #[error("batch is for provider {0:?}")]
    WrongProvider(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("journal failure: {0}")]
    Journal(String),
    #[error("journal replay failed: {0}")]
    Recovery(String),
    #[error("settlement: {0}")]
    Settlement(#[from] SettlementError),
}

impl ProviderError {
    pub fn code(&self) -> ErrorCode {
        match self {
            Self::UnknownCard => ErrorCode::UnknownCard,
            Self::SecretMismatch => ErrorCode::SecretMismatch,
            Self::AlreadyActivated => ErrorCode::AlreadyActivated,
            Self::WeakPassword => ErrorCode::WeakPassword,
            Self::AuthFailure => ErrorCode::AuthFailure,
            Self::UnknownHold => ErrorCode::UnknownHold,
            Self::HoldExpired => ErrorCode::HoldExpired,
            Self::RecordMismatch(_) => ErrorCode::RecordMismatch,
            Self::BadMerchantSignature => ErrorCode::BadMerchantSignature,
            Self::UnknownMerchant(_) => ErrorCode::UnknownMerchant,
            Self::MalformedDemand(_) => ErrorCode::MalformedDemand,
            _ => ErrorCode::Internal,
        }
    }
}

pub fn hold_id_for(provider_id: &str, merchant_id: &str, request_id: &str) -> String {
    let d = Sha256::digest(format!("hold:v1:{provider_id}:{merchant_id}:{request_id}").as_bytes());
    format!("h-{}", &hex::encode(d)[..24])
}

struct Inner {
    state: ProviderState,
    journal: Box<dyn Journal>,
    since_snapshot: u64,
    /// Set after a failed append; the service then refuses all mutations.
    journal_failed: bool,
    /// Declined decisions by (merchant, request id). They change no state,
    /// so they are remembered for idempotent replies but not journaled.
    declines: HashMap<(String, String), AuthorizationDecision>,
    rng: ChaCha20Rng,
}

impl Inner {
    fn commit(&mut self, entry: Entry, snapshot_every: u64) -> Result<(), ProviderError> {
        if self.journal_failed {
            return Err(ProviderError::Journal(
                "journal unavailable after an earlier failure".into(),
            ));
        }
        let line = JournalLine {
            seq: self.state.seq + 1,
            entry,
        };
        let bytes = canonical::to_bytes(&line).map_err(|e| ProviderError::Journal(e.to_string()))?;
        if let Err(e) = self.journal.append(&bytes) {
            self.journal_failed = true;
            tracing::error!(error = %e, "journal append failed");
            return Err(ProviderError::Journal(e.to_string()));
        }
        self.state.apply(&line);
        self.since_snapshot += 1;
        if snapshot_every > 0 && self.since_snapshot >= snapshot_every {
            self.snapshot();
        }
        Ok(())
    }

    fn snapshot(&mut self) {
        match self.journal.write_snapshot(&self.state.to_snapshot()) {
            Ok(()) => self.since_snapshot = 0,
            // The log still holds every entry, so this only costs replay time.
            Err(e) => tracing::warn!(error = %e, "snapshot failed"),
        }
    }
}

/// The card provider: sold-cards database, holds, captures, replicas and
/// settlement. All mutations are journaled before they take effect.
pub struct Provider {
    registry: KeyRegistry,
    clock: Arc<dyn Clock>,
    opts: ServiceOptions,
    inner: Mutex<Inner>,
}

fn replay(journal: &mut dyn Journal) -> Result<ProviderState, ProviderError> {
    let (snapshot, lines) = journal.load().map_err(|e| ProviderError::Recovery(e.to_string()))?;
    let mut state = match snapshot {
        Some(bytes) => ProviderState::from_snapshot(&bytes).map_err(|e| ProviderError::Recovery(e.to_string()))?,
        None => ProviderState::default(),
    };
    for (i, raw) in lines.iter().enumerate() {
        let line: JournalLine =
            canonical::from_bytes(raw).map_err(|e| ProviderError::Recovery(format!("line {}: {e}", i + 1)))?;
        if line.seq <= state.seq {
            continue;
        }
        if line.seq != state.seq + 1 {
            return Err(ProviderError::Recovery(format!(
                "sequence gap: expected {}, found {}",
                state.seq + 1,
                line.seq
            )));
        }
        state.apply(&line);
    }
    Ok(state)
}

impl Provider {
    /// Opens the provider over `journal`, replaying whatever it holds.
    pub fn open(
        registry: KeyRegistry,
        clock: Arc<dyn Clock>,
        opts: ServiceOptions,
        mut journal: Box<dyn Journal>,
    ) -> Result<Self, ProviderError> {
        if registry.signing_key().is_none() {
            return Err(ProviderError::Recovery("provider registry has no signing key".into()));
        }
        let state = replay(journal.as_mut())?;
        let rng = match opts.rng_seed {
            Some(seed) => ChaCha20Rng::from_seed(seed),
            None => ChaCha20Rng::from_entropy(),
        };
        Ok(Self {
            registry,
            clock,
            opts,
            inner: Mutex::new(Inner {
                state,
                journal,
                since_snapshot: 0,
                journal_failed: false,
                declines: HashMap::new(),
                rng,
            }),
        })
    }

    pub fn id(&self) -> &str {
        self.registry.own_id()
    }

    pub fn registry(&self) -> &KeyRegistry {
        &self.registry
    }

    pub fn options(&self) -> &ServiceOptions {
        &self.opts
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // A panic while holding the lock cannot leave a half-applied entry:
        // apply runs after the journal write and does not fail.
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Read access to the current state.
    pub fn with_state<R>(&self, f: impl FnOnce(&ProviderState) -> R) -> R {
        f(&self.lock().state)
    }

    pub fn state_snapshot(&self) -> Vec<u8> {
        self.lock().state.to_snapshot()
    }

    /// Forces a snapshot now.
    pub fn checkpoint(&self) {
        self.lock().snapshot();
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let inner = self.lock();
        let s = &inner.state;
        s.check_card_invariants()?;
        let mut sums: HashMap<&str, Money> = HashMap::new();
        for h in s.holds.values() {
            let e = sums.entry(h.card_number.as_str()).or_default();
            *e = e.checked_add(h.amount).ok_or("hold sum overflow")?;
        }
        for (card, total) in &s.held {
            if sums.get(card.as_str()) != Some(total) {
                return Err(format!("{card}: hold index out of sync"));
            }
        }
        if sums.len() != s.held.len() {
            return Err("hold index misses a card".into());
        }
        Ok(())
    }

    /// Ingests an issued batch. All-or-nothing: if any card number is
    /// already present the store is left unchanged.
    pub fn load_cards(&self, batch: &CardBatch) -> Result<usize, ProviderError> {
        if batch.provider_id != self.id() {
            return Err(ProviderError::WrongProvider(batch.provider_id.clone()));
        }
        batch
            .validate()
            .map_err(|e| ProviderError::InvalidBatch(e.to_string()))?;
        let cards: Vec<Card> = batch
            .cards
            .iter()
            .map(|c| Card::issued(c.card_number.clone(), &batch.provider_id, &c.secret, batch.denomination))
            .collect();
        let mut inner = self.lock();
        let dups: Vec<&str> = cards
            .iter()
            .map(|c| c.card_number.as_str())
            .filter(|n| inner.state.cards.contains_key(*n))
            .collect();
        if let Some(first) = dups.first() {
            return Err(ProviderError::DuplicateCardNumber(dups.len(), first.to_string()));
        }
        let n = cards.len();
        if n > 0 {
            inner.commit(Entry::LoadCards { cards }, self.opts.snapshot_every)?;
        }
        Ok(n)
    }

    pub fn activate_card(&self, req: &ActivateRequest) -> Result<(), ProviderError> {
        let mut inner = self.lock();
        let card = inner
            .state
            .cards
            .get(&req.card_number)
            .ok_or(ProviderError::UnknownCard)?;
        if !card.secret_matches(&req.secret) {
            return Err(ProviderError::SecretMismatch);
        }
        if card.state != CardState::Issued {
            return Err(ProviderError::AlreadyActivated);
        }
        if req.new_password.chars().count() < MIN_PASSWORD_LEN {
            return Err(ProviderError::WeakPassword);
        }
        let salt = generate_salt(&mut inner.rng);
        let password = PasswordHash {
            hash: password_hash(&salt, &req.new_password),
            salt,
        };
        inner.commit(
            Entry::Activate {
                card_number: req.card_number.clone(),
                password,
            },
            self.opts.snapshot_every,
        )
    }

    /// Available balance: balance minus active holds.
    pub fn balance_inquiry(&self, req: &BalanceRequest) -> Result<Money, ProviderError> {
        let inner = self.lock();
        let card = inner
            .state
            .cards
            .get(&req.card_number)
            .ok_or(ProviderError::AuthFailure)?;
        let usable = matches!(card.state, CardState::Activated | CardState::Exhausted);
        if !(usable & card.credentials_match(&req.secret, &req.password)) {
            return Err(ProviderError::AuthFailure);
        }
        Ok(inner.state.available(&req.card_number).unwrap_or(Money::ZERO))
    }

    fn screen(&self, sender: &str, req: &CreditRequest, now: i64) -> Option<Verdict> {
        let malformed = req.amount.is_zero()
            || req.request_id.is_empty()
            || req.item_id.is_empty()
            || req.merchant_id != sender
            || req.provider_id != self.id()
            || (req.timestamp - now).abs() > self.opts.request_window;
        if malformed {
            return Some(Verdict::InvalidRequest);
        }
        CardNumber::parse(&req.card_number, Some(self.id()))
            .is_err()
            .then_some(Verdict::InvalidRequest)
    }

    /// Checks availability and, if the card can pay, places a hold. A
    /// request id seen before gets its original decision back.
    pub fn authorize(&self, sender: &str, req: &CreditRequest) -> Result<AuthorizationDecision, ProviderError> {
        let now = self.now();
        let mut inner = self.lock();
        if let Some(d) = inner.state.decision(sender, &req.request_id) {
            return Ok(d.clone());
        }
        let key = (sender.to_string(), req.request_id.clone());
        if let Some(d) = inner.declines.get(&key) {
            return Ok(d.clone());
        }
        let verdict = self.screen(sender, req, now).or_else(|| {
            let card = inner.state.cards.get(&req.card_number);
            let usable = card.is_some_and(|c| matches!(c.state, CardState::Activated | CardState::Exhausted));
            let creds = card.is_some_and(|c| c.credentials_match(&req.secret, &req.password));
            if !(usable & creds) {
                return Some(Verdict::AuthFailure);
            }
            let available = inner.state.available(&req.card_number).unwrap_or(Money::ZERO);
            (available < req.amount).then_some(Verdict::InsufficientFunds)
        });
        if let Some(verdict) = verdict {
            let d = AuthorizationDecision::declined(&req.request_id, verdict, now);
            inner.declines.insert(key, d.clone());
            return Ok(d);
        }
        let hold_id = hold_id_for(self.id(), sender, &req.request_id);
        let expiry = now + self.opts.hold_ttl;
        let decision = AuthorizationDecision {
            request_id: req.request_id.clone(),
            verdict: Verdict::Available,
            hold_id: Some(hold_id.clone()),
            hold_expiry: Some(expiry),
            decided_at: now,
        };
        let hold = Hold {
            hold_id,
            card_number: req.card_number.clone(),
            amount: req.amount,
            request_id: req.request_id.clone(),
            merchant_id: sender.to_string(),
            item_id: req.item_id.clone(),
            created_at: now,
            expiry,
        };
        inner.commit(
            Entry::PlaceHold {
                hold,
                decision: decision.clone(),
            },
            self.opts.snapshot_every,
        )?;
        Ok(decision)
    }

    fn record_mismatch(&self, hold: &Hold, r: &TransactionRecord, now: i64) -> Option<String> {
        let checks: [(bool, &str); 10] = [
            (r.amount == hold.amount, "amount"),
            (r.merchant_id == hold.merchant_id, "merchant_id"),
            (r.request_id == hold.request_id, "request_id"),
            (r.item_id == hold.item_id, "item_id"),
            (r.provider_id == self.id(), "provider_id"),
            (r.card_ref == card_ref(&hold.card_number), "card_ref"),
            (r.txn_id == txn_id_for(&hold.merchant_id, &hold.request_id), "txn_id"),
            (r.state == TxnState::Authorized, "state"),
            (r.provider_sig.is_none(), "provider_sig"),
            ((r.timestamp - now).abs() <= self.opts.request_window, "timestamp"),
        ];
        checks.iter().find(|(ok, _)| !ok).map(|(_, f)| format!("{f} differs"))
    }

    /// Countersigns the merchant's record and permanently debits the card.
    /// Returns the confirm and the capture time; a repeated capture of the
    /// same hold returns the original pair.
    pub fn capture(&self, sender: &str, req: &CaptureRequest) -> Result<(CaptureConfirm, i64), ProviderError> {
        // Signature work happens before taking the lock.
        let payload = req.record.signed_payload();
        let merchant_sig_ok = match &req.record.merchant_sig {
            Some(sig) => self
                .registry
                .verify(&req.record.merchant_id, &payload, sig)
                .unwrap_or(false),
            None => false,
        };
        let provider_sig: Signature = self
            .registry
            .sign(&payload)
            .map_err(|e| ProviderError::Journal(e.to_string()))?;

        let now = self.now();
        let mut inner = self.lock();
        match inner.state.finished_holds.get(&req.hold_id) {
            Some(HoldOutcome::Captured { confirm, at }) if confirm.record.merchant_id == sender => {
                return Ok((confirm.clone(), *at));
            }
            Some(HoldOutcome::Captured { .. }) => return Err(ProviderError::UnknownHold),
            Some(HoldOutcome::Released { .. }) => return Err(ProviderError::HoldExpired),
            None => {}
        }
        let hold = match inner.state.holds.get(&req.hold_id) {
            Some(h) if h.merchant_id == sender => h.clone(),
            _ => return Err(ProviderError::UnknownHold),
        };
        if now > hold.expiry {
            inner.commit(
                Entry::ReleaseHold {
                    hold_id: hold.hold_id.clone(),
                    at: now,
                },
                self.opts.snapshot_every,
            )?;
            return Err(ProviderError::HoldExpired);
        }
        if let Some(why) = self.record_mismatch(&hold, &req.record, now) {
            return Err(ProviderError::RecordMismatch(why));
        }
        if !merchant_sig_ok {
            tracing::warn!(hold = %hold.hold_id, merchant = sender, "capture with bad merchant signature");
            return Err(ProviderError::BadMerchantSignature);
        }
        if inner.state.replicas.get(&req.record.txn_id).is_some() {
            return Err(ProviderError::RecordMismatch("txn_id already captured".into()));
        }
        let mut record = req.record.clone();
        record.state = TxnState::Captured;
        record.provider_sig = Some(provider_sig);
        let confirm = CaptureConfirm {
            hold_id: hold.hold_id.clone(),
            record,
        };
        inner.commit(
            Entry::Capture {
                hold_id: hold.hold_id,
                confirm: confirm.clone(),
                at: now,
            },
            self.opts.snapshot_every,
        )?;
        Ok((confirm, now))
    }

    /// Releases every hold whose expiry is before `now`.
    pub fn expire_holds(&self, now: i64) -> Result<usize, ProviderError> {
        let mut inner = self.lock();
        let due: Vec<String> = inner
            .state
            .holds
            .values()
            .filter(|h| h.expiry < now)
            .map(|h| h.hold_id.clone())
            .collect();
        for hold_id in &due {
            inner.commit(
                Entry::ReleaseHold {
                    hold_id: hold_id.clone(),
                    at: now,
                },
                self.opts.snapshot_every,
            )?;
        }
        Ok(due.len())
    }

    fn is_merchant(&self, party: &str) -> bool {
        party != self.id() && self.registry.is_registered(party)
    }

    /// Reconciles a merchant's demand against the replicas and signs the
    /// report. A period that was already settled returns the stored report.
    pub fn handle_settlement(
        &self,
        sender: &str,
        demand: &SettlementDemand,
    ) -> Result<SettlementReport, ProviderError> {
        if !self.is_merchant(sender) || demand.merchant_id != sender {
            return Err(ProviderError::UnknownMerchant(demand.merchant_id.clone()));
        }
        if demand.period.end < demand.period.start {
            return Err(ProviderError::MalformedDemand("period ends before it starts".into()));
        }
        if !demand.verify(&self.registry).unwrap_or(false) {
            return Err(ProviderError::MalformedDemand(
                "demand signature does not verify".into(),
            ));
        }
        let now = self.now();
        let mut inner = self.lock();
        if let Some(report) = inner.state.report(sender, &demand.period) {
            return Ok(report.clone());
        }
        if demand.period.end > now {
            return Err(ProviderError::MalformedDemand("period has not ended".into()));
        }
        let recon = reconcile(demand, &inner.state.replicas, &self.registry);
        let demanded: BTreeSet<&str> = demand.records.iter().map(|r| r.txn_id.as_str()).collect();
        let undemanded = inner
            .state
            .replicas
            .iter()
            .filter(|r| {
                r.merchant_id == sender
                    && r.state == TxnState::Captured
                    && demand.period.contains(r.timestamp)
                    && !demanded.contains(r.txn_id.as_str())
            })
            .map(|r| UndemandedEntry {
                txn_id: r.txn_id.clone(),
                amount: r.amount,
            })
            .collect();
        let report = emit_report(
            sender,
            demand.period,
            &recon,
            undemanded,
            self.opts.fee_rate_bp,
            &self.registry,
        )?;
        inner.commit(Entry::Settle { report: report.clone() }, self.opts.snapshot_every)?;
        Ok(report)
    }
}
