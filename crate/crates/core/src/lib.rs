//! Core types for a two-party prepaid card payment system.
//!
//! A card provider sells stored-value cards and answers credit requests; a
//! merchant charges those cards directly, without an intermediary
//! processor. Both parties sign every captured transaction record and
//! reconcile at the end of each settlement period.

pub mod canonical;
pub mod card;
pub mod clock;
pub mod issuance;
pub mod journal;
pub mod keys;
pub mod lifecycle;
pub mod messages;
pub mod money;
pub mod record;
pub mod settlement;

pub use canonical::{CanonicalError, Value};
pub use card::{Card, CardNumber, CardState};
pub use clock::{Clock, ManualClock, SystemClock};
pub use journal::{FileJournal, Journal, Loaded, MemJournal};
pub use keys::{KeyError, KeyRegistry, Signature};
pub use lifecycle::{next_state, TxnEvent, TxnState};
pub use messages::{
    AuthorizationDecision, CaptureConfirm, CaptureRequest, CreditRequest, Envelope, MessageType, Verdict,
};
pub use money::Money;
pub use record::{make_payment_statement, sign_record, verify_record, RecordVerdict, TransactionRecord};
pub use settlement::{
    compute_fee, emit_report, reconcile, Discrepancy, DiscrepancyKind, Period, SettlementDemand, SettlementReport,
};

/// Default window, in seconds, within which a request timestamp is accepted.
pub const REQUEST_WINDOW_SECS: i64 = 300;
