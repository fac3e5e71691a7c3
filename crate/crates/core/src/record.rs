//! Transaction records and their dual signatures.
//!
//! The signed payload is the payment statement (time, amount, merchant,
//! item, card reference) extended with the identifiers that bind it to one
//! authorization. Signature fields and the lifecycle state are not part of
//! it: the state flag moves CAPTURED to SETTLED after both parties signed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::{self, Value};
use crate::keys::{KeyError, KeyRegistry, Signature};
use crate::lifecycle::TxnState;
use crate::money::Money;

pub const FORMAT_VERSION: i64 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("amount must be positive")]
    InvalidAmount,
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("signer {signer} is not a party to transaction {txn_id}")]
    NotAParty { signer: String, txn_id: String },
}

fn amount_value(amount: Money) -> Value {
    // Canonical integers are i64; card amounts are bounded far below that.
    Value::Int(i64::try_from(amount.minor()).expect("amount fits in i64"))
}

/// Canonical bytes of "at time T, paying Y to X for item Z" for one card.
pub fn make_payment_statement(
    timestamp: i64,
    amount: Money,
    merchant_id: &str,
    item_id: &str,
    card_ref: &str,
) -> Result<Vec<u8>, RecordError> {
    if amount.is_zero() {
        return Err(RecordError::InvalidAmount);
    }
    Ok(canonical::encode(&Value::Map(statement_fields(
        timestamp,
        amount,
        merchant_id,
        item_id,
        card_ref,
    ))))
}

fn statement_fields(
    timestamp: i64,
    amount: Money,
    merchant_id: &str,
    item_id: &str,
    card_ref: &str,
) -> BTreeMap<String, Value> {
    BTreeMap::from([
        ("v".to_string(), Value::Int(FORMAT_VERSION)),
        ("timestamp".to_string(), Value::Int(timestamp)),
        ("amount".to_string(), amount_value(amount)),
        ("merchant_id".to_string(), Value::Str(merchant_id.to_string())),
        ("item_id".to_string(), Value::Str(item_id.to_string())),
        ("card_ref".to_string(), Value::Str(card_ref.to_string())),
    ])
}

/// Transaction id the merchant assigns to the record for one request.
pub fn txn_id_for(merchant_id: &str, request_id: &str) -> String {
    let d = Sha256::digest(format!("txn:v1:{merchant_id}:{request_id}").as_bytes());
    format!("tx-{}", &hex::encode(d)[..24])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub txn_id: String,
    pub request_id: String,
    pub timestamp: i64,
    pub amount: Money,
    pub merchant_id: String,
    pub item_id: String,
    pub card_ref: String,
    pub provider_id: String,
    pub state: TxnState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merchant_sig: Option<Signature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_sig: Option<Signature>,
}

impl TransactionRecord {
    /// Canonical bytes covered by both signatures.
    pub fn signed_payload(&self) -> Vec<u8> {
        let mut fields = statement_fields(
            self.timestamp,
            self.amount,
            &self.merchant_id,
            &self.item_id,
            &self.card_ref,
        );
        fields.insert("txn_id".into(), Value::Str(self.txn_id.clone()));
        fields.insert("request_id".into(), Value::Str(self.request_id.clone()));
        fields.insert("provider_id".into(), Value::Str(self.provider_id.clone()));
        canonical::encode(&Value::Map(fields))
    }

    /// Fingerprint of the signed content plus both signatures; independent
    /// of the lifecycle flag.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.signed_payload());
        h.update(b"|m:");
        if let Some(s) = &self.merchant_sig {
            h.update(s.0);
        }
        h.update(b"|p:");
        if let Some(s) = &self.provider_sig {
            h.update(s.0);
        }
        hex::encode(h.finalize())
    }

    pub fn to_canonical(&self) -> Vec<u8> {
        canonical::to_bytes(self).expect("records are always encodable")
    }
}

/// Signs the record's payload as the registry's own party, which must be
/// the record's merchant or provider.
pub fn sign_record(record: &TransactionRecord, signer: &KeyRegistry) -> Result<Signature, RecordError> {
    let me = signer.own_id();
    if me != record.merchant_id && me != record.provider_id {
        return Err(RecordError::NotAParty {
            signer: me.to_string(),
            txn_id: record.txn_id.clone(),
        });
    }
    if record.amount.is_zero() {
        return Err(RecordError::InvalidAmount);
    }
    Ok(signer.sign(&record.signed_payload())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordVerdict {
    Valid,
    InvalidMerchantSig,
    InvalidProviderSig,
    MissingSig,
}

pub fn verify_record(record: &TransactionRecord, registry: &KeyRegistry) -> Result<RecordVerdict, KeyError> {
    let payload = record.signed_payload();
    if let Some(sig) = &record.merchant_sig {
        if !registry.verify(&record.merchant_id, &payload, sig)? {
            return Ok(RecordVerdict::InvalidMerchantSig);
        }
    }
    if let Some(sig) = &record.provider_sig {
        if !registry.verify(&record.provider_id, &payload, sig)? {
            return Ok(RecordVerdict::InvalidProviderSig);
        }
    }
    let needs_both = matches!(record.state, TxnState::Captured | TxnState::Settled);
    if needs_both && (record.merchant_sig.is_none() || record.provider_sig.is_none()) {
        return Ok(RecordVerdict::MissingSig);
    }
    Ok(RecordVerdict::Valid)
}
