//! Wire messages exchanged between the merchant and the provider, and the
//! signed envelope that carries them.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::canonical::{self, CanonicalError, Value};
use crate::keys::{KeyError, KeyRegistry, Signature};
use crate::money::Money;
use crate::record::{TransactionRecord, FORMAT_VERSION};

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serde_json::Value::from(self.clone()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let json = serde_json::Value::deserialize(d)?;
        Value::try_from(json).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreditRequest {
    pub request_id: String,
    pub provider_id: String,
    pub card_number: String,
    pub secret: String,
    pub password: String,
    pub amount: Money,
    pub merchant_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Available,
    InsufficientFunds,
    AuthFailure,
    InvalidRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationDecision {
    pub request_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_expiry: Option<i64>,
    /// Provider time at which the decision was made.
    pub decided_at: i64,
}

impl AuthorizationDecision {
    pub fn declined(request_id: &str, verdict: Verdict, now: i64) -> Self {
        debug_assert_ne!(verdict, Verdict::Available);
        Self {
            request_id: request_id.to_string(),
            verdict,
            hold_id: None,
            hold_expiry: None,
            decided_at: now,
        }
    }

    /// AVAILABLE exactly when a hold id is attached.
    pub fn is_well_formed(&self) -> bool {
        (self.verdict == Verdict::Available) == self.hold_id.is_some()
            && self.hold_id.is_some() == self.hold_expiry.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRequest {
    pub hold_id: String,
    pub record: TransactionRecord,
}

/// The provider-countersigned record returned after a capture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureConfirm {
    pub hold_id: String,
    pub record: TransactionRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivateRequest {
    pub card_number: String,
    pub secret: String,
    pub new_password: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivateAck {
    pub card_number: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceRequest {
    pub card_number: String,
    pub secret: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceReply {
    pub available: Money,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    UnknownCard,
    SecretMismatch,
    AlreadyActivated,
    WeakPassword,
    AuthFailure,
    UnknownHold,
    HoldExpired,
    RecordMismatch,
    BadMerchantSignature,
    UnknownMerchant,
    MalformedDemand,
    BadEnvelope,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub code: ErrorCode,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageType {
    Activate,
    CreditRequest,
    Capture,
    Balance,
    SettleDemand,
    ActivateAck,
    AuthDecision,
    CaptureConfirm,
    BalanceReply,
    SettleReport,
    Error,
}

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("envelope signature does not verify for {0}")]
    BadSignature(String),
    #[error("unsupported envelope version {0}")]
    Version(i64),
    #[error("expected a {expected:?} message, got {got:?}")]
    UnexpectedType { expected: MessageType, got: MessageType },
}

/// `{v, type, sender_id, nonce, ts, body, sig}`; `sig` covers the canonical
/// encoding of every other field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: i64,
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub sender_id: String,
    pub nonce: String,
    pub ts: i64,
    pub body: Value,
    pub sig: Signature,
}

#[derive(Serialize)]
struct Unsigned<'a> {
    v: i64,
    #[serde(rename = "type")]
    kind: MessageType,
    sender_id: &'a str,
    nonce: &'a str,
    ts: i64,
    body: &'a Value,
}

impl Envelope {
    pub fn seal<T: Serialize>(
        kind: MessageType,
        body: &T,
        nonce: impl Into<String>,
        ts: i64,
        signer: &KeyRegistry,
    ) -> Result<Self, EnvelopeError> {
        let body = canonical::to_value(body)?;
        let nonce = nonce.into();
        let unsigned = Unsigned {
            v: FORMAT_VERSION,
            kind,
            sender_id: signer.own_id(),
            nonce: &nonce,
            ts,
            body: &body,
        };
        let sig = signer.sign(&canonical::to_bytes(&unsigned)?)?;
        Ok(Envelope {
            v: FORMAT_VERSION,
            kind,
            sender_id: signer.own_id().to_string(),
            nonce,
            ts,
            body,
            sig,
        })
    }

    fn signed_bytes(&self) -> Result<Vec<u8>, CanonicalError> {
        canonical::to_bytes(&Unsigned {
            v: self.v,
            kind: self.kind,
            sender_id: &self.sender_id,
            nonce: &self.nonce,
            ts: self.ts,
            body: &self.body,
        })
    }

    /// Checks version, sender registration and signature.
    pub fn verify(&self, registry: &KeyRegistry) -> Result<(), EnvelopeError> {
        if self.v != FORMAT_VERSION {
            return Err(EnvelopeError::Version(self.v));
        }
        if registry.verify(&self.sender_id, &self.signed_bytes()?, &self.sig)? {
            Ok(())
        } else {
            Err(EnvelopeError::BadSignature(self.sender_id.clone()))
        }
    }

    pub fn body_as<T: DeserializeOwned>(&self) -> Result<T, EnvelopeError> {
        Ok(canonical::from_value(self.body.clone())?)
    }

    pub fn expect(&self, kind: MessageType) -> Result<&Self, EnvelopeError> {
        if self.kind == kind {
            Ok(self)
        } else {
            Err(EnvelopeError::UnexpectedType {
                expected: kind,
                got: self.kind,
            })
        }
    }

    /// One wire line, without the trailing newline.
    pub fn to_line(&self) -> Vec<u8> {
        canonical::to_bytes(self).expect("envelopes are always encodable")
    }

    pub fn from_line(line: &[u8]) -> Result<Self, EnvelopeError> {
        Ok(canonical::from_bytes(line)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::test_signing_key;

    fn pair() -> (KeyRegistry, KeyRegistry) {
        let m = test_signing_key("m");
        let p = test_signing_key("p");
        (
            KeyRegistry::new("m", m.clone()).with_peer("p", p.verifying_key()),
            KeyRegistry::new("p", p).with_peer("m", m.verifying_key()),
        )
    }

    #[test]
    fn envelope_round_trip_and_verify() {
        let (m, p) = pair();
        let body = BalanceRequest {
            card_number: "1".into(),
            secret: "s".into(),
            password: "pw".into(),
        };
        let env = Envelope::seal(MessageType::Balance, &body, "n1", 10, &m).unwrap();
        let line = env.to_line();
        assert!(!line.contains(&b'\n'));
        let back = Envelope::from_line(&line).unwrap();
        assert_eq!(back, env);
        back.verify(&p).unwrap();
        assert_eq!(back.body_as::<BalanceRequest>().unwrap(), body);
        assert!(back.expect(MessageType::Capture).is_err());
    }

    #[test]
    fn tampered_envelope_fails() {
        let (m, p) = pair();
        let mut env = Envelope::seal(
            MessageType::Balance,
            &BalanceReply {
                available: Money::from_minor(5),
            },
            "n",
            1,
            &m,
        )
        .unwrap();
        env.ts += 1;
        assert!(matches!(env.verify(&p), Err(EnvelopeError::BadSignature(_))));
    }

    #[test]
    fn unknown_sender_rejected() {
        let (_, p) = pair();
        let stranger = KeyRegistry::new("z", test_signing_key("z"));
        let env = Envelope::seal(
            MessageType::Balance,
            &ActivateAck {
                card_number: "1".into(),
            },
            "n",
            1,
            &stranger,
        )
        .unwrap();
        assert!(matches!(
            env.verify(&p),
            Err(EnvelopeError::Key(KeyError::UnknownParty(_)))
        ));
    }

    #[test]
    fn decision_shape() {
        let d = AuthorizationDecision::declined("r", Verdict::InsufficientFunds, 3);
        assert!(d.is_well_formed());
        let ok = AuthorizationDecision {
            request_id: "r".into(),
            verdict: Verdict::Available,
            hold_id: Some("h".into()),
            hold_expiry: Some(9),
            decided_at: 0,
        };
        assert!(ok.is_well_formed());
        assert_eq!(
            canonical::to_bytes(&d).unwrap(),
            br#"{"decided_at":3,"request_id":"r","verdict":"INSUFFICIENT_FUNDS"}"#
        );
    }
}
