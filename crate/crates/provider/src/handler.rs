//! Envelope dispatch: turns one request line into one reply line.

use std::sync::Arc;

use prepaid_core::messages::{
    ActivateAck, ActivateRequest, BalanceReply, BalanceRequest, CaptureRequest, ErrorCode, ErrorReply, MessageType,
};
use prepaid_core::{AuthorizationDecision, CreditRequest, Envelope, SettlementDemand, Value, Verdict};
use prepaid_wire::Handler;
use serde::Serialize;

use crate::service::{Provider, ProviderError};

fn error_reply(code: ErrorCode, detail: impl Into<String>) -> (MessageType, ErrorReply) {
    (
        MessageType::Error,
        ErrorReply {
            code,
            detail: detail.into(),
        },
    )
}

/// Request id from a body that failed to parse, when there is one.
fn salvage_request_id(body: &Value) -> Option<String> {
    match body {
        Value::Map(m) => match m.get("request_id") {
            Some(Value::Str(s)) => Some(s.clone()),
            _ => None,
        },
        _ => None,
    }
}

impl Provider {
    fn seal<T: Serialize>(&self, kind: MessageType, body: &T, nonce: &str, ts: i64) -> Envelope {
        Envelope::seal(kind, body, nonce, ts, self.registry()).expect("provider holds its own signing key")
    }

    fn seal_error(&self, err: &ProviderError, nonce: &str) -> Envelope {
        // Decline details stay on the provider side for credential failures.
        let detail = match err {
            ProviderError::Journal(_) | ProviderError::Recovery(_) => "internal error".to_string(),
            e => e.to_string(),
        };
        let (kind, body) = error_reply(err.code(), detail);
        self.seal(kind, &body, nonce, self.now())
    }

    /// Handles one verified-or-not envelope. `peer` is the party the
    /// transport authenticated, if any.
    pub fn handle_envelope(&self, peer: Option<&str>, env: &Envelope) -> Envelope {
        let nonce = env.nonce.as_str();
        let bad = |detail: String| {
            let (kind, body) = error_reply(ErrorCode::BadEnvelope, detail);
            self.seal(kind, &body, nonce, self.now())
        };
        if let Err(e) = env.verify(self.registry()) {
            tracing::warn!(sender = %env.sender_id, error = %e, "rejected envelope");
            return bad(e.to_string());
        }
        let sender = env.sender_id.as_str();
        if sender == self.id() {
            return bad("sender is this provider".into());
        }
        if let Some(p) = peer {
            if p != sender {
                tracing::warn!(peer = p, sender, "envelope sender differs from channel peer");
                return bad("sender does not match the channel peer".into());
            }
        }
        match env.kind {
            MessageType::CreditRequest => match env.body_as::<CreditRequest>() {
                Ok(req) => match self.authorize(sender, &req) {
                    Ok(d) => {
                        if d.verdict != Verdict::Available {
                            tracing::info!(request = %d.request_id, verdict = ?d.verdict, "declined");
                        }
                        self.seal(MessageType::AuthDecision, &d, nonce, d.decided_at)
                    }
                    Err(e) => self.seal_error(&e, nonce),
                },
                Err(e) => match salvage_request_id(&env.body) {
                    Some(rid) => {
                        let d = AuthorizationDecision::declined(&rid, Verdict::InvalidRequest, self.now());
                        self.seal(MessageType::AuthDecision, &d, nonce, d.decided_at)
                    }
                    None => bad(e.to_string()),
                },
            },
            MessageType::Capture => match env.body_as::<CaptureRequest>() {
                Ok(req) => match self.capture(sender, &req) {
                    Ok((confirm, at)) => self.seal(MessageType::CaptureConfirm, &confirm, nonce, at),
                    Err(e) => self.seal_error(&e, nonce),
                },
                Err(e) => bad(e.to_string()),
            },
            MessageType::Activate => match env.body_as::<ActivateRequest>() {
                Ok(req) => match self.activate_card(&req) {
                    Ok(()) => self.seal(
                        MessageType::ActivateAck,
                        &ActivateAck {
                            card_number: req.card_number,
                        },
                        nonce,
                        self.now(),
                    ),
                    Err(e) => self.seal_error(&e, nonce),
                },
                Err(e) => bad(e.to_string()),
            },
            MessageType::Balance => match env.body_as::<BalanceRequest>() {
                Ok(req) => match self.balance_inquiry(&req) {
                    Ok(available) => self.seal(
                        MessageType::BalanceReply,
                        &BalanceReply { available },
                        nonce,
                        self.now(),
                    ),
                    Err(e) => self.seal_error(&e, nonce),
                },
                Err(e) => bad(e.to_string()),
            },
            MessageType::SettleDemand => match env.body_as::<SettlementDemand>() {
                Ok(demand) => match self.handle_settlement(sender, &demand) {
                    Ok(report) => self.seal(MessageType::SettleReport, &report, nonce, self.now()),
                    Err(e) => self.seal_error(&e, nonce),
                },
                Err(e) => self.seal_error(&ProviderError::MalformedDemand(e.to_string()), nonce),
            },
            other => bad(format!("{other:?} is not a request")),
        }
    }

    /// Wire entry point: one request line in, one reply line out.
    pub fn handle_line(&self, peer: Option<&str>, line: &[u8]) -> Vec<u8> {
        match Envelope::from_line(line) {
            Ok(env) => self.handle_envelope(peer, &env).to_line(),
            Err(e) => {
                let (kind, body) = error_reply(ErrorCode::BadEnvelope, e.to_string());
                self.seal(kind, &body, "", self.now()).to_line()
            }
        }
    }
}

/// Adapts a provider to the wire server.
pub fn wire_handler(provider: Arc<Provider>) -> Handler {
    Arc::new(move |peer, line| provider.handle_line(peer, line))
}
