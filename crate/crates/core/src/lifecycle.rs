use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TxnState {
    Authorized,
    Captured,
    Voided,
    Settled,
    Declined,
}

impl TxnState {
    pub const ALL: [TxnState; 5] = [
        TxnState::Authorized,
        TxnState::Captured,
        TxnState::Voided,
        TxnState::Settled,
        TxnState::Declined,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxnEvent {
    AuthorizeOk,
    AuthorizeFail,
    Capture,
    Void,
    Expire,
    Settle,
}

impl TxnEvent {
    pub const ALL: [TxnEvent; 6] = [
        TxnEvent::AuthorizeOk,
        TxnEvent::AuthorizeFail,
        TxnEvent::Capture,
        TxnEvent::Void,
        TxnEvent::Expire,
        TxnEvent::Settle,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal transition: {event:?} in state {state:?}")]
pub struct IllegalTransition {
    pub state: TxnState,
    pub event: TxnEvent,
}

/// State a transaction enters when it is first decided.
pub fn initial_state(event: TxnEvent) -> Option<TxnState> {
    match event {
        TxnEvent::AuthorizeOk => Some(TxnState::Authorized),
        TxnEvent::AuthorizeFail => Some(TxnState::Declined),
        _ => None,
    }
}

pub fn next_state(state: TxnState, event: TxnEvent) -> Result<TxnState, IllegalTransition> {
    use TxnEvent as E;
    use TxnState as S;
    match (state, event) {
        (S::Authorized, E::Capture) => Ok(S::Captured),
        (S::Authorized, E::Void | E::Expire) => Ok(S::Voided),
        (S::Captured, E::Settle) => Ok(S::Settled),
        _ => Err(IllegalTransition { state, event }),
    }
}
