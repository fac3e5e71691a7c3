mod common;

use std::net::TcpListener;
use std::sync::{Arc, Barrier};
use std::thread;

use common::*;
use prepaid_core::keys::test_signing_key;
use prepaid_core::messages::{BalanceReply, BalanceRequest, ErrorCode, ErrorReply, MessageType};
use prepaid_core::{AuthorizationDecision, CaptureConfirm, Envelope, KeyRegistry, ManualClock, Verdict};
use prepaid_provider::{wire_handler, Provider};
use prepaid_wire::{ProviderLink, TcpLink, Transport};

fn seal<T: serde::Serialize>(kind: MessageType, body: &T, nonce: &str, reg: &KeyRegistry) -> Envelope {
    Envelope::seal(kind, body, nonce, T0, reg).unwrap()
}

#[test]
fn replies_are_byte_identical_on_replay() {
    let f = fixture();
    let cards = active_cards(&f.provider, 1000, 1, 1);
    let req = credit(&cards[0], "r-1", 250, T0);
    let env = seal(MessageType::CreditRequest, &req, "n-1", &f.merchant);

    let first = f.provider.handle_line(Some(MERCHANT), &env.to_line());
    f.clock.advance(3);
    let second = f.provider.handle_line(Some(MERCHANT), &env.to_line());
    assert_eq!(first, second);

    let reply = Envelope::from_line(&first).unwrap();
    reply.verify(&f.merchant).unwrap();
    let d: AuthorizationDecision = reply.expect(MessageType::AuthDecision).unwrap().body_as().unwrap();
    assert_eq!(d.verdict, Verdict::Available);

    let cap = seal(
        MessageType::Capture,
        &capture_req(&d, &req, &f.merchant),
        "n-2",
        &f.merchant,
    );
    let c1 = f.provider.handle_line(Some(MERCHANT), &cap.to_line());
    f.clock.advance(3);
    let c2 = f.provider.handle_line(Some(MERCHANT), &cap.to_line());
    assert_eq!(c1, c2);
    let confirm: CaptureConfirm = Envelope::from_line(&c1).unwrap().body_as().unwrap();
    assert_eq!(confirm.record.amount.minor(), 250);
    assert_eq!(available(&f.provider, &cards[0].0), 750);
}

fn error_code(line: &[u8]) -> ErrorCode {
    let env = Envelope::from_line(line).unwrap();
    env.expect(MessageType::Error)
        .unwrap()
        .body_as::<ErrorReply>()
        .unwrap()
        .code
}

#[test]
fn bad_envelopes_are_refused() {
    let f = fixture();
    let cards = active_cards(&f.provider, 1000, 1, 1);
    let req = credit(&cards[0], "r-1", 250, T0);

    assert_eq!(
        error_code(&f.provider.handle_line(None, b"{not json")),
        ErrorCode::BadEnvelope
    );

    let mut env = seal(MessageType::CreditRequest, &req, "n", &f.merchant);
    env.sig = env.sig.with_bit_flipped(0);
    assert_eq!(
        error_code(&f.provider.handle_line(None, &env.to_line())),
        ErrorCode::BadEnvelope
    );

    let stranger = KeyRegistry::new("stranger", test_signing_key("stranger"));
    let env = seal(MessageType::CreditRequest, &req, "n", &stranger);
    assert_eq!(
        error_code(&f.provider.handle_line(None, &env.to_line())),
        ErrorCode::BadEnvelope
    );

    // Authenticated channel peer must be the envelope sender.
    let env = seal(MessageType::CreditRequest, &req, "n", &f.merchant);
    assert_eq!(
        error_code(&f.provider.handle_line(Some("other"), &env.to_line())),
        ErrorCode::BadEnvelope
    );

    // Replies are not requests.
    let env = seal(
        MessageType::BalanceReply,
        &BalanceReply {
            available: prepaid_core::Money::ZERO,
        },
        "n",
        &f.merchant,
    );
    assert_eq!(
        error_code(&f.provider.handle_line(None, &env.to_line())),
        ErrorCode::BadEnvelope
    );

    assert_eq!(available(&f.provider, &cards[0].0), 1000);
}

#[test]
fn malformed_credit_request_with_request_id_gets_invalid_request() {
    let f = fixture();
    let body = serde_json::json!({"request_id": "r-9", "amount": "lots"});
    let env = seal(MessageType::CreditRequest, &body, "n", &f.merchant);
    let reply = Envelope::from_line(&f.provider.handle_line(None, &env.to_line())).unwrap();
    let d: AuthorizationDecision = reply.expect(MessageType::AuthDecision).unwrap().body_as().unwrap();
    assert_eq!(d.verdict, Verdict::InvalidRequest);
    assert_eq!(d.request_id, "r-9");
}

#[test]
fn secure_transport_end_to_end() {
    let f = fixture();
    let cards = active_cards(&f.provider, 1000, 1, 1);
    let provider = Arc::new(f.provider);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let server = prepaid_wire::spawn(
        listener,
        Transport::Secure(provider_registry()),
        wire_handler(provider.clone()),
        4,
    )
    .unwrap();
    let link = TcpLink::new(
        server.local_addr().to_string(),
        PROVIDER,
        Transport::Secure(f.merchant.clone()),
    );
    let ask = BalanceRequest {
        card_number: cards[0].0.clone(),
        secret: cards[0].1.clone(),
        password: PASSWORD.into(),
    };
    let reply = link
        .exchange(&seal(MessageType::Balance, &ask, "b", &f.merchant))
        .unwrap();
    reply.verify(&f.merchant).unwrap();
    assert_eq!(reply.body_as::<BalanceReply>().unwrap().available.minor(), 1000);
}

#[test]
fn concurrent_requests_never_overspend() {
    let clock = ManualClock::new(T0);
    let disk = prepaid_core::MemJournal::new();
    let provider: Arc<Provider> = Arc::new(open_on(&disk, &clock, options()));
    let cards = active_cards(&provider, 1000, 1, 1);
    let merchant = merchant_registry();
    let workers = 32;
    let barrier = Arc::new(Barrier::new(workers));
    let handles: Vec<_> = (0..workers)
        .map(|w| {
            let (provider, barrier, card, merchant) =
                (provider.clone(), barrier.clone(), cards[0].clone(), merchant.clone());
            thread::spawn(move || {
                barrier.wait();
                let req = credit(&card, &format!("w-{w}"), 100, T0);
                let d = provider.authorize(MERCHANT, &req).unwrap();
                if d.verdict == Verdict::Available {
                    provider.capture(MERCHANT, &capture_req(&d, &req, &merchant)).unwrap();
                    1
                } else {
                    assert_eq!(d.verdict, Verdict::InsufficientFunds);
                    0
                }
            })
        })
        .collect();
    let captured: u32 = handles.into_iter().map(|h| h.join().unwrap()).sum();
    assert_eq!(captured, 10);
    provider.with_state(|s| {
        assert_eq!(s.cards[&cards[0].0].balance.minor(), 0);
        assert_eq!(s.negative_balance_events, 0);
    });
    provider.check_invariants().unwrap();
}
