mod common;

use common::*;
use prepaid_core::messages::{ActivateRequest, BalanceRequest};
use prepaid_core::{verify_record, CardState, Money, Period, RecordVerdict, SettlementDemand, TxnState, Verdict};
use prepaid_provider::{ProviderError, ServiceOptions};

#[test]
fn activation_paths() {
    let f = fixture();
    let b = batch(1000, 2, b"act", 1);
    f.provider.load_cards(&b).unwrap();
    let card = &b.cards[0];
    let req = |secret: &str, pw: &str| ActivateRequest {
        card_number: card.card_number.as_str().into(),
        secret: secret.into(),
        new_password: pw.into(),
    };

    assert!(matches!(
        f.provider.activate_card(&req("WRONGWRONGWRONGWRONGWRONGW", "abcd")),
        Err(ProviderError::SecretMismatch)
    ));
    let state = f.provider.with_state(|s| s.cards[card.card_number.as_str()].state);
    assert_eq!(state, CardState::Issued);

    assert!(matches!(
        f.provider.activate_card(&req(&card.secret, "abc")),
        Err(ProviderError::WeakPassword)
    ));
    f.provider.activate_card(&req(&card.secret, "abcd")).unwrap();
    let state = f.provider.with_state(|s| s.cards[card.card_number.as_str()].state);
    assert_eq!(state, CardState::Activated);
    assert!(matches!(
        f.provider.activate_card(&req(&card.secret, "efgh")),
        Err(ProviderError::AlreadyActivated)
    ));

    let unknown = ActivateRequest {
        card_number: "4021999999999999".into(),
        secret: card.secret.clone(),
        new_password: "abcd".into(),
    };
    assert!(matches!(
        f.provider.activate_card(&unknown),
        Err(ProviderError::UnknownCard)
    ));
}

#[test]
fn authorize_places_hold_and_is_idempotent() {
    let f = fixture();
    let cards = active_cards(&f.provider, 5000, 1, 1);
    let req = credit(&cards[0], "r-1", 2000, T0);
    let d = f.provider.authorize(MERCHANT, &req).unwrap();
    assert_eq!(d.verdict, Verdict::Available);
    assert!(d.is_well_formed());
    assert_eq!(d.hold_expiry, Some(T0 + 900));
    assert_eq!(available(&f.provider, &cards[0].0), 3000);

    // Resubmission: same decision, no second hold, even after time moves.
    f.clock.advance(10);
    let again = f.provider.authorize(MERCHANT, &req).unwrap();
    assert_eq!(again, d);
    assert_eq!(available(&f.provider, &cards[0].0), 3000);
    assert_eq!(f.provider.with_state(|s| s.holds.len()), 1);
}

#[test]
fn authorize_declines() {
    let f = fixture();
    let small = active_cards(&f.provider, 100, 1, 1);
    let big = active_cards(&f.provider, 5000, 1, 2);
    let seq_before = f.provider.with_state(|s| s.seq);

    let d = f
        .provider
        .authorize(MERCHANT, &credit(&small[0], "r-1", 200, T0))
        .unwrap();
    assert_eq!(d.verdict, Verdict::InsufficientFunds);
    assert!(d.hold_id.is_none());
    assert_eq!(available(&f.provider, &small[0].0), 100);

    let d = f.provider.authorize(MERCHANT, &credit(&big[0], "r-2", 0, T0)).unwrap();
    assert_eq!(d.verdict, Verdict::InvalidRequest);

    let d = f
        .provider
        .authorize(MERCHANT, &credit(&big[0], "r-3", 100, T0 - 301))
        .unwrap();
    assert_eq!(d.verdict, Verdict::InvalidRequest);

    let mut wrong_pw = credit(&big[0], "r-4", 100, T0);
    wrong_pw.password = "nope".into();
    assert_eq!(
        f.provider.authorize(MERCHANT, &wrong_pw).unwrap().verdict,
        Verdict::AuthFailure
    );

    let mut unknown = credit(&big[0], "r-5", 100, T0);
    unknown.card_number = prepaid_core::CardNumber::build(PROVIDER, 777).unwrap().as_str().into();
    assert_eq!(
        f.provider.authorize(MERCHANT, &unknown).unwrap().verdict,
        Verdict::AuthFailure
    );

    let mut other_merchant = credit(&big[0], "r-6", 100, T0);
    other_merchant.merchant_id = "someone".into();
    assert_eq!(
        f.provider.authorize(MERCHANT, &other_merchant).unwrap().verdict,
        Verdict::InvalidRequest
    );

    // Declines journal nothing.
    assert_eq!(f.provider.with_state(|s| s.seq), seq_before);

    // Issued but never activated.
    let b = batch(1000, 1, b"fresh", 3);
    f.provider.load_cards(&b).unwrap();
    let fresh = (b.cards[0].card_number.as_str().to_string(), b.cards[0].secret.clone());
    assert_eq!(
        f.provider
            .authorize(MERCHANT, &credit(&fresh, "r-7", 100, T0))
            .unwrap()
            .verdict,
        Verdict::AuthFailure
    );
    assert_eq!(available(&f.provider, &big[0].0), 5000);
}

#[test]
fn capture_countersigns_and_debits() {
    let f = fixture();
    let cards = active_cards(&f.provider, 5000, 1, 1);
    let req = credit(&cards[0], "r-1", 2000, T0);
    let d = f.provider.authorize(MERCHANT, &req).unwrap();
    let cap = capture_req(&d, &req, &f.merchant);
    let (confirm, at) = f.provider.capture(MERCHANT, &cap).unwrap();
    assert_eq!(at, T0);
    assert_eq!(confirm.record.state, TxnState::Captured);
    assert_eq!(
        verify_record(&confirm.record, &f.merchant).unwrap(),
        RecordVerdict::Valid
    );
    assert_eq!(
        verify_record(&confirm.record, &provider_registry()).unwrap(),
        RecordVerdict::Valid
    );

    f.provider.with_state(|s| {
        let card = &s.cards[&cards[0].0];
        assert_eq!(card.balance, Money::from_minor(3000));
        assert!(s.holds.is_empty());
        assert_eq!(s.replicas.get(&confirm.record.txn_id), Some(&confirm.record));
    });

    // A duplicate capture returns the original confirm.
    f.clock.advance(5);
    let (again, at2) = f.provider.capture(MERCHANT, &cap).unwrap();
    assert_eq!(again, confirm);
    assert_eq!(at2, at);
    assert_eq!(available(&f.provider, &cards[0].0), 3000);
    f.provider.check_invariants().unwrap();
}

#[test]
fn capture_after_expiry_restores_funds() {
    let f = fixture_with(ServiceOptions {
        hold_ttl: 60,
        ..options()
    });
    let cards = active_cards(&f.provider, 5000, 1, 1);
    let req = credit(&cards[0], "r-1", 2000, T0);
    let d = f.provider.authorize(MERCHANT, &req).unwrap();
    f.clock.advance(61);
    let cap = capture_req(&d, &req, &f.merchant);
    assert!(matches!(
        f.provider.capture(MERCHANT, &cap),
        Err(ProviderError::HoldExpired)
    ));
    assert_eq!(available(&f.provider, &cards[0].0), 5000);
    // Released holds stay uncapturable.
    assert!(matches!(
        f.provider.capture(MERCHANT, &cap),
        Err(ProviderError::HoldExpired)
    ));
    f.provider.check_invariants().unwrap();
}

#[test]
fn capture_rejects_mismatch_and_bad_signature() {
    let f = fixture();
    let cards = active_cards(&f.provider, 5000, 1, 1);
    let req = credit(&cards[0], "r-1", 2000, T0);
    let d = f.provider.authorize(MERCHANT, &req).unwrap();

    let mut cheaper = req.clone();
    cheaper.amount = Money::from_minor(1999);
    let mut cap = capture_req(&d, &cheaper, &f.merchant);
    assert!(matches!(
        f.provider.capture(MERCHANT, &cap),
        Err(ProviderError::RecordMismatch(_))
    ));
    assert_eq!(f.provider.with_state(|s| s.holds.len()), 1);
    assert_eq!(available(&f.provider, &cards[0].0), 3000);

    cap = capture_req(&d, &req, &f.merchant);
    cap.record.merchant_sig = Some(cap.record.merchant_sig.unwrap().with_bit_flipped(3));
    assert!(matches!(
        f.provider.capture(MERCHANT, &cap),
        Err(ProviderError::BadMerchantSignature)
    ));

    cap = capture_req(&d, &req, &f.merchant);
    cap.hold_id = "h-nothing".into();
    assert!(matches!(
        f.provider.capture(MERCHANT, &cap),
        Err(ProviderError::UnknownHold)
    ));

    // The hold survives all of that and still captures.
    let cap = capture_req(&d, &req, &f.merchant);
    f.provider.capture(MERCHANT, &cap).unwrap();
}

#[test]
fn expire_holds_boundaries() {
    let f = fixture_with(ServiceOptions {
        hold_ttl: 100,
        ..options()
    });
    assert_eq!(f.provider.expire_holds(T0).unwrap(), 0);
    let cards = active_cards(&f.provider, 1000, 1, 1);
    f.provider
        .authorize(MERCHANT, &credit(&cards[0], "r-1", 300, T0))
        .unwrap();
    let t = T0 + 100;
    assert_eq!(f.provider.expire_holds(t).unwrap(), 0);
    assert_eq!(f.provider.expire_holds(t + 1).unwrap(), 1);
    assert_eq!(available(&f.provider, &cards[0].0), 1000);
}

#[test]
fn balance_inquiry_paths() {
    let f = fixture();
    let cards = active_cards(&f.provider, 1000, 1, 1);
    let ask = |pw: &str| BalanceRequest {
        card_number: cards[0].0.clone(),
        secret: cards[0].1.clone(),
        password: pw.into(),
    };
    assert_eq!(
        f.provider.balance_inquiry(&ask(PASSWORD)).unwrap(),
        Money::from_minor(1000)
    );
    f.provider
        .authorize(MERCHANT, &credit(&cards[0], "r-1", 300, T0))
        .unwrap();
    assert_eq!(
        f.provider.balance_inquiry(&ask(PASSWORD)).unwrap(),
        Money::from_minor(700)
    );
    assert!(matches!(
        f.provider.balance_inquiry(&ask("wrong")),
        Err(ProviderError::AuthFailure)
    ));
}

#[test]
fn load_same_batch_twice_is_rejected_whole() {
    let f = fixture();
    let b = batch(500, 5, b"dup", 4);
    assert_eq!(f.provider.load_cards(&b).unwrap(), 5);
    let before = f.provider.state_snapshot();
    match f.provider.load_cards(&b) {
        Err(ProviderError::DuplicateCardNumber(n, _)) => assert_eq!(n, 5),
        other => panic!("expected duplicates, got {other:?}"),
    }
    assert_eq!(f.provider.state_snapshot(), before);
}

#[test]
fn settlement_wrapper() {
    let f = fixture();
    let period = Period::new(T0 - 1000, T0);
    let empty = SettlementDemand {
        merchant_id: MERCHANT.into(),
        period,
        records: vec![],
        demand_sig: None,
    }
    .sign(&f.merchant)
    .unwrap();
    let report = f.provider.handle_settlement(MERCHANT, &empty).unwrap();
    assert_eq!(report.payout, Money::ZERO);
    assert_eq!(report.matched_total, Money::ZERO);
    assert!(report.verify(&f.merchant).unwrap());

    // Replayed period: identical bytes.
    let again = f.provider.handle_settlement(MERCHANT, &empty).unwrap();
    assert_eq!(again.to_canonical(), report.to_canonical());

    let stranger = SettlementDemand {
        merchant_id: "stranger".into(),
        ..empty.clone()
    };
    assert!(matches!(
        f.provider.handle_settlement("stranger", &stranger),
        Err(ProviderError::UnknownMerchant(_))
    ));

    let mut unsigned = empty.clone();
    unsigned.period = Period::new(T0 - 2000, T0 - 1000);
    assert!(matches!(
        f.provider.handle_settlement(MERCHANT, &unsigned),
        Err(ProviderError::MalformedDemand(_))
    ));
}

#[test]
fn settlement_marks_matched_and_lists_undemanded() {
    let f = fixture();
    let cards = active_cards(&f.provider, 5000, 1, 1);
    let mut records = vec![];
    for i in 0..3 {
        let req = credit(&cards[0], &format!("r-{i}"), 100 * (i + 1), T0);
        let d = f.provider.authorize(MERCHANT, &req).unwrap();
        records.push(
            f.provider
                .capture(MERCHANT, &capture_req(&d, &req, &f.merchant))
                .unwrap()
                .0
                .record,
        );
    }
    f.clock.advance(10);
    let demand = SettlementDemand {
        merchant_id: MERCHANT.into(),
        period: Period::new(T0, T0 + 1),
        records: records[..2].to_vec(),
        demand_sig: None,
    }
    .sign(&f.merchant)
    .unwrap();
    let report = f.provider.handle_settlement(MERCHANT, &demand).unwrap();
    assert_eq!(report.matched.len(), 2);
    assert_eq!(report.matched_total, Money::from_minor(300));
    assert_eq!(report.fee, Money::from_minor(3));
    assert_eq!(report.undemanded.len(), 1);
    assert_eq!(report.undemanded[0].txn_id, records[2].txn_id);
    f.provider.with_state(|s| {
        assert_eq!(s.replicas.get(&records[0].txn_id).unwrap().state, TxnState::Settled);
        assert_eq!(s.replicas.get(&records[2].txn_id).unwrap().state, TxnState::Captured);
    });
}

#[test]
fn settlement_rejects_open_period() {
    let f = fixture();
    let demand = SettlementDemand {
        merchant_id: MERCHANT.into(),
        period: Period::new(T0, T0 + 10),
        records: vec![],
        demand_sig: None,
    }
    .sign(&f.merchant)
    .unwrap();
    assert!(matches!(
        f.provider.handle_settlement(MERCHANT, &demand),
        Err(ProviderError::MalformedDemand(_))
    ));
}
