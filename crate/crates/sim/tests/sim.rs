use prepaid_core::{verify_record, Money, RecordVerdict};
use prepaid_sim::tamper::{flip_bit, SIGNED_FIELDS};
use prepaid_sim::{check_conservation, run_simulation, run_stress, Bench, SimConfig, SimError, StressConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn small() -> SimConfig {
    SimConfig {
        num_cards: 20,
        num_customers: 10,
        num_purchases: 400,
        denominations: vec![1_000, 5_000, 20_000],
        price_min: 100,
        price_max: 1_500,
        ..SimConfig::default()
    }
}

fn fault_free() -> SimConfig {
    SimConfig {
        drop_pct: 0,
        duplicate_pct: 0,
        reorder_pct: 0,
        wrong_password_pct: 0,
        ..small()
    }
}

/// Cards large enough that every purchase goes through.
fn rich() -> SimConfig {
    SimConfig {
        denominations: vec![100_000],
        price_max: 500,
        ..fault_free()
    }
}

#[test]
fn same_seed_same_bytes() {
    let a = run_simulation(&small()).unwrap();
    let b = run_simulation(&small()).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let c = run_simulation(&SimConfig { seed: 7, ..small() }).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
    assert!(a.passed() && c.passed(), "{:#?}", a.checks);
}

#[test]
fn honest_run_pays_out_everything_spent() {
    let cfg = SimConfig {
        num_purchases: 100,
        fee_rate_bp: 0,
        ..rich()
    };
    let r = run_simulation(&cfg).unwrap();
    assert!(r.passed(), "{:#?}", r.checks);
    assert_eq!(r.outcomes.captured, 100);
    assert_eq!(r.totals.spent, r.totals.payouts);
    assert_eq!(r.totals.fees, Money::ZERO);
    assert_eq!(
        r.totals.remaining.minor(),
        r.totals.issued.minor() - r.totals.spent.minor()
    );
    assert_eq!(r.discrepancies.values().sum::<u64>(), 0);
    assert_eq!(r.totals.undemanded, Money::ZERO);
}

#[test]
fn total_message_loss_spends_nothing() {
    let r = run_simulation(&SimConfig {
        drop_pct: 100,
        ..small()
    })
    .unwrap();
    assert!(r.passed(), "{:#?}", r.checks);
    assert_eq!(r.outcomes.captured, 0);
    assert_eq!(r.outcomes.unreachable, r.outcomes.attempted);
    assert_eq!(r.totals.remaining, r.totals.issued);
    assert_eq!(r.totals.held, Money::ZERO);
    assert!(r.settlements.iter().all(|s| s.demanded == 0));
}

#[test]
fn lost_capture_replies_are_parked_not_lost() {
    let r = run_simulation(&SimConfig {
        drop_pct: 20,
        duplicate_pct: 0,
        reorder_pct: 0,
        ..small()
    })
    .unwrap();
    assert!(r.passed(), "{:#?}", r.checks);
    assert_eq!(r.conservation_residual, 0);
    assert!(r.faults.dropped_replies > 0);
    assert!(r.totals.undemanded > Money::ZERO);
}

#[test]
fn conservation_detects_a_corrupted_balance() {
    let bench = Bench::new(&rich()).unwrap();
    for i in 0..10 {
        bench.checkout(i, i % bench.items.len()).unwrap();
    }
    let mut state = bench.provider().unwrap().with_state(|s| s.clone());
    assert!(check_conservation(&state, &[]).holds());
    let card = state.cards.values_mut().next().unwrap();
    card.balance = Money::from_minor(card.balance.minor() - 37);
    assert_eq!(check_conservation(&state, &[]).residual, 37);
}

#[test]
fn crashes_do_not_change_the_outcome() {
    let plain = run_simulation(&fault_free()).unwrap();
    let crashing = run_simulation(&SimConfig {
        provider_crash_points: (1..=20).collect(),
        ..fault_free()
    })
    .unwrap();
    assert!(crashing.passed(), "{:#?}", crashing.checks);
    assert_eq!(crashing.crashes, 20);
    assert_eq!(crashing.totals, plain.totals);
    assert_eq!(crashing.outcomes, plain.outcomes);
}

#[test]
fn config_file_round_trip_and_validation() {
    let cfg = small();
    assert_eq!(SimConfig::from_bytes(&cfg.to_bytes()).unwrap(), cfg);
    let pretty = String::from_utf8(cfg.to_bytes()).unwrap().replace(',', ", ");
    assert!(matches!(
        SimConfig::from_bytes(pretty.as_bytes()),
        Err(SimError::ConfigInvalid(_))
    ));
    for bad in [
        SimConfig {
            drop_pct: 101,
            ..small()
        },
        SimConfig {
            denominations: vec![99],
            ..small()
        },
        SimConfig {
            num_customers: 21,
            ..small()
        },
        SimConfig {
            settlement_periods: 0,
            ..small()
        },
        SimConfig {
            price_min: 0,
            ..small()
        },
    ] {
        assert!(matches!(run_simulation(&bad), Err(SimError::ConfigInvalid(_))));
    }
}

#[test]
fn periods_cover_the_run() {
    let cfg = SimConfig {
        num_purchases: 10,
        tick_secs: 1,
        settlement_periods: 3,
        ..small()
    };
    let p = cfg.periods();
    assert_eq!(p.len(), 3);
    assert_eq!(p[0].start, cfg.start_time);
    assert!(p.windows(2).all(|w| w[0].end == w[1].start));
    assert!(p[2].end >= cfg.start_time + 10);
}

#[test]
fn every_signed_field_breaks_the_signatures() {
    let bench = Bench::new(&rich()).unwrap();
    bench.checkout(0, 0).unwrap();
    let record = bench.merchant.with_ledger(|l| l.records[0].clone());
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for field in SIGNED_FIELDS {
        for _ in 0..20 {
            let mut r = record.clone();
            flip_bit(&mut r, field, &mut rng);
            assert_ne!(r, record);
            assert!(
                !matches!(verify_record(&r, bench.provider_registry()), Ok(RecordVerdict::Valid)),
                "{field}"
            );
        }
    }
}

#[test]
fn small_stress_run() {
    let r = run_stress(&StressConfig {
        threads: 4,
        card_balance: 500,
        request_amount: 100,
        workers: 8,
        rounds: 2,
    })
    .unwrap();
    assert_eq!(r.attempts, 16);
    assert_eq!(r.captures, 5);
    assert_eq!(r.final_balance, Money::ZERO);
    assert!(r.passed(), "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn safe_under_any_fault_mix(
        seed in 0u64..1_000_000,
        drop_pct in 0u32..30,
        duplicate_pct in 0u32..30,
        reorder_pct in 0u32..30,
        crash in proptest::option::of(1u64..20),
    ) {
        let cfg = SimConfig {
            seed,
            drop_pct,
            duplicate_pct,
            reorder_pct,
            num_purchases: 200,
            provider_crash_points: crash.into_iter().collect(),
            ..small()
        };
        let r = run_simulation(&cfg).unwrap();
        prop_assert!(r.passed(), "{:#?}", r.checks);
        prop_assert_eq!(r.conservation_residual, 0);
        prop_assert_eq!(r.double_spends, 0);
    }
}
