//! The deterministic simulation loop and its end-of-run checks.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use prepaid_core::{canonical, Clock, DiscrepancyKind, Money, Period, TxnState};
use prepaid_merchant::{CheckoutError, DeclineReason, SettlementSummary};
use prepaid_provider::ProviderState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bench::Bench;
use crate::config::{SimConfig, SimError};
use crate::link::{CaptureEvent, FaultCounts, FaultRates};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub issued: Money,
    /// Everything the provider captured.
    pub spent: Money,
    pub remaining: Money,
    pub held: Money,
    pub payouts: Money,
    pub fees: Money,
    /// Captured by the provider but never settled.
    pub undemanded: Money,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcomes {
    pub attempted: u64,
    pub captured: u64,
    pub insufficient_funds: u64,
    pub auth_failure: u64,
    pub invalid_request: u64,
    pub unreachable: u64,
    pub capture_rejected: u64,
    pub protocol_error: u64,
    pub bad_signature: u64,
    pub ledger_error: u64,
}

impl Outcomes {
    fn tally(&mut self, result: &Result<prepaid_merchant::Receipt, CheckoutError>) {
        self.attempted += 1;
        let slot = match result {
            Ok(_) => &mut self.captured,
            Err(CheckoutError::PaymentDeclined(DeclineReason::InsufficientFunds)) => &mut self.insufficient_funds,
            Err(CheckoutError::PaymentDeclined(DeclineReason::AuthFailure)) => &mut self.auth_failure,
            Err(CheckoutError::PaymentDeclined(DeclineReason::InvalidRequest)) => &mut self.invalid_request,
            Err(CheckoutError::ProviderUnreachable(_)) => &mut self.unreachable,
            Err(CheckoutError::CaptureRejected(_)) => &mut self.capture_rejected,
            Err(CheckoutError::BadProviderSignature(_)) => &mut self.bad_signature,
            Err(CheckoutError::Ledger(_)) => &mut self.ledger_error,
            Err(_) => &mut self.protocol_error,
        };
        *slot += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodOutcome {
    pub period: Period,
    pub demanded: u64,
    pub settled: u64,
    pub matched_total: Money,
    pub fee: Money,
    pub payout: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub totals: Totals,
    pub outcomes: Outcomes,
    pub faults: FaultCounts,
    pub crashes: u64,
    pub discrepancies: BTreeMap<String, u64>,
    pub settlements: Vec<PeriodOutcome>,
    pub conservation_residual: i64,
    pub double_spends: u64,
    pub checks: Vec<Check>,
    /// Not part of the report bytes, which depend on the config alone.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl SimReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = canonical::to_bytes(self).expect("report is encodable");
        b.push(b'\n');
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conservation {
    pub issued: Money,
    /// Issued value minus everything accounted for, in minor units.
    pub residual: i64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.residual == 0
    }
}

/// issued = remaining balances + payouts + fees + captured-but-unsettled.
pub fn check_conservation(state: &ProviderState, settlements: &[SettlementSummary]) -> Conservation {
    let sum = |it: &mut dyn Iterator<Item = Money>| it.map(|m| i128::from(m.minor())).sum::<i128>();
    let issued = sum(&mut state.cards.values().map(|c| c.denomination));
    let remaining = sum(&mut state.cards.values().map(|c| c.balance));
    let paid = sum(&mut settlements.iter().flat_map(|s| [s.payout, s.fee]));
    let undemanded = sum(&mut state
        .replicas
        .iter()
        .filter(|r| r.state == TxnState::Captured)
        .map(|r| r.amount));
    let residual = issued - remaining - paid - undemanded;
    Conservation {
        issued: Money::from_minor(u64::try_from(issued).unwrap_or(u64::MAX)),
        residual: i64::try_from(residual).unwrap_or(if residual < 0 { i64::MIN } else { i64::MAX }),
    }
}

fn kind_name(kind: DiscrepancyKind) -> String {
    match canonical::to_value(&kind) {
        Ok(canonical::Value::Str(s)) => s,
        _ => format!("{kind:?}"),
    }
}

/// Runs the whole scenario: issuance, activation, purchases under faults,
/// hold expiry and settlement, then checks the books.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimReport, SimError> {
    let started = Instant::now();
    let bench = Bench::new(cfg)?;
    let mut rng = ChaCha20Rng::from_seed(cfg.derive_seed("purchases"));
    let periods = cfg.periods();
    let crash_points: BTreeSet<u64> = cfg.provider_crash_points.iter().copied().collect();
    let nc = cfg.num_customers as usize;
    let num_cards = bench.cards.len();

    let mut outcomes = Outcomes::default();
    let mut summaries: Vec<SettlementSummary> = Vec::new();
    let mut settle_errors: Vec<String> = Vec::new();
    let mut crashes = 0u64;
    let mut recoveries_ok = 0u64;
    let mut next_period = 0usize;
    let mut next_sweep = cfg.start_time + cfg.expiry_sweep_secs;

    let settle =
        |p: Period, summaries: &mut Vec<SettlementSummary>, errors: &mut Vec<String>| match bench.merchant.settle(p) {
            Ok(s) => summaries.push(s),
            Err(e) => errors.push(format!("{}..{}: {e}", p.start, p.end)),
        };
    let sweep = |now: i64| -> Result<(), SimError> {
        if let Some(p) = bench.provider() {
            p.expire_holds(now)
                .map_err(|e| SimError::Setup(format!("expiry sweep: {e}")))?;
        }
        Ok(())
    };

    bench.link.set_faults(FaultRates {
        drop_pct: cfg.drop_pct,
        duplicate_pct: cfg.duplicate_pct,
        reorder_pct: cfg.reorder_pct,
    });
    for _ in 0..cfg.num_purchases {
        let customer = rng.gen_range(0..nc);
        let owned = (num_cards - customer).div_ceil(nc);
        let card = customer + nc * rng.gen_range(0..owned);
        let item = rng.gen_range(0..bench.items.len());
        let wrong = rng.gen_range(0..100) < cfg.wrong_password_pct;
        let result = bench.merchant.checkout(&bench.request(card, item, wrong));
        outcomes.tally(&result);

        if let Ok(receipt) = &result {
            if crash_points.contains(&outcomes.captured) {
                crashes += 1;
                let before = bench.crash_provider().map(|p| p.state_snapshot());
                let p = bench.restart_provider()?;
                let acknowledged = p.with_state(|s| s.replicas.get(&receipt.txn_id).is_some());
                if before.as_deref() == Some(p.state_snapshot().as_slice()) && acknowledged {
                    recoveries_ok += 1;
                }
            }
        }

        let now = bench.clock.advance(cfg.tick_secs);
        while now >= next_sweep {
            sweep(now)?;
            next_sweep += cfg.expiry_sweep_secs;
        }
        while next_period < periods.len() && periods[next_period].end <= now {
            settle(periods[next_period], &mut summaries, &mut settle_errors);
            next_period += 1;
        }
    }

    bench.link.flush();
    bench.link.disable_faults();
    bench.clock.advance(cfg.hold_ttl + 1);
    if let Some(last) = periods.last() {
        if bench.clock.now() < last.end {
            bench.clock.set(last.end);
        }
    }
    sweep(bench.clock.now())?;
    for &p in &periods[next_period..] {
        settle(p, &mut summaries, &mut settle_errors);
    }

    let provider = bench
        .provider()
        .ok_or_else(|| SimError::Setup("provider offline at end of run".into()))?;
    let state = provider.with_state(|s| s.clone());
    let events = bench.link.capture_events();
    let faults = bench.link.counts();

    let conservation = check_conservation(&state, &summaries);
    let payouts: Money = summaries.iter().map(|s| s.payout).sum();
    let fees: Money = summaries.iter().map(|s| s.fee).sum();
    let totals = Totals {
        issued: conservation.issued,
        spent: state.replicas.iter().map(|r| r.amount).sum(),
        remaining: state.cards.values().map(|c| c.balance).sum(),
        held: state.held.values().copied().sum(),
        payouts,
        fees,
        undemanded: state
            .replicas
            .iter()
            .filter(|r| r.state == TxnState::Captured)
            .map(|r| r.amount)
            .sum(),
    };

    let mut discrepancies: BTreeMap<String, u64> = DiscrepancyKind::ALL.iter().map(|&k| (kind_name(k), 0)).collect();
    for d in summaries.iter().flat_map(|s| &s.discrepancies) {
        *discrepancies.entry(kind_name(d.kind)).or_default() += 1;
    }
    let discrepancy_total: u64 = discrepancies.values().sum();
    let warnings: usize = summaries.iter().map(|s| s.warnings.len()).sum();

    let (reference, double_spends) = reference_check(&bench, &events, &state, &totals, outcomes.captured);

    let mut checks = vec![
        check(
            "conservation",
            conservation.holds(),
            format!("residual {} minor units", conservation.residual),
        ),
        reference,
        check(
            "no_double_spend",
            double_spends == 0,
            format!("{double_spends} violations"),
        ),
        match bench.merchant.check_ledger() {
            Ok(()) => check("merchant_ledger", true, "every entry dual-signed and unique"),
            Err(e) => check("merchant_ledger", false, e),
        },
        match provider.check_invariants() {
            Ok(()) => check("provider_invariants", true, "balances and holds consistent"),
            Err(e) => check("provider_invariants", false, e),
        },
        check(
            "holds_cleared",
            state.holds.is_empty() && totals.held.is_zero(),
            format!("{} holds open", state.holds.len()),
        ),
        check(
            "settlement_clean",
            discrepancy_total == 0 && warnings == 0 && settle_errors.is_empty() && summaries.len() == periods.len(),
            if settle_errors.is_empty() {
                format!(
                    "{} periods, {discrepancy_total} discrepancies, {warnings} warnings",
                    summaries.len()
                )
            } else {
                settle_errors.join("; ")
            },
        ),
        check(
            "duplicates_answered_identically",
            faults.replay_mismatches == 0,
            format!("{} of {} differed", faults.replay_mismatches, faults.duplicated),
        ),
    ];
    if crashes > 0 {
        checks.push(check(
            "crash_recovery",
            recoveries_ok == crashes,
            format!("{recoveries_ok} of {crashes} recoveries reproduced the acknowledged state"),
        ));
    }

    Ok(SimReport {
        seed: cfg.seed,
        totals,
        outcomes,
        faults,
        crashes,
        discrepancies,
        settlements: summaries
            .iter()
            .map(|s| PeriodOutcome {
                period: s.period,
                demanded: s.demanded,
                settled: s.settled,
                matched_total: s.matched_total,
                fee: s.fee,
                payout: s.payout,
            })
            .collect(),
        conservation_residual: conservation.residual,
        double_spends,
        checks,
        wall_clock: started.elapsed(),
    })
}

/// Rebuilds per-card spending from the provider's capture replies alone and
/// compares it with the provider's balances and the merchant's ledger.
fn reference_check(
    bench: &Bench,
    events: &[CaptureEvent],
    state: &ProviderState,
    totals: &Totals,
    acknowledged: u64,
) -> (Check, u64) {
    let mut problems = Vec::new();
    let mut captured: BTreeMap<&str, &CaptureEvent> = BTreeMap::new();
    for e in events {
        if let Some(prev) = captured.insert(&e.txn_id, e) {
            if prev != e {
                problems.push(format!("{} confirmed with different content", e.txn_id));
            }
        }
    }
    let mut by_card: BTreeMap<&str, u128> = BTreeMap::new();
    for e in captured.values() {
        *by_card.entry(&e.card_ref).or_default() += u128::from(e.amount.minor());
    }

    let mut double_spends = state.negative_balance_events;
    for c in &bench.cards {
        let reference = by_card.get(c.card_ref.as_str()).copied().unwrap_or(0);
        if reference > u128::from(c.denomination.minor()) {
            double_spends += 1;
        }
        let balance = state.cards.get(&c.card_number).map_or(0, |s| s.balance.minor());
        if u128::from(balance) + reference != u128::from(c.denomination.minor()) {
            problems.push(format!(
                "card {} balance {balance} disagrees with the reference",
                c.card_ref
            ));
        }
    }
    let ref_spent: u128 = by_card.values().sum();
    if ref_spent != u128::from(totals.spent.minor()) {
        problems.push(format!("reference spent {ref_spent}, replicas {}", totals.spent));
    }

    let (ledger_len, settled_ids, distinct) = bench.merchant.with_ledger(|l| {
        let settled: BTreeSet<String> = l
            .records
            .iter()
            .filter(|r| r.state == TxnState::Settled)
            .map(|r| r.txn_id.clone())
            .collect();
        let distinct: BTreeSet<&str> = l.records.iter().map(|r| r.txn_id.as_str()).collect();
        let unknown = l
            .records
            .iter()
            .filter(|r| !captured.contains_key(r.txn_id.as_str()))
            .count();
        if unknown > 0 {
            problems.push(format!("{unknown} ledger records were never confirmed by the provider"));
        }
        (l.records.len(), settled, distinct.len())
    });
    double_spends += (ledger_len - distinct) as u64;
    if ledger_len as u64 != acknowledged {
        problems.push(format!(
            "{ledger_len} ledger records for {acknowledged} acknowledged checkouts"
        ));
    }
    let ref_settled: u128 = settled_ids
        .iter()
        .filter_map(|id| captured.get(id.as_str()))
        .map(|e| u128::from(e.amount.minor()))
        .sum();
    if ref_settled != u128::from(totals.payouts.minor() + totals.fees.minor()) {
        problems.push(format!(
            "settled records total {ref_settled}, payouts and fees {}",
            totals.payouts.minor() + totals.fees.minor()
        ));
    }
    if ref_spent - ref_settled.min(ref_spent) != u128::from(totals.undemanded.minor()) {
        problems.push(format!(
            "reference undemanded {}, replicas {}",
            ref_spent - ref_settled,
            totals.undemanded
        ));
    }

    let c = if problems.is_empty() {
        check(
            "reference_ledger",
            true,
            format!("{} confirmed captures agree with balances and ledger", captured.len()),
        )
    } else {
        check("reference_ledger", false, problems.join("; "))
    };
    (c, double_spends)
}
