//! Bit-level corruption of signed record fields.

use prepaid_core::{Money, TransactionRecord};
use rand::Rng;

/// Every field covered by the record signatures.
pub const SIGNED_FIELDS: [&str; 8] = [
    "txn_id",
    "request_id",
    "timestamp",
    "amount",
    "merchant_id",
    "item_id",
    "card_ref",
    "provider_id",
];

fn flip_in_string(s: &mut String, rng: &mut impl Rng) {
    let mut bytes = std::mem::take(s).into_bytes();
    if bytes.is_empty() {
        bytes.push(b'a');
    } else {
        let i = rng.gen_range(0..bytes.len());
        // Low seven bits only, so the text stays ASCII.
        bytes[i] ^= 1 << rng.gen_range(0..7);
    }
    *s = String::from_utf8(bytes).expect("ascii stays valid utf-8");
}

/// Flips one bit of `field`; nothing else changes.
pub fn flip_bit(record: &mut TransactionRecord, field: &str, rng: &mut impl Rng) {
    match field {
        "txn_id" => flip_in_string(&mut record.txn_id, rng),
        "request_id" => flip_in_string(&mut record.request_id, rng),
        "merchant_id" => flip_in_string(&mut record.merchant_id, rng),
        "item_id" => flip_in_string(&mut record.item_id, rng),
        "card_ref" => flip_in_string(&mut record.card_ref, rng),
        "provider_id" => flip_in_string(&mut record.provider_id, rng),
        "timestamp" => record.timestamp ^= 1 << rng.gen_range(0..62),
        "amount" => record.amount = Money::from_minor(record.amount.minor() ^ (1 << rng.gen_range(0..62))),
        other => panic!("{other} is not a signed field"),
    }
}

/// Flips one bit in a randomly chosen signed field; returns the field.
pub fn flip_random_bit(record: &mut TransactionRecord, rng: &mut impl Rng) -> &'static str {
    let field = SIGNED_FIELDS[rng.gen_range(0..SIGNED_FIELDS.len())];
    flip_bit(record, field, rng);
    field
}
