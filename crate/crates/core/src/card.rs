//! Prepaid card format: numbering, check digit, secrets and the digests the
//! provider keeps in place of them.

use std::fmt;

use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::money::Money;

/// Secret length in characters; 26 base-32 symbols carry 130 bits.
pub const SECRET_LEN: usize = 26;
/// Crockford base-32 alphabet (no I, L, O, U).
pub const SECRET_ALPHABET: &[u8; 32] = b"0123456789ABCDEFGHJKMNPQRSTVWXYZ";
/// Digits in the serial part of a card number.
pub const SERIAL_DIGITS: usize = 12;
pub const MIN_PASSWORD_LEN: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CardFormatError {
    #[error("provider id must be 1 to 6 ASCII digits, got {0:?}")]
    BadProviderId(String),
    #[error("card number {0:?} is malformed")]
    Malformed(String),
    #[error("card number {0:?} fails its check digit")]
    CheckDigit(String),
}

/// Mod-10 (Luhn) check digit for a digit string.
pub fn luhn_check_digit(digits: &str) -> u8 {
    let sum: u32 = digits
        .bytes()
        .rev()
        .enumerate()
        .map(|(i, b)| {
            let d = u32::from(b - b'0');
            if i % 2 == 0 {
                let x = d * 2;
                if x > 9 {
                    x - 9
                } else {
                    x
                }
            } else {
                d
            }
        })
        .sum();
    ((10 - sum % 10) % 10) as u8
}

pub fn luhn_valid(number: &str) -> bool {
    match number.split_last_char() {
        Some((body, last)) if !body.is_empty() && number.bytes().all(|b| b.is_ascii_digit()) => {
            luhn_check_digit(body) == last
        }
        _ => false,
    }
}

trait SplitLast {
    fn split_last_char(&self) -> Option<(&str, u8)>;
}

impl SplitLast for str {
    fn split_last_char(&self) -> Option<(&str, u8)> {
        let last = *self.as_bytes().last()?;
        last.is_ascii_digit().then(|| (&self[..self.len() - 1], last - b'0'))
    }
}

pub fn validate_provider_id(provider_id: &str) -> Result<(), CardFormatError> {
    if (1..=6).contains(&provider_id.len()) && provider_id.bytes().all(|b| b.is_ascii_digit()) {
        Ok(())
    } else {
        Err(CardFormatError::BadProviderId(provider_id.to_string()))
    }
}

/// A card number: provider prefix, zero-padded serial, Luhn check digit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CardNumber(String);

impl CardNumber {
    pub fn build(provider_id: &str, serial: u64) -> Result<Self, CardFormatError> {
        validate_provider_id(provider_id)?;
        let body = format!("{provider_id}{serial:0width$}", width = SERIAL_DIGITS);
        if body.len() != provider_id.len() + SERIAL_DIGITS {
            return Err(CardFormatError::Malformed(body));
        }
        let check = luhn_check_digit(&body);
        Ok(CardNumber(format!("{body}{check}")))
    }

    /// Parses and checks a card number. It must carry `provider_id` as its
    /// prefix when one is given.
    pub fn parse(s: &str, provider_id: Option<&str>) -> Result<Self, CardFormatError> {
        if !s.bytes().all(|b| b.is_ascii_digit()) || s.len() < SERIAL_DIGITS + 2 {
            return Err(CardFormatError::Malformed(s.to_string()));
        }
        if !luhn_valid(s) {
            return Err(CardFormatError::CheckDigit(s.to_string()));
        }
        if let Some(p) = provider_id {
            if s.len() != p.len() + SERIAL_DIGITS + 1 || !s.starts_with(p) {
                return Err(CardFormatError::Malformed(s.to_string()));
            }
        }
        Ok(CardNumber(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn provider_prefix(&self) -> &str {
        &self.0[..self.0.len() - SERIAL_DIGITS - 1]
    }

    /// One-way reference used in transaction records instead of the number.
    pub fn card_ref(&self) -> String {
        card_ref(&self.0)
    }
}

impl fmt::Display for CardNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn card_ref(card_number: &str) -> String {
    hex::encode(Sha256::digest(format!("card-ref:v1:{card_number}").as_bytes()))
}

pub fn secret_digest(card_number: &str, secret: &str) -> String {
    hex::encode(Sha256::digest(
        format!("card-secret:v1:{card_number}:{secret}").as_bytes(),
    ))
}

pub fn password_hash(salt: &str, password: &str) -> String {
    hex::encode(Sha256::digest(format!("card-pw:v1:{salt}:{password}").as_bytes()))
}

pub fn ct_eq(a: &str, b: &str) -> bool {
    a.len() == b.len() && bool::from(a.as_bytes().ct_eq(b.as_bytes()))
}

pub fn generate_secret<R: RngCore + ?Sized>(rng: &mut R) -> String {
    (0..SECRET_LEN)
        .map(|_| SECRET_ALPHABET[rng.gen_range(0..SECRET_ALPHABET.len())] as char)
        .collect()
}

pub fn generate_salt<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> String {
    let mut salt = [0u8; 16];
    rng.fill_bytes(&mut salt);
    hex::encode(salt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CardState {
    Issued,
    Activated,
    Exhausted,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PasswordHash {
    pub salt: String,
    pub hash: String,
}

impl PasswordHash {
    pub fn matches(&self, password: &str) -> bool {
        ct_eq(&password_hash(&self.salt, password), &self.hash)
    }
}

/// A sold card as the provider stores it. The secret and password are
/// present only as digests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Card {
    pub card_number: CardNumber,
    pub provider_id: String,
    pub secret_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub password: Option<PasswordHash>,
    pub balance: Money,
    pub state: CardState,
    pub denomination: Money,
}

impl Card {
    pub fn issued(card_number: CardNumber, provider_id: &str, secret: &str, denomination: Money) -> Self {
        Card {
            secret_digest: secret_digest(card_number.as_str(), secret),
            card_number,
            provider_id: provider_id.to_string(),
            password: None,
            balance: denomination,
            state: CardState::Issued,
            denomination,
        }
    }

    pub fn secret_matches(&self, secret: &str) -> bool {
        ct_eq(&secret_digest(self.card_number.as_str(), secret), &self.secret_digest)
    }

    pub fn credentials_match(&self, secret: &str, password: &str) -> bool {
        // Evaluate both so timing does not reveal which one failed.
        let secret_ok = self.secret_matches(secret);
        let password_ok = self.password.as_ref().is_some_and(|p| p.matches(password));
        secret_ok & password_ok
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.balance > self.denomination {
            return Err(format!("{}: balance exceeds denomination", self.card_number));
        }
        if !self.denomination.is_valid_denomination() {
            return Err(format!("{}: denomination out of range", self.card_number));
        }
        if self.state == CardState::Issued && self.password.is_some() {
            return Err(format!("{}: issued card carries a password", self.card_number));
        }
        if !self.card_number.as_str().starts_with(&self.provider_id) {
            return Err(format!("{}: provider prefix mismatch", self.card_number));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn known_luhn_values() {
        assert_eq!(luhn_check_digit("7992739871"), 3);
        assert!(luhn_valid("79927398713"));
        assert!(!luhn_valid("79927398710"));
    }

    #[test]
    fn check_digit_catches_every_single_digit_substitution() {
        let number = CardNumber::build("4021", 123_456).unwrap();
        let s = number.as_str();
        let mut checked = 0;
        for pos in 0..s.len() {
            for d in b'0'..=b'9' {
                if s.as_bytes()[pos] == d {
                    continue;
                }
                let mut m = s.as_bytes().to_vec();
                m[pos] = d;
                let m = String::from_utf8(m).unwrap();
                assert!(!luhn_valid(&m), "{m} slipped through");
                checked += 1;
            }
        }
        assert_eq!(checked, 9 * s.len());
    }

    #[test]
    fn number_layout() {
        let n = CardNumber::build("77", 5).unwrap();
        assert_eq!(n.as_str().len(), 2 + SERIAL_DIGITS + 1);
        assert_eq!(n.provider_prefix(), "77");
        assert_eq!(CardNumber::parse(n.as_str(), Some("77")).unwrap(), n);
        assert!(CardNumber::parse(n.as_str(), Some("78")).is_err());
        assert!(CardNumber::build("7a", 1).is_err());
        assert!(CardNumber::build("77", 10u64.pow(SERIAL_DIGITS as u32)).is_err());
    }

    #[test]
    fn card_ref_hides_the_number() {
        let n = CardNumber::build("4021", 9).unwrap();
        let r = n.card_ref();
        assert!(!r.contains(n.as_str()));
        assert_eq!(r.len(), 64);
    }

    #[test]
    fn secrets_are_well_formed() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let s = generate_secret(&mut rng);
        assert_eq!(s.len(), SECRET_LEN);
        assert!(s.bytes().all(|b| SECRET_ALPHABET.contains(&b)));
        // 26 symbols of 5 bits each.
        const { assert!(SECRET_LEN * 5 >= 120) };
    }

    #[test]
    fn credentials() {
        let n = CardNumber::build("4021", 1).unwrap();
        let mut card = Card::issued(n, "4021", "SECRET", Money::from_minor(1000));
        assert!(card.secret_matches("SECRET"));
        assert!(!card.credentials_match("SECRET", "pw"));
        card.password = Some(PasswordHash {
            salt: "00".into(),
            hash: password_hash("00", "pass"),
        });
        card.state = CardState::Activated;
        assert!(card.credentials_match("SECRET", "pass"));
        assert!(!card.credentials_match("SECRET", "nope"));
        assert!(!card.credentials_match("WRONG", "pass"));
        card.check_invariants().unwrap();
    }
}
