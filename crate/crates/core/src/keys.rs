//! Pairwise key material. Each party holds its own signing key and the
//! verification keys of the counterparties it was configured with; there is
//! no shared public-key server.

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("unknown party {0}")]
    UnknownParty(String),
    #[error("no signing key configured for {0}")]
    MissingKey(String),
    #[error("invalid key material: {0}")]
    InvalidKey(String),
}

/// A detached Ed25519 signature, hex encoded on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

impl Signature {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        if s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(KeyError::InvalidKey("signature hex must be lowercase".into()));
        }
        let bytes = hex::decode(s).map_err(|e| KeyError::InvalidKey(e.to_string()))?;
        let arr: [u8; 64] = bytes
            .try_into()
            .map_err(|_| KeyError::InvalidKey("signature must be 64 bytes".into()))?;
        Ok(Signature(arr))
    }

    /// Flips one bit; used by tamper tests.
    pub fn with_bit_flipped(mut self, bit: usize) -> Self {
        self.0[(bit / 8) % 64] ^= 1 << (bit % 8);
        self
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &self.to_hex()[..16])
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Signature::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub fn signing_key_from_hex(s: &str) -> Result<SigningKey, KeyError> {
    let bytes: [u8; 32] = hex::decode(s.trim())
        .map_err(|e| KeyError::InvalidKey(e.to_string()))?
        .try_into()
        .map_err(|_| KeyError::InvalidKey("secret key must be 32 bytes".into()))?;
    Ok(SigningKey::from_bytes(&bytes))
}

pub fn verifying_key_from_hex(s: &str) -> Result<VerifyingKey, KeyError> {
    let bytes: [u8; 32] = hex::decode(s.trim())
        .map_err(|e| KeyError::InvalidKey(e.to_string()))?
        .try_into()
        .map_err(|_| KeyError::InvalidKey("public key must be 32 bytes".into()))?;
    VerifyingKey::from_bytes(&bytes).map_err(|e| KeyError::InvalidKey(e.to_string()))
}

pub fn generate_signing_key<R: RngCore + CryptoRng>(rng: &mut R) -> SigningKey {
    SigningKey::generate(rng)
}

/// Deterministic key derived from a label. Test and simulation use only.
pub fn test_signing_key(label: &str) -> SigningKey {
    let seed: [u8; 32] = Sha256::digest(format!("test-key:{label}").as_bytes()).into();
    SigningKey::from_bytes(&seed)
}

#[derive(Clone)]
pub struct KeyRegistry {
    own_id: String,
    signing: Option<SigningKey>,
    peers: BTreeMap<String, VerifyingKey>,
}

impl fmt::Debug for KeyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyRegistry")
            .field("own_id", &self.own_id)
            .field("peers", &self.peers.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl KeyRegistry {
    pub fn new(own_id: impl Into<String>, signing: SigningKey) -> Self {
        let own_id = own_id.into();
        let mut peers = BTreeMap::new();
        peers.insert(own_id.clone(), signing.verifying_key());
        Self {
            own_id,
            signing: Some(signing),
            peers,
        }
    }

    /// A registry that can verify but never sign.
    pub fn verify_only(own_id: impl Into<String>) -> Self {
        Self {
            own_id: own_id.into(),
            signing: None,
            peers: BTreeMap::new(),
        }
    }

    pub fn with_peer(mut self, party_id: impl Into<String>, key: VerifyingKey) -> Self {
        self.add_peer(party_id, key);
        self
    }

    pub fn add_peer(&mut self, party_id: impl Into<String>, key: VerifyingKey) {
        self.peers.insert(party_id.into(), key);
    }

    pub fn own_id(&self) -> &str {
        &self.own_id
    }

    pub fn signing_key(&self) -> Option<&SigningKey> {
        self.signing.as_ref()
    }

    pub fn is_registered(&self, party_id: &str) -> bool {
        self.peers.contains_key(party_id)
    }

    pub fn parties(&self) -> impl Iterator<Item = &str> {
        self.peers.keys().map(String::as_str)
    }

    pub fn public_key(&self, party_id: &str) -> Result<&VerifyingKey, KeyError> {
        self.peers
            .get(party_id)
            .ok_or_else(|| KeyError::UnknownParty(party_id.to_string()))
    }

    pub fn sign(&self, payload: &[u8]) -> Result<Signature, KeyError> {
        let key = self
            .signing
            .as_ref()
            .ok_or_else(|| KeyError::MissingKey(self.own_id.clone()))?;
        Ok(Signature(key.sign(payload).to_bytes()))
    }

    /// `Ok(false)` for a bad signature, `Err` only for an unregistered signer.
    pub fn verify(&self, party_id: &str, payload: &[u8], sig: &Signature) -> Result<bool, KeyError> {
        let key = self.public_key(party_id)?;
        let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
        Ok(key.verify(payload, &sig).is_ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> (KeyRegistry, KeyRegistry) {
        let m = test_signing_key("merchant");
        let p = test_signing_key("provider");
        let merchant = KeyRegistry::new("m1", m.clone()).with_peer("p1", p.verifying_key());
        let provider = KeyRegistry::new("p1", p).with_peer("m1", m.verifying_key());
        (merchant, provider)
    }

    #[test]
    fn sign_verify_and_cross_key() {
        let (merchant, provider) = pair();
        let sig = merchant.sign(b"payload").unwrap();
        assert!(provider.verify("m1", b"payload", &sig).unwrap());
        assert!(!provider.verify("p1", b"payload", &sig).unwrap());
        assert_eq!(
            provider.verify("nobody", b"payload", &sig),
            Err(KeyError::UnknownParty("nobody".into()))
        );
    }

    #[test]
    fn verify_only_registry_cannot_sign() {
        let reg = KeyRegistry::verify_only("auditor");
        assert_eq!(reg.sign(b"x"), Err(KeyError::MissingKey("auditor".into())));
    }

    #[test]
    fn thousand_single_bit_mutations_fail() {
        let (merchant, provider) = pair();
        let payload = b"It is now time T, paying Y to X for item Z".to_vec();
        let sig = merchant.sign(&payload).unwrap();
        for bit in 0..(payload.len() * 8).min(500) {
            let mut p = payload.clone();
            p[bit / 8] ^= 1 << (bit % 8);
            assert!(!provider.verify("m1", &p, &sig).unwrap());
        }
        for bit in 0..512 {
            assert!(!provider.verify("m1", &payload, &sig.with_bit_flipped(bit)).unwrap());
        }
    }

    #[test]
    fn hex_round_trip() {
        let key = test_signing_key("x");
        let back = signing_key_from_hex(&hex::encode(key.to_bytes())).unwrap();
        assert_eq!(back.to_bytes(), key.to_bytes());
        let vk = verifying_key_from_hex(&hex::encode(key.verifying_key().to_bytes())).unwrap();
        assert_eq!(vk, key.verifying_key());
        assert!(signing_key_from_hex("abcd").is_err());
    }
}
