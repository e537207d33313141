//! Dual-identity key material.
//!
//! Every node carries a long-term signing keypair, shared only with its
//! immediate channel neighbors, and a pseudonymous temporary keypair used
//! toward everyone else. The temporary verification key is signed with the
//! long-term signing key, so a neighbor can check that both identities
//! belong to the same node before opening a channel. Signing is ed25519,
//! which is deterministic, so identical seeds replay to identical key
//! material and signatures.

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use thiserror::Error;

use crate::NodeId;

/// Security parameter in bits. Seeds must carry `2 * LAMBDA_BITS` bits of
/// entropy, preimages are sampled as `LAMBDA_BITS` random bits.
pub const LAMBDA_BITS: usize = 128;

/// Byte length of a key-generation seed (`2 * LAMBDA_BITS` bits).
pub const SEED_LEN: usize = 2 * LAMBDA_BITS / 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdentityError {
    #[error("verification key bytes do not decode to a valid curve point")]
    MalformedKey,
    #[error("expected {expected} bytes, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("no identity registered for node {0}")]
    UnknownNode(NodeId),
}

fn array_from<const N: usize>(bytes: &[u8]) -> Result<[u8; N], IdentityError> {
    bytes.try_into().map_err(|_| IdentityError::BadLength {
        expected: N,
        got: bytes.len(),
    })
}

macro_rules! hex_bytes_newtype {
    ($name:ident, $len:expr) => {
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({}..)", stringify!($name), hex::encode(&self.0[..6]))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
                let arr = array_from::<$len>(&bytes).map_err(serde::de::Error::custom)?;
                Ok($name(arr))
            }
        }
    };
}

hex_bytes_newtype!(LongTermVk, 32);
hex_bytes_newtype!(TempVk, 32);
hex_bytes_newtype!(Sig, 64);

impl LongTermVk {
    /// Decodes and validates key bytes. Malformed material is a distinct
    /// error, never a silent verification failure.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IdentityError> {
        let arr = array_from::<32>(bytes)?;
        VerifyingKey::from_bytes(&arr).map_err(|_| IdentityError::MalformedKey)?;
        Ok(LongTermVk(arr))
    }
}

impl TempVk {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IdentityError> {
        let arr = array_from::<32>(bytes)?;
        VerifyingKey::from_bytes(&arr).map_err(|_| IdentityError::MalformedKey)?;
        Ok(TempVk(arr))
    }
}

impl Sig {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IdentityError> {
        Ok(Sig(array_from::<64>(bytes)?))
    }
}

/// A detached signature together with the digest of the signed message and
/// the verification key of the signer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureEnvelope {
    pub message_digest: [u8; 32],
    pub signature: Sig,
    pub signer_vk: [u8; 32],
}

/// Long-term plus temporary keypairs of one node, with the signature that
/// ties the temporary identity to the long-term one.
pub struct Identity {
    pub node: NodeId,
    long_term: SigningKey,
    temporary: SigningKey,
    pub long_term_vk: LongTermVk,
    pub temp_vk: TempVk,
    /// `Sign` over the temporary verification key under the long-term key.
    pub temp_vk_sig: Sig,
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identity")
            .field("node", &self.node)
            .field("long_term_vk", &self.long_term_vk)
            .field("temp_vk", &self.temp_vk)
            .finish()
    }
}

impl Identity {
    /// Deterministically derives both keypairs from a seed carrying at
    /// least `2 * LAMBDA_BITS` bits of entropy.
    pub fn from_seed(node: NodeId, seed: [u8; SEED_LEN]) -> Identity {
        let long_term = SigningKey::from_bytes(&derive_key_seed(&seed, b"long-term"));
        let temporary = SigningKey::from_bytes(&derive_key_seed(&seed, b"temporary"));
        let long_term_vk = LongTermVk(long_term.verifying_key().to_bytes());
        let temp_vk = TempVk(temporary.verifying_key().to_bytes());
        let temp_vk_sig = Sig(long_term.sign(&temp_vk.0).to_bytes());
        Identity {
            node,
            long_term,
            temporary,
            long_term_vk,
            temp_vk,
            temp_vk_sig,
        }
    }

    pub fn generate(node: NodeId, rng: &mut impl Rng) -> Identity {
        let mut seed = [0u8; SEED_LEN];
        rng.fill_bytes(&mut seed);
        Identity::from_seed(node, seed)
    }

    pub fn sign_long_term(&self, message: &[u8]) -> Sig {
        Sig(self.long_term.sign(message).to_bytes())
    }

    pub fn sign_temp(&self, message: &[u8]) -> Sig {
        Sig(self.temporary.sign(message).to_bytes())
    }

    pub fn envelope_long_term(&self, message: &[u8]) -> SignatureEnvelope {
        SignatureEnvelope {
            message_digest: Sha256::digest(message).into(),
            signature: self.sign_long_term(message),
            signer_vk: self.long_term_vk.0,
        }
    }

    pub fn envelope_temp(&self, message: &[u8]) -> SignatureEnvelope {
        SignatureEnvelope {
            message_digest: Sha256::digest(message).into(),
            signature: self.sign_temp(message),
            signer_vk: self.temp_vk.0,
        }
    }
}

fn derive_key_seed(seed: &[u8; SEED_LEN], domain: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"raced.key.v1");
    hasher.update(domain);
    hasher.update(seed);
    hasher.finalize().into()
}

/// Verifies `signature` over `message` under raw verification-key bytes.
/// Returns `false` for keys that fail to decode; use the typed
/// `from_bytes` constructors when a distinct decode error is needed.
pub fn verify_bytes(vk: &[u8; 32], message: &[u8], signature: &Sig) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(vk) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    key.verify(message, &sig).is_ok()
}

/// The neighbor-side check before opening a channel: is the temporary key
/// really signed by the long-term key?
pub fn verify_neighbor_identity(vk: &LongTermVk, temp_vk: &TempVk, sig: &Sig) -> bool {
    verify_bytes(&vk.0, &temp_vk.0, sig)
}

/// Verifies an envelope against the message it claims to cover.
pub fn verify_envelope(envelope: &SignatureEnvelope, message: &[u8]) -> bool {
    let digest: [u8; 32] = Sha256::digest(message).into();
    digest == envelope.message_digest
        && verify_bytes(&envelope.signer_vk, message, &envelope.signature)
}

/// All identities of a simulated network, keyed by node.
#[derive(Debug, Default)]
pub struct IdentityDirectory {
    by_node: BTreeMap<NodeId, Identity>,
}

impl IdentityDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Deterministically creates one identity per node from a master seed.
    pub fn bootstrap(nodes: u32, master_seed: u64) -> Self {
        let mut dir = Self::new();
        for n in 0..nodes {
            let node = NodeId(n);
            let mut hasher = Sha256::new();
            hasher.update(b"raced.identity-seed.v1");
            hasher.update(master_seed.to_be_bytes());
            hasher.update(n.to_be_bytes());
            let seed: [u8; SEED_LEN] = hasher.finalize().into();
            dir.insert(Identity::from_seed(node, seed));
        }
        dir
    }

    pub fn insert(&mut self, identity: Identity) {
        self.by_node.insert(identity.node, identity);
    }

    pub fn get(&self, node: NodeId) -> Option<&Identity> {
        self.by_node.get(&node)
    }

    pub fn require(&self, node: NodeId) -> Result<&Identity, IdentityError> {
        self.get(node).ok_or(IdentityError::UnknownNode(node))
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Identity> {
        self.by_node.values()
    }

    /// One record per node: `node,vk,VK,sigma_VK`, hex-encoded. Used for
    /// cross-run determinism checks.
    pub fn write_key_dump(&self, w: &mut impl Write) -> io::Result<()> {
        for id in self.by_node.values() {
            writeln!(
                w,
                "{},{},{},{}",
                id.node,
                id.long_term_vk.to_hex(),
                id.temp_vk.to_hex(),
                id.temp_vk_sig.to_hex()
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn seeded(n: u8) -> Identity {
        Identity::from_seed(NodeId(n as u32), [n; SEED_LEN])
    }

    #[test]
    fn honest_identity_verifies() {
        let id = seeded(1);
        assert!(verify_neighbor_identity(
            &id.long_term_vk,
            &id.temp_vk,
            &id.temp_vk_sig
        ));
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let a = seeded(7);
        let b = seeded(7);
        assert_eq!(a.long_term_vk, b.long_term_vk);
        assert_eq!(a.temp_vk, b.temp_vk);
        assert_eq!(a.temp_vk_sig, b.temp_vk_sig);
    }

    #[test]
    fn distinct_seeds_give_distinct_keys() {
        let a = seeded(1);
        let b = seeded(2);
        assert_ne!(a.long_term_vk, b.long_term_vk);
        assert_ne!(a.temp_vk, b.temp_vk);
    }

    #[test]
    fn temporary_keys_differ_from_long_term() {
        let id = seeded(3);
        assert_ne!(id.long_term_vk.0, id.temp_vk.0);
    }

    #[test]
    fn every_single_byte_tamper_fails() {
        // Flip each byte of the signature and of the temporary key in turn;
        // verification must fail for all 96 mutations.
        let id = seeded(4);
        for i in 0..64 {
            let mut sig = id.temp_vk_sig;
            sig.0[i] ^= 0x01;
            assert!(
                !verify_neighbor_identity(&id.long_term_vk, &id.temp_vk, &sig),
                "tampered signature byte {i} verified"
            );
        }
        for i in 0..32 {
            let mut vk = id.temp_vk;
            vk.0[i] ^= 0x01;
            assert!(
                !verify_neighbor_identity(&id.long_term_vk, &vk, &id.temp_vk_sig),
                "tampered temp key byte {i} verified"
            );
        }
    }

    #[test]
    fn cross_paired_identities_fail() {
        let ids: Vec<Identity> = (0..10).map(seeded).collect();
        for a in &ids {
            for b in &ids {
                let expect = a.node == b.node;
                assert_eq!(
                    verify_neighbor_identity(&a.long_term_vk, &b.temp_vk, &b.temp_vk_sig),
                    expect
                );
            }
        }
    }

    #[test]
    fn envelope_round_trip_and_cross_message() {
        let id = seeded(5);
        let env = id.envelope_long_term(b"pay 50 to bob");
        assert!(verify_envelope(&env, b"pay 50 to bob"));
        assert!(!verify_envelope(&env, b"pay 51 to bob"));
    }

    #[test]
    fn hundred_random_pairs_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for n in 0..100u32 {
            let id = Identity::generate(NodeId(n), &mut rng);
            let mut msg = [0u8; 48];
            rng.fill_bytes(&mut msg);
            let env = id.envelope_temp(&msg);
            assert!(verify_envelope(&env, &msg));
        }
    }

    #[test]
    fn malformed_key_is_a_decode_error() {
        let err = LongTermVk::from_bytes(&[1, 2, 3]).unwrap_err();
        assert_eq!(
            err,
            IdentityError::BadLength {
                expected: 32,
                got: 3
            }
        );
        // Roughly half of all 32-byte strings fail point decompression;
        // find one and check it surfaces as a decode error, not `false`.
        let invalid = (0u8..=255)
            .map(|b| [b; 32])
            .find(|bytes| LongTermVk::from_bytes(bytes).is_err())
            .expect("some constant pattern must be off-curve");
        assert_eq!(
            LongTermVk::from_bytes(&invalid).unwrap_err(),
            IdentityError::MalformedKey
        );
    }

    #[test]
    fn key_dump_is_deterministic() {
        let dir_a = IdentityDirectory::bootstrap(5, 42);
        let dir_b = IdentityDirectory::bootstrap(5, 42);
        let mut dump_a = Vec::new();
        let mut dump_b = Vec::new();
        dir_a.write_key_dump(&mut dump_a).unwrap();
        dir_b.write_key_dump(&mut dump_b).unwrap();
        assert_eq!(dump_a, dump_b);
        assert_eq!(dump_a.split(|&b| b == b'\n').count(), 6);
    }
}
