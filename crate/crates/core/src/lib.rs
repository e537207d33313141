//! Routing engine and deterministic simulator for payment channel networks.
//!
//! Volunteer routing helpers organize themselves in a Chord-style DHT ring,
//! open payment channels with their finger-table entries and publish
//! dual-signed attestations of the maximum amount they are willing to route
//! on each ring edge. A sender discovers its nearest helper, asks it for
//! candidate paths through the ring, validates every attestation signature
//! locally (writing publicly verifiable disputes for anything forged) and
//! settles the payment over a chain of hashed time-lock contracts so that a
//! failure at any hop unwinds every balance exactly.
//!
//! The crate is organized around the simulated blockchain in [`ledger`], key
//! material in [`identity`], the helper ring in [`dht`], the transaction
//! pipeline in [`routing`] and the experiment harness in [`sim`].

pub mod dht;
pub mod identity;
pub mod ledger;
pub mod routing;
pub mod sim;

use serde::{Deserialize, Serialize};
use std::fmt;

/// Balance units of the single abstract simulation currency.
pub type Amount = u64;

/// Simulated clock instant. The harness advances the clock; protocol logic
/// never reads wall-clock time.
pub type Tick = u64;

/// Handle of a node in the payment channel network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-transaction identifier, the hash of a random sender nonce.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(pub [u8; 32]);

impl TxId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxId({}..)", hex::encode(&self.0[..6]))
    }
}

impl Serialize for TxId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for TxId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("txid must be 32 bytes"))?;
        Ok(TxId(arr))
    }
}
