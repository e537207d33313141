//! Chord-style overlay of routing helpers.
//!
//! Helpers hash their address into an `m`-bit identifier space, resolve the
//! classic finger targets `(id + 2^(j-1)) mod 2^m` to live successors, open
//! a payment channel with every distinct finger entry and maintain a
//! dual-signed attestation of the maximum amount they will route on each of
//! those edges. Attestations are re-signed immediately when a channel
//! balance drops below the advertised cap and refreshed in bulk at every
//! epoch boundary, which is also when finger tables are repaired after
//! joins and leaves.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};
use thiserror::Error;

use crate::identity::{verify_bytes, IdentityDirectory, LongTermVk, Sig};
use crate::ledger::{Ledger, LedgerError};
use crate::{Amount, NodeId, Tick};

/// Identifier of a routing helper on the ring, in `[0, 2^m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RingId(pub u64);

impl fmt::Display for RingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DhtError {
    #[error("ring config invalid: {0}")]
    BadConfig(&'static str),
    #[error("address must be non-empty")]
    EmptyAddress,
    #[error("identifier {0} already taken by a live helper")]
    IdCollision(RingId),
    #[error("node {0} is already a routing helper")]
    AlreadyMember(NodeId),
    #[error("no helper with identifier {0}")]
    UnknownHelper(RingId),
    #[error("ring has no members")]
    RingEmpty,
    #[error("finger table is empty; overlay degenerate")]
    OverlayDegenerate,
    #[error("helper {0} cannot fund its finger channels: {1}")]
    JoinFunding(NodeId, LedgerError),
    #[error("setup needs at least two funded volunteers, got {0}")]
    TooFewVolunteers(usize),
    #[error("helper {0} has pending locks; leave deferred")]
    LeaveDeferred(NodeId),
    #[error("lookup exceeded {0} forwarding steps")]
    WalkDiverged(u8),
    #[error(transparent)]
    Identity(#[from] crate::identity::IdentityError),
}

/// Ring-wide parameters agreed on by all helpers at setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingConfig {
    /// Identifier width; the identifier space has `2^m_bits` slots.
    pub m_bits: u8,
    /// Epoch length in ticks between attestation refreshes.
    pub epoch: Tick,
    /// Advertised caps are rounded down to a multiple of this bucket so
    /// the exact channel balance stays hidden.
    pub max_bucket: Amount,
    /// Symmetric deposit each side puts into a helper-to-finger channel.
    pub finger_deposit: Amount,
}

impl Default for RingConfig {
    fn default() -> Self {
        RingConfig {
            m_bits: 32,
            epoch: 100,
            max_bucket: 10,
            finger_deposit: 5_000,
        }
    }
}

impl RingConfig {
    pub fn validate(&self) -> Result<(), DhtError> {
        if self.m_bits < 3 || self.m_bits > 63 {
            return Err(DhtError::BadConfig("m_bits must be in 3..=63"));
        }
        if self.epoch == 0 {
            return Err(DhtError::BadConfig("epoch must be at least 1"));
        }
        if self.max_bucket == 0 {
            return Err(DhtError::BadConfig("max_bucket must be at least 1"));
        }
        Ok(())
    }

    pub fn slots(&self) -> u64 {
        1u64 << self.m_bits
    }
}

/// Simulated network address of a node, the preimage of its ring id.
pub fn address_for(node: NodeId) -> String {
    format!("node-{}", node.0)
}

/// Hashes an address into the identifier space.
pub fn ring_id_from_address(address: &[u8], m_bits: u8) -> Result<RingId, DhtError> {
    if address.is_empty() {
        return Err(DhtError::EmptyAddress);
    }
    let digest: [u8; 32] = Sha256::digest(address).into();
    let wide = u64::from_be_bytes(digest[..8].try_into().unwrap());
    Ok(RingId(wide & ((1u64 << m_bits) - 1)))
}

/// The `m` finger targets of a node: `(id + 2^(j-1)) mod 2^m` for `j=1..m`.
pub fn finger_targets(id: RingId, m_bits: u8) -> Vec<RingId> {
    let slots = 1u64 << m_bits;
    (0..m_bits)
        .map(|j| RingId((id.0 + (1u64 << j)) % slots))
        .collect()
}

/// Clockwise distance from `from` to `to` in the identifier space.
pub fn ring_distance(from: RingId, to: RingId, m_bits: u8) -> u64 {
    let slots = 1u64 << m_bits;
    (to.0 + slots - from.0) % slots
}

/// Smallest live identifier strictly greater than `of`, wrapping at zero.
pub fn successor(of: RingId, members: &BTreeSet<RingId>) -> Option<RingId> {
    members
        .range((
            std::ops::Bound::Excluded(of),
            std::ops::Bound::Unbounded,
        ))
        .next()
        .or_else(|| members.iter().next())
        .copied()
}

/// The live helper responsible for `target`: the smallest identifier
/// greater than or equal to it, wrapping at zero.
pub fn owner(target: RingId, members: &BTreeSet<RingId>) -> Option<RingId> {
    members
        .range(target..)
        .next()
        .or_else(|| members.iter().next())
        .copied()
}

/// Drops repeated entries keeping first-occurrence order.
pub fn remove_duplicates(entries: &[RingId]) -> Vec<RingId> {
    let mut seen = BTreeSet::new();
    entries
        .iter()
        .copied()
        .filter(|e| seen.insert(*e))
        .collect()
}

/// Among `entries`, the one with the largest identifier not past `toward`
/// in ring order from `from`. `None` when no entry lies in that arc.
pub fn closest_preceding(
    from: RingId,
    toward: RingId,
    entries: &[RingId],
    m_bits: u8,
) -> Option<RingId> {
    let span = ring_distance(from, toward, m_bits);
    entries
        .iter()
        .copied()
        .filter(|e| *e != from)
        .map(|e| (ring_distance(from, e, m_bits), e))
        .filter(|(d, _)| *d > 0 && *d <= span)
        .max_by_key(|(d, _)| *d)
        .map(|(_, e)| e)
}

/// Rounds a balance down to the advertised bucket, hiding the exact value
/// while never exceeding it.
pub fn bucket_max(balance: Amount, bucket: Amount) -> Amount {
    balance / bucket * bucket
}

/// Canonical byte encoding both parties sign for a capacity attestation.
pub fn attestation_message(
    from: RingId,
    to: RingId,
    max_amount: Amount,
    created_at: Tick,
    valid_until: Tick,
) -> Vec<u8> {
    let mut m = Vec::with_capacity(56);
    m.extend_from_slice(b"raced.max-attest.v1");
    m.extend_from_slice(&from.0.to_be_bytes());
    m.extend_from_slice(&to.0.to_be_bytes());
    m.extend_from_slice(&max_amount.to_be_bytes());
    m.extend_from_slice(&created_at.to_be_bytes());
    m.extend_from_slice(&valid_until.to_be_bytes());
    m
}

/// Dual-signed cap on the amount helper `from` will route to its finger
/// entry `to`. Both signatures cover the full tuple, so any mutation of a
/// field is detectable by anyone holding the long-term keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxAmountRecord {
    pub from: RingId,
    pub to: RingId,
    pub max_amount: Amount,
    pub created_at: Tick,
    pub valid_until: Tick,
    pub sig_from: Sig,
    pub sig_to: Sig,
}

impl MaxAmountRecord {
    pub fn message(&self) -> Vec<u8> {
        attestation_message(
            self.from,
            self.to,
            self.max_amount,
            self.created_at,
            self.valid_until,
        )
    }

    pub fn verify(&self, vk_from: &LongTermVk, vk_to: &LongTermVk) -> bool {
        let message = self.message();
        verify_bytes(&vk_from.0, &message, &self.sig_from)
            && verify_bytes(&vk_to.0, &message, &self.sig_to)
    }
}

/// One member of the ring with its resolved finger stacks and the live
/// attestations toward its distinct finger entries.
#[derive(Debug, Clone)]
pub struct RoutingHelper {
    pub ring_id: RingId,
    pub node: NodeId,
    pub address: String,
    /// All `m` resolved finger entries, repeats included.
    pub finger_raw: Vec<RingId>,
    /// Distinct entries in first-occurrence order, self excluded; each is
    /// backed by an open payment channel.
    pub finger_unique: Vec<RingId>,
    pub attest: Vec<MaxAmountRecord>,
    /// Test hook: a helper that refuses to co-sign drops off its peers'
    /// attestation lists until it cooperates again.
    pub refuses_cosign: bool,
}

impl RoutingHelper {
    pub fn attest_for(&self, to: RingId) -> Option<&MaxAmountRecord> {
        self.attest.iter().find(|r| r.to == to)
    }
}

/// Counts of what an epoch maintenance pass did.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MaintainStats {
    pub channels_opened: u32,
    pub extended: u32,
    pub resigned: u32,
    pub dropped: u32,
}

/// The live ring: members, their finger tables and the broadcast long-term
/// verification keys every PCN node knows.
#[derive(Debug)]
pub struct Ring {
    pub cfg: RingConfig,
    helpers: BTreeMap<RingId, RoutingHelper>,
    node_index: BTreeMap<NodeId, RingId>,
    /// Broadcast at join time; senders use these to validate attestation
    /// signatures.
    pub long_term_vks: BTreeMap<RingId, LongTermVk>,
}

impl Ring {
    /// Builds the ring from volunteer nodes. Volunteers that cannot fund
    /// their finger channels are excluded; their failure is reported
    /// alongside the ring. Fails outright when fewer than two volunteers
    /// make it in.
    pub fn setup(
        cfg: RingConfig,
        volunteers: &[NodeId],
        ids: &IdentityDirectory,
        ledger: &mut Ledger,
    ) -> Result<(Ring, Vec<(NodeId, DhtError)>), DhtError> {
        cfg.validate()?;
        let mut ring = Ring {
            cfg,
            helpers: BTreeMap::new(),
            node_index: BTreeMap::new(),
            long_term_vks: BTreeMap::new(),
        };
        let mut failures = Vec::new();
        for &node in volunteers {
            if let Err(e) = ring.join(node, ids, ledger) {
                failures.push((node, e));
            }
        }
        if ring.helpers.len() < 2 {
            return Err(DhtError::TooFewVolunteers(ring.helpers.len()));
        }
        // Joins happened sequentially; settle fingers and attestations over
        // the final membership in one pass.
        ring.settle_epoch(ledger.now(), ids, ledger);
        Ok((ring, failures))
    }

    /// Adds one node as a routing helper: identifier from its hashed
    /// address, fingers over current membership, a channel per distinct
    /// entry and a dual-signed attestation on each. A channel-funding
    /// failure rolls the whole join back.
    pub fn join(
        &mut self,
        node: NodeId,
        ids: &IdentityDirectory,
        ledger: &mut Ledger,
    ) -> Result<RingId, DhtError> {
        if self.node_index.contains_key(&node) {
            return Err(DhtError::AlreadyMember(node));
        }
        let address = address_for(node);
        let ring_id = ring_id_from_address(address.as_bytes(), self.cfg.m_bits)?;
        if self.helpers.contains_key(&ring_id) {
            return Err(DhtError::IdCollision(ring_id));
        }

        let mut membership: BTreeSet<RingId> = self.helpers.keys().copied().collect();
        membership.insert(ring_id);
        let (finger_raw, finger_unique) = resolve_fingers(ring_id, &membership, self.cfg.m_bits);

        let identity = ids.require(node)?;
        let mut opened = Vec::new();
        for &entry in &finger_unique {
            let peer = self.helpers[&entry].node;
            if ledger.channel_between(node, peer).is_some() {
                continue;
            }
            let peer_identity = ids.require(peer)?;
            match ledger.pc_open(
                identity,
                peer_identity,
                self.cfg.finger_deposit,
                self.cfg.finger_deposit,
            ) {
                Ok(ch) => opened.push(ch),
                Err(e) => {
                    for ch in opened {
                        let _ = ledger.pc_close(ch);
                    }
                    return Err(DhtError::JoinFunding(node, e));
                }
            }
        }

        let now = ledger.now();
        let mut attest = Vec::new();
        for &entry in &finger_unique {
            let peer = self.helpers[&entry].node;
            if self.helpers[&entry].refuses_cosign {
                continue;
            }
            let record = sign_attestation(
                ring_id,
                entry,
                node,
                peer,
                now,
                &self.cfg,
                ids,
                ledger,
            )?;
            attest.push(record);
        }

        self.long_term_vks.insert(ring_id, identity.long_term_vk);
        self.node_index.insert(node, ring_id);
        self.helpers.insert(
            ring_id,
            RoutingHelper {
                ring_id,
                node,
                address,
                finger_raw,
                finger_unique,
                attest,
                refuses_cosign: false,
            },
        );
        Ok(ring_id)
    }

    /// Removes a helper: it closes the channels to its finger entries and
    /// leaves the membership immediately. Peers repair their finger tables
    /// at the next epoch boundary. Deferred while the node has pending
    /// locks anywhere.
    pub fn leave(&mut self, id: RingId, ledger: &mut Ledger) -> Result<(), DhtError> {
        let helper = self
            .helpers
            .get(&id)
            .ok_or(DhtError::UnknownHelper(id))?;
        if ledger.node_has_pending_locks(helper.node) {
            return Err(DhtError::LeaveDeferred(helper.node));
        }
        let node = helper.node;
        let entries = helper.finger_unique.clone();
        for entry in entries {
            if let Some(peer_helper) = self.helpers.get(&entry) {
                if let Some(ch) = ledger.channel_between(node, peer_helper.node) {
                    let _ = ledger.pc_close(ch);
                }
            }
        }
        self.helpers.remove(&id);
        self.node_index.remove(&node);
        self.long_term_vks.remove(&id);
        Ok(())
    }

    /// Per-tick upkeep. At epoch boundaries the whole ring recomputes
    /// finger tables, repairs channel backing and refreshes attestations;
    /// every tick, attestations that exceed the live balance are re-signed
    /// immediately.
    pub fn maintain(
        &mut self,
        now: Tick,
        ids: &IdentityDirectory,
        ledger: &mut Ledger,
    ) -> MaintainStats {
        let mut stats = MaintainStats::default();
        if now % self.cfg.epoch == 0 {
            stats = self.settle_epoch(now, ids, ledger);
        }
        self.depletion_refresh(now, ids, ledger);
        stats
    }

    /// Recomputes every finger table over current membership, opens any
    /// missing finger channels and refreshes the attestation lists. A cap
    /// unchanged since the last epoch keeps its creation stamp and has its
    /// validity extended by one epoch; anything else is re-signed fresh.
    fn settle_epoch(
        &mut self,
        now: Tick,
        ids: &IdentityDirectory,
        ledger: &mut Ledger,
    ) -> MaintainStats {
        let mut stats = MaintainStats::default();
        let membership: BTreeSet<RingId> = self.helpers.keys().copied().collect();
        let helper_ids: Vec<RingId> = self.helpers.keys().copied().collect();
        for id in helper_ids {
            let (node, old_attest, raw, mut unique) = {
                let h = &self.helpers[&id];
                let (raw, unique) = resolve_fingers(id, &membership, self.cfg.m_bits);
                (h.node, h.attest.clone(), raw, unique)
            };

            // Channel backing; entries we cannot fund drop out for this
            // epoch.
            unique.retain(|entry| {
                let peer = self.helpers[entry].node;
                if ledger.channel_between(node, peer).is_some() {
                    return true;
                }
                let (a, b) = match (ids.require(node), ids.require(peer)) {
                    (Ok(a), Ok(b)) => (a, b),
                    _ => return false,
                };
                match ledger.pc_open(a, b, self.cfg.finger_deposit, self.cfg.finger_deposit) {
                    Ok(_) => {
                        stats.channels_opened += 1;
                        true
                    }
                    Err(_) => false,
                }
            });

            let mut attest = Vec::new();
            for &entry in &unique {
                let peer = self.helpers[&entry].node;
                if self.helpers[&entry].refuses_cosign {
                    stats.dropped += 1;
                    continue;
                }
                let balance = ledger
                    .channel_between(node, peer)
                    .and_then(|ch| ledger.channel(ch).ok())
                    .map(|c| c.free_from(node))
                    .unwrap_or(0);
                let cap = bucket_max(balance, self.cfg.max_bucket);
                let old = old_attest.iter().find(|r| r.to == entry);
                let record = match old {
                    Some(prev) if prev.max_amount == cap => {
                        stats.extended += 1;
                        resign(
                            id,
                            entry,
                            node,
                            peer,
                            cap,
                            prev.created_at,
                            prev.valid_until + self.cfg.epoch,
                            ids,
                        )
                    }
                    _ => {
                        stats.resigned += 1;
                        resign(id, entry, node, peer, cap, now, now + self.cfg.epoch, ids)
                    }
                };
                match record {
                    Ok(r) => attest.push(r),
                    Err(_) => stats.dropped += 1,
                }
            }

            let h = self.helpers.get_mut(&id).unwrap();
            h.finger_raw = raw;
            h.finger_unique = unique;
            h.attest = attest;
        }
        stats
    }

    /// Re-signs any attestation whose cap exceeds the payer's live free
    /// balance, restoring `max <= lw` within the same tick.
    fn depletion_refresh(&mut self, now: Tick, ids: &IdentityDirectory, ledger: &mut Ledger) {
        let helper_ids: Vec<RingId> = self.helpers.keys().copied().collect();
        for id in helper_ids {
            let node = self.helpers[&id].node;
            let updates: Vec<(RingId, NodeId, Amount)> = self.helpers[&id]
                .attest
                .iter()
                .filter_map(|r| {
                    let peer = self.helpers.get(&r.to)?.node;
                    let balance = ledger
                        .channel_between(node, peer)
                        .and_then(|ch| ledger.channel(ch).ok())
                        .map(|c| c.free_from(node))
                        .unwrap_or(0);
                    (r.max_amount > balance).then_some((
                        r.to,
                        peer,
                        bucket_max(balance, self.cfg.max_bucket),
                    ))
                })
                .collect();
            for (to, peer, cap) in updates {
                let refuses = self.helpers[&to].refuses_cosign;
                let replacement = if refuses {
                    None
                } else {
                    resign(id, to, node, peer, cap, now, now + self.cfg.epoch, ids).ok()
                };
                let attest = &mut self.helpers.get_mut(&id).unwrap().attest;
                let Some(pos) = attest.iter().position(|r| r.to == to) else {
                    continue;
                };
                match replacement {
                    Some(record) => attest[pos] = record,
                    None => {
                        attest.remove(pos);
                    }
                }
            }
        }
    }

    /// The finger entry of `from` with the largest identifier not past
    /// `toward`; falls back to the first finger (the successor) when the
    /// arc holds no entry.
    pub fn ft_lookup(&self, from: RingId, toward: RingId) -> Result<RingId, DhtError> {
        let helper = self
            .helpers
            .get(&from)
            .ok_or(DhtError::UnknownHelper(from))?;
        if helper.finger_unique.is_empty() {
            return Err(DhtError::OverlayDegenerate);
        }
        Ok(
            closest_preceding(from, toward, &helper.finger_unique, self.cfg.m_bits)
                .unwrap_or(helper.finger_unique[0]),
        )
    }

    /// One forwarding step toward `target`: the target itself when it sits
    /// in the finger table, otherwise the closest preceding finger.
    pub fn next_hop(&self, from: RingId, target: RingId) -> Result<RingId, DhtError> {
        let helper = self
            .helpers
            .get(&from)
            .ok_or(DhtError::UnknownHelper(from))?;
        if helper.finger_unique.contains(&target) {
            return Ok(target);
        }
        self.ft_lookup(from, target)
    }

    /// Full greedy lookup walk from one live helper to another. Each step
    /// is bounded by the finger-table rule, the whole walk by `m` steps.
    pub fn greedy_walk(
        &self,
        from: RingId,
        target: RingId,
    ) -> Result<Vec<(RingId, RingId)>, DhtError> {
        if !self.helpers.contains_key(&target) {
            return Err(DhtError::UnknownHelper(target));
        }
        let mut hops = Vec::new();
        let mut cur = from;
        while cur != target {
            if hops.len() >= self.cfg.m_bits as usize {
                return Err(DhtError::WalkDiverged(self.cfg.m_bits));
            }
            let next = self.next_hop(cur, target)?;
            hops.push((cur, next));
            cur = next;
        }
        Ok(hops)
    }

    /// The raw finger stack of a helper.
    pub fn ft_retrieve(&self, id: RingId) -> Result<Vec<RingId>, DhtError> {
        Ok(self
            .helpers
            .get(&id)
            .ok_or(DhtError::UnknownHelper(id))?
            .finger_raw
            .clone())
    }

    pub fn ft_search(&self, id: RingId, entry: RingId) -> Result<bool, DhtError> {
        Ok(self
            .helpers
            .get(&id)
            .ok_or(DhtError::UnknownHelper(id))?
            .finger_raw
            .contains(&entry))
    }

    pub fn attestation(&self, from: RingId, to: RingId) -> Option<&MaxAmountRecord> {
        self.helpers.get(&from)?.attest_for(to)
    }

    pub fn helper(&self, id: RingId) -> Option<&RoutingHelper> {
        self.helpers.get(&id)
    }

    pub fn helpers(&self) -> impl Iterator<Item = &RoutingHelper> {
        self.helpers.values()
    }

    pub fn members(&self) -> BTreeSet<RingId> {
        self.helpers.keys().copied().collect()
    }

    pub fn node_of(&self, id: RingId) -> Option<NodeId> {
        self.helpers.get(&id).map(|h| h.node)
    }

    pub fn ring_of(&self, node: NodeId) -> Option<RingId> {
        self.node_index.get(&node).copied()
    }

    pub fn rh_nodes(&self) -> BTreeSet<NodeId> {
        self.node_index.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.helpers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.helpers.is_empty()
    }

    pub fn set_cosign_refusal(&mut self, id: RingId, refuses: bool) {
        if let Some(h) = self.helpers.get_mut(&id) {
            h.refuses_cosign = refuses;
        }
    }

    /// One line per helper: `node_id,address,finger_ids(semicolon-list)`.
    pub fn dump(&self, w: &mut impl Write) -> io::Result<()> {
        for h in self.helpers.values() {
            let fingers: Vec<String> = h.finger_raw.iter().map(|f| f.to_string()).collect();
            writeln!(w, "{},{},{}", h.ring_id, h.address, fingers.join(";"))?;
        }
        Ok(())
    }
}

fn resolve_fingers(
    id: RingId,
    membership: &BTreeSet<RingId>,
    m_bits: u8,
) -> (Vec<RingId>, Vec<RingId>) {
    let raw: Vec<RingId> = finger_targets(id, m_bits)
        .into_iter()
        .map(|t| owner(t, membership).expect("membership non-empty"))
        .collect();
    let unique: Vec<RingId> = remove_duplicates(&raw)
        .into_iter()
        .filter(|e| *e != id)
        .collect();
    (raw, unique)
}

#[allow(clippy::too_many_arguments)]
fn sign_attestation(
    from: RingId,
    to: RingId,
    from_node: NodeId,
    to_node: NodeId,
    now: Tick,
    cfg: &RingConfig,
    ids: &IdentityDirectory,
    ledger: &Ledger,
) -> Result<MaxAmountRecord, DhtError> {
    let balance = ledger
        .channel_between(from_node, to_node)
        .and_then(|ch| ledger.channel(ch).ok())
        .map(|c| c.free_from(from_node))
        .unwrap_or(0);
    let cap = bucket_max(balance, cfg.max_bucket);
    resign(from, to, from_node, to_node, cap, now, now + cfg.epoch, ids)
}

#[allow(clippy::too_many_arguments)]
fn resign(
    from: RingId,
    to: RingId,
    from_node: NodeId,
    to_node: NodeId,
    cap: Amount,
    created_at: Tick,
    valid_until: Tick,
    ids: &IdentityDirectory,
) -> Result<MaxAmountRecord, DhtError> {
    let message = attestation_message(from, to, cap, created_at, valid_until);
    let sig_from = ids.require(from_node)?.sign_long_term(&message);
    let sig_to = ids.require(to_node)?.sign_long_term(&message);
    Ok(MaxAmountRecord {
        from,
        to,
        max_amount: cap,
        created_at,
        valid_until,
        sig_from,
        sig_to,
    })
}
