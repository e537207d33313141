//! The transaction pipeline: sender-side helper discovery, two-phase path
//! finding inside the ring, sender-side validation with public dispute
//! writes, receiver-side end-helper selection, and the HTLC payment chain.
//!
//! Messages that cross non-neighbor boundaries carry temporary keys only;
//! long-term keys appear solely in local validation context.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

use crate::dht::{DhtError, MaxAmountRecord, Ring, RingId};
use crate::identity::{verify_bytes, Identity, LongTermVk, Sig, TempVk};
use crate::ledger::{HtlcId, Ledger, LedgerError};
use crate::{Amount, NodeId, Tick, TxId};

/// Per-candidate identifier sampled by the near helper; duplicates across a
/// stack are evidence of misbehavior.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathId(pub [u8; 32]);

impl PathId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PathId({}..)", hex::encode(&self.0[..6]))
    }
}

impl Serialize for PathId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PathId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("pathid must be 32 bytes"))?;
        Ok(PathId(arr))
    }
}

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("sender signature over (txid, amount) does not verify")]
    BadRequestSignature,
    #[error(transparent)]
    Dht(#[from] DhtError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Canonical bytes the sender signs with its temporary key.
pub fn request_message(txid: &TxId, amount: Amount) -> Vec<u8> {
    let mut m = Vec::with_capacity(60);
    m.extend_from_slice(b"raced.path-request.v1");
    m.extend_from_slice(&txid.0);
    m.extend_from_slice(&amount.to_be_bytes());
    m
}

/// What the sender hands the near helper: a fresh transaction id, the
/// amount, a signature over both and the sender's temporary key.
#[derive(Debug, Clone, Serialize)]
pub struct PathRequest {
    pub txid: TxId,
    pub amount: Amount,
    pub amount_sig: Sig,
    pub sender_vk: TempVk,
}

impl PathRequest {
    /// Samples a random nonce, hashes it into the transaction id and signs.
    pub fn new(sender: &Identity, amount: Amount, rng: &mut impl Rng) -> PathRequest {
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        let txid = TxId(Sha256::digest(nonce).into());
        let amount_sig = sender.sign_temp(&request_message(&txid, amount));
        PathRequest {
            txid,
            amount,
            amount_sig,
            sender_vk: sender.temp_vk,
        }
    }

    pub fn verify(&self) -> bool {
        verify_bytes(
            &self.sender_vk.0,
            &request_message(&self.txid, self.amount),
            &self.amount_sig,
        )
    }
}

/// Sender-side bookkeeping of every transaction it initiated.
#[derive(Debug, Default)]
pub struct SenderLog {
    entries: Vec<(LongTermVk, TxId, Amount)>,
}

impl SenderLog {
    pub fn record(&mut self, receiver_vk: LongTermVk, txid: TxId, amount: Amount) {
        debug_assert!(
            self.entries.iter().all(|(_, t, _)| *t != txid),
            "txid reuse within a sender session"
        );
        self.entries.push((receiver_vk, txid, amount));
    }

    pub fn lookup(&self, txid: &TxId) -> Option<(&LongTermVk, Amount)> {
        self.entries
            .iter()
            .find(|(_, t, _)| t == txid)
            .map(|(vk, _, a)| (vk, *a))
    }
}

/// One candidate route inside the ring: a chain of attested hops starting
/// at the near helper.
#[derive(Debug, Clone, Serialize)]
pub struct PathCandidate {
    pub txid: TxId,
    pub path_id: PathId,
    pub hops: Vec<MaxAmountRecord>,
}

impl PathCandidate {
    pub fn start_rh(&self) -> RingId {
        self.hops.first().expect("candidate has hops").from
    }

    pub fn end_rh(&self) -> RingId {
        self.hops.last().expect("candidate has hops").to
    }

    pub fn hop_count(&self) -> usize {
        self.hops.len()
    }

    /// Consecutive hops must share their junction helper.
    pub fn is_chained(&self) -> bool {
        self.hops.windows(2).all(|w| w[0].to == w[1].from)
    }

    /// The helper sequence the candidate traverses.
    pub fn ring_nodes(&self) -> Vec<RingId> {
        let mut out = vec![self.start_rh()];
        out.extend(self.hops.iter().map(|h| h.to));
        out
    }
}

/// Walk request the near helper sends into the ring.
#[derive(Debug, Clone, Serialize)]
pub struct FindPathRequest {
    pub txid: TxId,
    pub target: RingId,
}

/// A contacted helper answers with an attested hop, a forwarding hint, or
/// a liquidity refusal.
#[derive(Debug, Clone, Serialize)]
pub enum FindPathResponse {
    Hop(MaxAmountRecord),
    Forward { next: RingId },
    Unavailable { from: RingId, target: RingId },
}

/// Result of the two-phase path search at the near helper.
#[derive(Debug)]
pub struct FindPathOutput {
    pub stack: Vec<PathCandidate>,
    /// Protocol messages exchanged, for latency accounting.
    pub message_hops: u64,
    /// Ring members for which no liquidity-feasible route exists.
    pub unavailable: Vec<RingId>,
}

/// Two-phase search (Find Path). Phase 1 emits a single-hop candidate per
/// finger-table entry whose attested cap covers the amount. Phase 2 walks
/// greedily toward every other member, collecting one attested hop per
/// forwarding step; a hop without sufficient cap abandons that target.
pub fn find_path(
    req: &PathRequest,
    near: RingId,
    ring: &Ring,
    rng: &mut ChaCha20Rng,
) -> Result<FindPathOutput, RoutingError> {
    // The near helper and every contacted helper check the sender
    // signature; the message is immutable in flight here, so one check
    // stands for all of them.
    if !req.verify() {
        return Err(RoutingError::BadRequestSignature);
    }
    let near_helper = ring
        .helper(near)
        .ok_or(DhtError::UnknownHelper(near))?;

    let mut out = FindPathOutput {
        stack: Vec::new(),
        message_hops: 0,
        unavailable: Vec::new(),
    };

    // Phase 1: the fingers themselves.
    for &entry in &near_helper.finger_unique {
        out.message_hops += 2;
        match ring.attestation(near, entry) {
            Some(att) if req.amount <= att.max_amount => {
                out.stack.push(PathCandidate {
                    txid: req.txid,
                    path_id: fresh_path_id(rng),
                    hops: vec![att.clone()],
                });
            }
            _ => out.unavailable.push(entry),
        }
    }

    // Phase 2: everyone else, via greedy finger-table walks driven by the
    // near helper.
    let fingers: BTreeSet<RingId> = near_helper.finger_unique.iter().copied().collect();
    let targets: Vec<RingId> = ring
        .members()
        .into_iter()
        .filter(|m| *m != near && !fingers.contains(m))
        .collect();
    for target in targets {
        let mut cur = near;
        let mut hops: Vec<MaxAmountRecord> = Vec::new();
        let mut reached = false;
        while hops.len() < ring.cfg.m_bits as usize {
            let next = match ring.next_hop(cur, target) {
                Ok(n) => n,
                Err(_) => break,
            };
            out.message_hops += 2;
            match ring.attestation(cur, next) {
                Some(att) if req.amount <= att.max_amount => hops.push(att.clone()),
                // (txid, FindpathResp, cur, target, bottom): walk abandoned.
                _ => break,
            }
            if next == target {
                reached = true;
                break;
            }
            cur = next;
        }
        if reached {
            out.stack.push(PathCandidate {
                txid: req.txid,
                path_id: fresh_path_id(rng),
                hops,
            });
        } else {
            out.unavailable.push(target);
        }
    }
    Ok(out)
}

fn fresh_path_id(rng: &mut ChaCha20Rng) -> PathId {
    let mut id = [0u8; 32];
    rng.fill_bytes(&mut id);
    PathId(id)
}

/// Publicly verifiable evidence written to the ledger when validation
/// catches cheating, encoded canonically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dispute {
    /// The advertised cap cannot carry the requested amount.
    CapacityExceeded {
        from: RingId,
        to: RingId,
        amount: Amount,
        max_amount: Amount,
        reporter: TempVk,
    },
    /// An attestation signature failed; `to_side` names the offender.
    BadSignature {
        from: RingId,
        to: RingId,
        max_amount: Amount,
        created_at: Tick,
        valid_until: Tick,
        to_side: bool,
        signature: Sig,
        reporter: TempVk,
    },
    /// Two candidates carried the same path id: the near helper cheated.
    DuplicatePathId { path_id: PathId, reporter: TempVk },
    /// A downstream hop settled while its upstream lock was refunded.
    StuckHtlc { channel: u64, txid: TxId },
}

impl Dispute {
    pub fn encode(&self) -> Vec<u8> {
        let mut p = Vec::with_capacity(96);
        match self {
            Dispute::CapacityExceeded {
                from,
                to,
                amount,
                max_amount,
                reporter,
            } => {
                p.push(1);
                p.extend_from_slice(&from.0.to_be_bytes());
                p.extend_from_slice(&to.0.to_be_bytes());
                p.extend_from_slice(&amount.to_be_bytes());
                p.extend_from_slice(&max_amount.to_be_bytes());
                p.extend_from_slice(&reporter.0);
            }
            Dispute::BadSignature {
                from,
                to,
                max_amount,
                created_at,
                valid_until,
                to_side,
                signature,
                reporter,
            } => {
                p.push(2);
                p.extend_from_slice(&from.0.to_be_bytes());
                p.extend_from_slice(&to.0.to_be_bytes());
                p.extend_from_slice(&max_amount.to_be_bytes());
                p.extend_from_slice(&created_at.to_be_bytes());
                p.extend_from_slice(&valid_until.to_be_bytes());
                p.push(*to_side as u8);
                p.extend_from_slice(&signature.0);
                p.extend_from_slice(&reporter.0);
            }
            Dispute::DuplicatePathId { path_id, reporter } => {
                p.push(3);
                p.extend_from_slice(&path_id.0);
                p.extend_from_slice(&reporter.0);
            }
            Dispute::StuckHtlc { channel, txid } => {
                p.push(4);
                p.extend_from_slice(&channel.to_be_bytes());
                p.extend_from_slice(&txid.0);
            }
        }
        p
    }

    pub fn decode(bytes: &[u8]) -> Option<Dispute> {
        let tag = *bytes.first()?;
        let rest = &bytes[1..];
        let u64_at = |i: usize| -> Option<u64> {
            Some(u64::from_be_bytes(rest.get(i..i + 8)?.try_into().ok()?))
        };
        match tag {
            1 => Some(Dispute::CapacityExceeded {
                from: RingId(u64_at(0)?),
                to: RingId(u64_at(8)?),
                amount: u64_at(16)?,
                max_amount: u64_at(24)?,
                reporter: TempVk(rest.get(32..64)?.try_into().ok()?),
            }),
            2 => Some(Dispute::BadSignature {
                from: RingId(u64_at(0)?),
                to: RingId(u64_at(8)?),
                max_amount: u64_at(16)?,
                created_at: u64_at(24)?,
                valid_until: u64_at(32)?,
                to_side: *rest.get(40)? != 0,
                signature: Sig(rest.get(41..105)?.try_into().ok()?),
                reporter: TempVk(rest.get(105..137)?.try_into().ok()?),
            }),
            3 => Some(Dispute::DuplicatePathId {
                path_id: PathId(rest.get(0..32)?.try_into().ok()?),
                reporter: TempVk(rest.get(32..64)?.try_into().ok()?),
            }),
            4 => Some(Dispute::StuckHtlc {
                channel: u64_at(0)?,
                txid: TxId(rest.get(8..40)?.try_into().ok()?),
            }),
            _ => None,
        }
    }
}

/// What sender-side validation decided about a stack.
#[derive(Debug)]
pub struct ValidationOutcome {
    pub accepted: Vec<PathCandidate>,
    pub rejected: u32,
    pub disputes: Vec<u64>,
}

/// Path Validation: per hop, check the amount against the cap, the
/// validity window against the clock, then both signatures over the full
/// tuple. Capacity and signature failures produce a dispute record; an
/// expired window rejects quietly. Candidates sharing a path id are all
/// rejected with one dispute per extra copy.
pub fn validate_paths(
    stack: &[PathCandidate],
    amount: Amount,
    now: Tick,
    helper_vks: &BTreeMap<RingId, LongTermVk>,
    reporter: &TempVk,
    ledger: &mut Ledger,
) -> ValidationOutcome {
    let mut copies: BTreeMap<PathId, u32> = BTreeMap::new();
    for c in stack {
        *copies.entry(c.path_id).or_insert(0) += 1;
    }
    let mut duplicate_reported: BTreeSet<PathId> = BTreeSet::new();

    let mut out = ValidationOutcome {
        accepted: Vec::new(),
        rejected: 0,
        disputes: Vec::new(),
    };
    for candidate in stack {
        let mut ok = true;

        if copies[&candidate.path_id] > 1 {
            ok = false;
            if !duplicate_reported.insert(candidate.path_id) {
                // One dispute per extra copy beyond the first sighting.
                let seq = ledger.bc_write(
                    Dispute::DuplicatePathId {
                        path_id: candidate.path_id,
                        reporter: *reporter,
                    }
                    .encode(),
                );
                out.disputes.push(seq);
            }
        }

        // Spliced-together candidates cannot be pinned on a specific
        // signer, so they are rejected without a dispute.
        if !candidate.is_chained() || candidate.hops.is_empty() {
            ok = false;
        }

        for hop in &candidate.hops {
            if amount > hop.max_amount {
                let seq = ledger.bc_write(
                    Dispute::CapacityExceeded {
                        from: hop.from,
                        to: hop.to,
                        amount,
                        max_amount: hop.max_amount,
                        reporter: *reporter,
                    }
                    .encode(),
                );
                out.disputes.push(seq);
                ok = false;
                continue;
            }
            if now >= hop.valid_until {
                // Expired window: reject, nothing provably forged.
                ok = false;
                continue;
            }
            let message = hop.message();
            for (vk, sig, to_side) in [
                (helper_vks.get(&hop.from), &hop.sig_from, false),
                (helper_vks.get(&hop.to), &hop.sig_to, true),
            ] {
                let valid = vk.map(|k| verify_bytes(&k.0, &message, sig)).unwrap_or(false);
                if !valid {
                    let seq = ledger.bc_write(
                        Dispute::BadSignature {
                            from: hop.from,
                            to: hop.to,
                            max_amount: hop.max_amount,
                            created_at: hop.created_at,
                            valid_until: hop.valid_until,
                            to_side,
                            signature: *sig,
                            reporter: *reporter,
                        }
                        .encode(),
                    );
                    out.disputes.push(seq);
                    ok = false;
                }
            }
        }

        if ok {
            out.accepted.push(candidate.clone());
        } else {
            out.rejected += 1;
        }
    }
    out
}

/// Deterministic or seeded-random resolution of equal-score choices.
#[derive(Debug)]
pub enum TieBreaker {
    /// Lowest identifier wins; runs replay bit-identically.
    Lowest,
    /// Random choice from a seeded stream, preserving randomized behavior
    /// while staying replayable.
    Seeded(Box<ChaCha20Rng>),
}

impl TieBreaker {
    pub fn pick<T: Copy + Ord>(&mut self, candidates: &[T]) -> T {
        debug_assert!(!candidates.is_empty());
        match self {
            TieBreaker::Lowest => *candidates.iter().min().unwrap(),
            TieBreaker::Seeded(rng) => {
                use rand::RngExt;
                candidates[rng.random_range(0..candidates.len())]
            }
        }
    }
}

/// Per-node result of the liquidity-feasible breadth-first search toward a
/// set of leg endpoints: hop count to the nearest endpoint and the best
/// bottleneck achievable over shortest feasible paths.
pub type LegLevels = BTreeMap<NodeId, (u32, Amount)>;

/// Breadth-first search backwards from `ends`. An edge `(u -> v)` is
/// usable when `u`'s spendable balance covers the amount plus the unit
/// fees still accruing over the `g(v)` hops that remain inside this leg.
pub fn feasible_levels(
    ledger: &Ledger,
    ends: &BTreeSet<NodeId>,
    amount: Amount,
    fee_unit: Amount,
) -> LegLevels {
    let mut levels: LegLevels = LegLevels::new();
    let mut frontier: Vec<NodeId> = Vec::new();
    for &e in ends {
        levels.insert(e, (0, Amount::MAX));
        frontier.push(e);
    }
    let mut depth = 0u32;
    while !frontier.is_empty() {
        depth += 1;
        let need = amount + fee_unit * (depth as Amount - 1);
        let mut next: Vec<NodeId> = Vec::new();
        for &v in &frontier {
            let Ok(neighbors) = ledger.retrieve_neighbors(v) else {
                continue;
            };
            for u in neighbors {
                if levels.contains_key(&u) {
                    continue;
                }
                let Some(ch) = ledger.channel_between(u, v) else {
                    continue;
                };
                let free = ledger.channel(ch).unwrap().free_from(u);
                if free >= need {
                    levels.insert(u, (depth, 0));
                    next.push(u);
                }
            }
        }
        frontier = next;
    }

    // Bottleneck pass, level by level outward: the best min-balance
    // achievable from each node over the shortest feasible paths.
    let mut by_level: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
    for (&n, &(g, _)) in &levels {
        by_level.entry(g).or_default().push(n);
    }
    let max_level = by_level.keys().next_back().copied().unwrap_or(0);
    for level in 1..=max_level {
        let Some(nodes) = by_level.get(&level) else {
            continue;
        };
        let need = amount + fee_unit * (level as Amount - 1);
        for &u in nodes {
            let mut best = 0;
            for v in ledger.retrieve_neighbors(u).unwrap_or_default() {
                let Some(&(gv, bv)) = levels.get(&v) else {
                    continue;
                };
                if gv + 1 != level {
                    continue;
                }
                let ch = ledger.channel_between(u, v).unwrap();
                let free = ledger.channel(ch).unwrap().free_from(u);
                if free >= need {
                    best = best.max(free.min(bv));
                }
            }
            levels.get_mut(&u).unwrap().1 = best;
        }
    }
    levels
}

/// Walks the level structure from `start` down to a leg endpoint, always
/// taking a successor that realizes the best bottleneck, ties broken by
/// the breaker. Returns the node sequence `start..=end`.
pub fn extract_leg(
    ledger: &Ledger,
    levels: &LegLevels,
    start: NodeId,
    amount: Amount,
    fee_unit: Amount,
    tie: &mut TieBreaker,
) -> Option<Vec<NodeId>> {
    let &(mut g, b_start) = levels.get(&start)?;
    let mut path = vec![start];
    let mut cur = start;
    let mut target_bottleneck = b_start;
    while g > 0 {
        let need = amount + fee_unit * (g as Amount - 1);
        let mut achievers: Vec<NodeId> = Vec::new();
        for v in ledger.retrieve_neighbors(cur).ok()? {
            let Some(&(gv, bv)) = levels.get(&v) else {
                continue;
            };
            if gv + 1 != g {
                continue;
            }
            let ch = ledger.channel_between(cur, v)?;
            let free = ledger.channel(ch).ok()?.free_from(cur);
            if free >= need && free.min(bv) >= target_bottleneck {
                achievers.push(v);
            }
        }
        if achievers.is_empty() {
            return None;
        }
        let next = tie.pick(&achievers);
        let ch = ledger.channel_between(cur, next)?;
        let free = ledger.channel(ch).ok()?.free_from(cur);
        target_bottleneck = target_bottleneck.min(free.min(levels[&next].1));
        path.push(next);
        cur = next;
        g -= 1;
    }
    Some(path)
}

/// Hop-count-shortest, liquidity-feasible path from an endpoint to its
/// nearest routing helper; the terminal helper of the returned path is by
/// definition the near helper. Equal-length candidates prefer the highest
/// bottleneck liquidity.
pub fn find_path_to_rh(
    endpoint: NodeId,
    amount: Amount,
    ledger: &Ledger,
    rh_nodes: &BTreeSet<NodeId>,
    fee_unit: Amount,
    tie: &mut TieBreaker,
) -> Option<Vec<NodeId>> {
    if rh_nodes.is_empty() {
        return None;
    }
    let levels = feasible_levels(ledger, rh_nodes, amount, fee_unit);
    extract_leg(ledger, &levels, endpoint, amount, fee_unit, tie)
}

/// The receiver picks, among the end helpers of the accepted candidates,
/// the one with the smallest liquidity-feasible hop count to itself.
/// Returns the chosen helper and the leg from it to the receiver.
pub fn select_end_rh(
    receiver: NodeId,
    accepted: &[PathCandidate],
    amount: Amount,
    ledger: &Ledger,
    ring: &Ring,
    fee_unit: Amount,
    tie: &mut TieBreaker,
) -> Option<(RingId, Vec<NodeId>)> {
    let mut ends = BTreeSet::new();
    for c in accepted {
        ends.insert(c.end_rh());
    }
    let levels = feasible_levels(ledger, &BTreeSet::from([receiver]), amount, fee_unit);
    let mut best_g = u32::MAX;
    let mut ties: Vec<RingId> = Vec::new();
    for end in ends {
        let Some(node) = ring.node_of(end) else {
            continue;
        };
        let Some(&(g, _)) = levels.get(&node) else {
            continue;
        };
        match g.cmp(&best_g) {
            std::cmp::Ordering::Less => {
                best_g = g;
                ties = vec![end];
            }
            std::cmp::Ordering::Equal => ties.push(end),
            std::cmp::Ordering::Greater => {}
        }
    }
    if ties.is_empty() {
        return None;
    }
    let chosen = tie.pick(&ties);
    let leg = extract_leg(
        ledger,
        &levels,
        ring.node_of(chosen)?,
        amount,
        fee_unit,
        tie,
    )?;
    Some((chosen, leg))
}

/// The shortest accepted candidate terminating at the chosen end helper.
pub fn choose_path<'a>(
    accepted: &'a [PathCandidate],
    end_rh: RingId,
) -> Option<&'a PathCandidate> {
    accepted
        .iter()
        .filter(|c| c.end_rh() == end_rh)
        .min_by(|a, b| {
            (a.hop_count(), a.ring_nodes(), a.path_id.0)
                .cmp(&(b.hop_count(), b.ring_nodes(), b.path_id.0))
        })
}

/// Final disposition of one transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Success,
    NoPath,
    ValidationFailed,
    LiquidityFailed,
    Timeout,
}

impl TxStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TxStatus::Success => "success",
            TxStatus::NoPath => "no_path",
            TxStatus::ValidationFailed => "validation_failed",
            TxStatus::LiquidityFailed => "liquidity_failed",
            TxStatus::Timeout => "timeout",
        }
    }
}

/// Everything recorded about one finished transaction.
#[derive(Debug, Clone)]
pub struct TransactionOutcome {
    pub txid: TxId,
    pub status: TxStatus,
    pub path: Vec<NodeId>,
    pub path_len: u32,
    /// Hops of the chosen candidate inside the ring.
    pub ring_hops: u32,
    pub t_pathfind: Tick,
    pub t_route: Tick,
    pub disputes: Vec<u64>,
}

/// Notice each hop sends its successor before locking: the digest to pay
/// against and the transaction it belongs to.
#[derive(Debug, Clone, Serialize)]
pub struct InPathNotice {
    pub txid: TxId,
    pub digest: [u8; 32],
}

/// Misbehavior injected into a payment for fault testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// The node at this edge index never locks; upstream locks expire.
    AbandonLockAt(usize),
    /// The receiver reveals a garbage preimage.
    WrongPreimage,
    /// Reveals stop after this many hops have settled, leaving upstream
    /// locks to expire.
    AbandonRevealAfter(usize),
}

/// The assembled end-to-end payment: node sequence, amounts and the hash
/// lock the receiver generated.
#[derive(Debug, Clone)]
pub struct PaymentPlan {
    pub txid: TxId,
    pub amount: Amount,
    pub fee_unit: Amount,
    pub nodes: Vec<NodeId>,
    pub digest: [u8; 32],
    pub preimage: [u8; 16],
    pub htlc_delta: Tick,
}

impl PaymentPlan {
    /// The receiver samples the preimage and hashes it; everyone else only
    /// ever sees the digest until settlement.
    pub fn new(
        txid: TxId,
        amount: Amount,
        fee_unit: Amount,
        nodes: Vec<NodeId>,
        htlc_delta: Tick,
        rng: &mut impl Rng,
    ) -> PaymentPlan {
        assert!(nodes.len() >= 2, "payment needs sender and receiver");
        assert!(htlc_delta >= 2, "per-hop timeout spacing must be >= 2");
        let mut preimage = [0u8; 16];
        rng.fill_bytes(&mut preimage);
        let digest = Sha256::digest(preimage).into();
        PaymentPlan {
            txid,
            amount,
            fee_unit,
            nodes,
            digest,
            preimage,
            htlc_delta,
        }
    }

    pub fn edges(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Amount locked on edge `e`: the base amount plus one unit fee for
    /// every intermediary still to be crossed after that edge.
    pub fn amount_on_edge(&self, e: usize) -> Amount {
        let remaining = (self.edges() - 1 - e) as Amount;
        self.amount + self.fee_unit * remaining
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Locking(usize),
    Revealing(usize),
    Unwinding(TxStatus),
    Done(TxStatus),
}

/// State machine advancing one payment one protocol message at a time.
/// The forward pass locks HTLCs sender-to-receiver with timeouts that
/// shrink toward the receiver; the backward pass reveals the preimage. Any
/// failure flips to unwinding, which completes once every lock this
/// payment created has resolved.
#[derive(Debug)]
pub struct PaymentMachine {
    pub plan: PaymentPlan,
    fault: Fault,
    phase: Phase,
    htlcs: Vec<HtlcId>,
    started_at: Option<Tick>,
    finished_at: Option<Tick>,
    revealed: usize,
    stuck_reported: bool,
    pub extra_disputes: Vec<u64>,
}

impl PaymentMachine {
    pub fn new(plan: PaymentPlan, fault: Fault) -> PaymentMachine {
        PaymentMachine {
            plan,
            fault,
            phase: Phase::Locking(0),
            htlcs: Vec::new(),
            started_at: None,
            finished_at: None,
            revealed: 0,
            stuck_reported: false,
            extra_disputes: Vec::new(),
        }
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Done(_))
    }

    pub fn status(&self) -> Option<TxStatus> {
        match self.phase {
            Phase::Done(s) => Some(s),
            _ => None,
        }
    }

    /// Ticks between the first lock message and final resolution.
    pub fn route_ticks(&self) -> Tick {
        match (self.started_at, self.finished_at) {
            (Some(s), Some(f)) => f - s,
            _ => 0,
        }
    }

    /// Advances by one protocol message. Call once per tick per payment.
    pub fn step(&mut self, ledger: &mut Ledger) {
        if self.started_at.is_none() {
            self.started_at = Some(ledger.now());
        }
        match self.phase {
            Phase::Locking(e) => self.step_lock(e, ledger),
            Phase::Revealing(e) => self.step_reveal(e, ledger),
            Phase::Unwinding(status) => self.step_unwind(status, ledger),
            Phase::Done(_) => {}
        }
        if let Phase::Done(_) = self.phase {
            if self.finished_at.is_none() {
                self.finished_at = Some(ledger.now());
            }
        }
    }

    fn step_lock(&mut self, e: usize, ledger: &mut Ledger) {
        if self.fault == Fault::AbandonLockAt(e) {
            self.phase = Phase::Unwinding(TxStatus::Timeout);
            return;
        }
        let payer = self.plan.nodes[e];
        let payee = self.plan.nodes[e + 1];
        let Some(channel) = ledger.channel_between(payer, payee) else {
            self.phase = Phase::Unwinding(TxStatus::LiquidityFailed);
            return;
        };
        let edges = self.plan.edges();
        let timeout = ledger.now() + (edges - e) as Tick * self.plan.htlc_delta;
        match ledger.htlc_lock(
            channel,
            payer,
            self.plan.amount_on_edge(e),
            self.plan.digest,
            timeout,
            self.plan.txid,
        ) {
            Ok(id) => {
                self.htlcs.push(id);
                self.phase = if e + 1 == edges {
                    Phase::Revealing(edges - 1)
                } else {
                    Phase::Locking(e + 1)
                };
            }
            Err(_) => {
                self.phase = Phase::Unwinding(TxStatus::LiquidityFailed);
            }
        }
    }

    fn step_reveal(&mut self, e: usize, ledger: &mut Ledger) {
        if let Fault::AbandonRevealAfter(n) = self.fault {
            if self.revealed >= n {
                self.phase = Phase::Unwinding(TxStatus::Timeout);
                return;
            }
        }
        let preimage: &[u8] = if self.fault == Fault::WrongPreimage {
            b"not-the-preimage"
        } else {
            &self.plan.preimage
        };
        match ledger.htlc_fulfill(self.htlcs[e], preimage) {
            Ok(()) => {
                self.revealed += 1;
                if e == 0 {
                    self.phase = Phase::Done(TxStatus::Success);
                } else {
                    self.phase = Phase::Revealing(e - 1);
                }
            }
            Err(LedgerError::WrongPreimage) => {
                self.phase = Phase::Unwinding(TxStatus::Timeout);
            }
            Err(_) => {
                self.phase = Phase::Unwinding(TxStatus::Timeout);
            }
        }
    }

    fn step_unwind(&mut self, status: TxStatus, ledger: &mut Ledger) {
        use crate::ledger::HtlcState;
        let mut any_fulfilled = false;
        let mut any_refunded = false;
        let mut all_terminal = true;
        for &id in &self.htlcs {
            match ledger.htlc(id).expect("own htlc").state {
                HtlcState::Pending => all_terminal = false,
                HtlcState::Fulfilled => any_fulfilled = true,
                HtlcState::Refunded => any_refunded = true,
            }
        }
        if all_terminal {
            // A settled downstream hop that could not collect upstream is
            // publicly recorded.
            if any_fulfilled && any_refunded && !self.stuck_reported {
                self.stuck_reported = true;
                for &id in &self.htlcs {
                    let h = ledger.htlc(id).unwrap();
                    if h.state == HtlcState::Refunded {
                        let payload = Dispute::StuckHtlc {
                            channel: h.channel.0,
                            txid: self.plan.txid,
                        }
                        .encode();
                        self.extra_disputes.push(ledger.bc_write(payload));
                        break;
                    }
                }
            }
            self.phase = Phase::Done(status);
        }
    }
}

/// Drives a single payment to completion, advancing the clock one tick per
/// protocol message and refunding expired locks along the way.
pub fn route_payment(ledger: &mut Ledger, plan: PaymentPlan, fault: Fault) -> (TxStatus, Tick) {
    let mut machine = PaymentMachine::new(plan, fault);
    loop {
        ledger.refund_expired();
        machine.step(ledger);
        if machine.is_done() {
            return (machine.status().unwrap(), machine.route_ticks());
        }
        ledger.advance_to(ledger.now() + 1);
    }
}
