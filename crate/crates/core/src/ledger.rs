//! Simulated blockchain and payment-channel machinery.
//!
//! The ledger owns every channel, every conditional lock and an append-only
//! record log standing in for on-chain writes. Channel opens are funded
//! from per-node wallet accounts and closes settle back into them, so the
//! sum of wallets plus channel totals is invariant across a run. All
//! mutations of a single channel are serialized through `&mut self`;
//! per-channel conservation (free plus locked on both sides) holds across
//! any sequence of lock, fulfill and refund operations.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use thiserror::Error;

use crate::identity::{verify_neighbor_identity, Identity};
use crate::{Amount, NodeId, Tick, TxId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HtlcId(pub u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("node {0} is not registered on the ledger")]
    UnknownNode(NodeId),
    #[error("channel {0:?} does not exist")]
    UnknownChannel(ChannelId),
    #[error("an open channel between {0} and {1} already exists")]
    DuplicateChannel(NodeId, NodeId),
    #[error("cannot open a channel from a node to itself")]
    SelfChannel(NodeId),
    #[error("neighbor identity check failed for node {0}")]
    IdentityRejected(NodeId),
    #[error("wallet of {node} holds {available}, needs {needed}")]
    InsufficientWallet {
        node: NodeId,
        needed: Amount,
        available: Amount,
    },
    #[error("channel {0:?} is closed")]
    ChannelClosed(ChannelId),
    #[error("{node} holds {available} free on channel {channel:?}, lock needs {needed}")]
    InsufficientBalance {
        channel: ChannelId,
        node: NodeId,
        needed: Amount,
        available: Amount,
    },
    #[error("node {0} is not a party of channel {1:?}")]
    NotOnChannel(NodeId, ChannelId),
    #[error("channel {0:?} still carries pending locks")]
    PendingLocks(ChannelId),
    #[error("lock timeout {timeout} is not in the future (now {now})")]
    TimeoutInPast { timeout: Tick, now: Tick },
    #[error("htlc {0:?} does not exist")]
    UnknownHtlc(HtlcId),
    #[error("preimage does not hash to the lock digest")]
    WrongPreimage,
    #[error("htlc {0:?} expired at {1}; use refund")]
    LockExpired(HtlcId, Tick),
    #[error("htlc {0:?} cannot be refunded before its timeout {1}")]
    NotYetExpired(HtlcId, Tick),
    #[error("htlc {0:?} is already in a terminal state")]
    TerminalHtlc(HtlcId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelState {
    Open,
    Closed,
}

/// A bidirectional payment channel. `free_a` is what `a` can currently
/// spend toward `b`; locked portions are reserved by pending HTLCs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaymentChannel {
    pub id: ChannelId,
    pub a: NodeId,
    pub b: NodeId,
    free_a: Amount,
    free_b: Amount,
    locked_a: Amount,
    locked_b: Amount,
    pub state: ChannelState,
}

impl PaymentChannel {
    pub fn is_party(&self, node: NodeId) -> bool {
        node == self.a || node == self.b
    }

    pub fn peer(&self, node: NodeId) -> Option<NodeId> {
        if node == self.a {
            Some(self.b)
        } else if node == self.b {
            Some(self.a)
        } else {
            None
        }
    }

    /// Spendable balance of `node` toward its peer.
    pub fn free_from(&self, node: NodeId) -> Amount {
        if node == self.a {
            self.free_a
        } else if node == self.b {
            self.free_b
        } else {
            0
        }
    }

    pub fn locked_from(&self, node: NodeId) -> Amount {
        if node == self.a {
            self.locked_a
        } else if node == self.b {
            self.locked_b
        } else {
            0
        }
    }

    /// Free plus locked over both sides; constant between open and close.
    pub fn total(&self) -> Amount {
        self.free_a + self.free_b + self.locked_a + self.locked_b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HtlcState {
    Pending,
    Fulfilled,
    Refunded,
}

/// A conditional payment on one channel: claimable by the payee with the
/// preimage of `digest` before `timeout`, refundable to the payer after.
#[derive(Debug, Clone)]
pub struct Htlc {
    pub id: HtlcId,
    pub channel: ChannelId,
    pub payer: NodeId,
    pub payee: NodeId,
    pub txid: TxId,
    pub amount: Amount,
    pub digest: [u8; 32],
    pub timeout: Tick,
    pub state: HtlcState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordKind {
    ChannelOpen,
    ChannelClose,
    Dispute,
}

impl RecordKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordKind::ChannelOpen => "channel_open",
            RecordKind::ChannelClose => "channel_close",
            RecordKind::Dispute => "dispute",
        }
    }
}

/// One immutable entry of the append-only record log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerRecord {
    pub seq: u64,
    pub kind: RecordKind,
    pub payload: Vec<u8>,
}

/// Full balance state: wallets plus every channel's four balance fields.
/// Two snapshots compare equal iff every observable balance is identical.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerSnapshot {
    pub wallets: BTreeMap<NodeId, Amount>,
    pub channels: Vec<(ChannelId, Amount, Amount, Amount, Amount)>,
}

#[derive(Debug, Default)]
pub struct Ledger {
    now: Tick,
    wallets: BTreeMap<NodeId, Amount>,
    channels: Vec<PaymentChannel>,
    /// Open channels indexed from both endpoints for O(log) adjacency.
    adjacency: BTreeMap<NodeId, BTreeMap<NodeId, ChannelId>>,
    htlcs: Vec<Htlc>,
    pending_locks: BTreeMap<ChannelId, u32>,
    /// Pending locks ordered by expiry so the refund sweep touches only
    /// what is due.
    pending_by_timeout: BTreeSet<(Tick, HtlcId)>,
    records: Vec<LedgerRecord>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    /// Advances the simulated clock; never moves backwards.
    pub fn advance_to(&mut self, tick: Tick) {
        self.now = self.now.max(tick);
    }

    pub fn register_node(&mut self, node: NodeId) {
        self.wallets.entry(node).or_insert(0);
    }

    pub fn is_registered(&self, node: NodeId) -> bool {
        self.wallets.contains_key(&node)
    }

    /// Genesis mint: credits a wallet, registering the node if needed.
    pub fn credit_wallet(&mut self, node: NodeId, amount: Amount) {
        *self.wallets.entry(node).or_insert(0) += amount;
    }

    pub fn wallet(&self, node: NodeId) -> Amount {
        self.wallets.get(&node).copied().unwrap_or(0)
    }

    /// Opens a channel between two verified identities, funding each side's
    /// deposit from its wallet. The on-chain open is modeled as a payload
    /// signed by both temporary keys (a 2-of-2 transaction).
    pub fn pc_open(
        &mut self,
        a: &Identity,
        b: &Identity,
        deposit_a: Amount,
        deposit_b: Amount,
    ) -> Result<ChannelId, LedgerError> {
        if a.node == b.node {
            return Err(LedgerError::SelfChannel(a.node));
        }
        for id in [a, b] {
            if !self.is_registered(id.node) {
                return Err(LedgerError::UnknownNode(id.node));
            }
            if !verify_neighbor_identity(&id.long_term_vk, &id.temp_vk, &id.temp_vk_sig) {
                return Err(LedgerError::IdentityRejected(id.node));
            }
        }
        if self.channel_between(a.node, b.node).is_some() {
            return Err(LedgerError::DuplicateChannel(a.node, b.node));
        }
        for (id, deposit) in [(a, deposit_a), (b, deposit_b)] {
            let available = self.wallet(id.node);
            if available < deposit {
                return Err(LedgerError::InsufficientWallet {
                    node: id.node,
                    needed: deposit,
                    available,
                });
            }
        }
        *self.wallets.get_mut(&a.node).unwrap() -= deposit_a;
        *self.wallets.get_mut(&b.node).unwrap() -= deposit_b;

        let id = ChannelId(self.channels.len() as u64);
        let message = open_message(a, b, deposit_a, deposit_b);
        let payload = open_payload(
            id,
            a,
            b,
            deposit_a,
            deposit_b,
            &a.sign_temp(&message).0,
            &b.sign_temp(&message).0,
        );
        self.append(RecordKind::ChannelOpen, payload);

        self.channels.push(PaymentChannel {
            id,
            a: a.node,
            b: b.node,
            free_a: deposit_a,
            free_b: deposit_b,
            locked_a: 0,
            locked_b: 0,
            state: ChannelState::Open,
        });
        self.adjacency.entry(a.node).or_default().insert(b.node, id);
        self.adjacency.entry(b.node).or_default().insert(a.node, id);
        Ok(id)
    }

    /// Cooperative close: settles free balances back to wallets. Pending
    /// locks block the close.
    pub fn pc_close(&mut self, id: ChannelId) -> Result<(Amount, Amount), LedgerError> {
        if self.pending_locks.get(&id).copied().unwrap_or(0) > 0 {
            return Err(LedgerError::PendingLocks(id));
        }
        let ch = self.channel_mut(id)?;
        if ch.state == ChannelState::Closed {
            return Err(LedgerError::ChannelClosed(id));
        }
        ch.state = ChannelState::Closed;
        let (a, b, final_a, final_b) = (ch.a, ch.b, ch.free_a, ch.free_b);
        ch.free_a = 0;
        ch.free_b = 0;
        self.open_by_pair.remove(&pair_key(a, b));
        *self.wallets.get_mut(&a).unwrap() += final_a;
        *self.wallets.get_mut(&b).unwrap() += final_b;
        self.append(RecordKind::ChannelClose, close_payload(id, a, b, final_a, final_b));
        Ok((final_a, final_b))
    }

    /// Reserves `amount` of the payer's free balance under a hash lock.
    pub fn htlc_lock(
        &mut self,
        channel: ChannelId,
        payer: NodeId,
        amount: Amount,
        digest: [u8; 32],
        timeout: Tick,
        txid: TxId,
    ) -> Result<HtlcId, LedgerError> {
        let now = self.now;
        if timeout <= now {
            return Err(LedgerError::TimeoutInPast { timeout, now });
        }
        let ch = self.channel_mut(channel)?;
        if ch.state == ChannelState::Closed {
            return Err(LedgerError::ChannelClosed(channel));
        }
        let payee = ch
            .peer(payer)
            .ok_or(LedgerError::NotOnChannel(payer, channel))?;
        let free = ch.free_from(payer);
        if free < amount {
            return Err(LedgerError::InsufficientBalance {
                channel,
                node: payer,
                needed: amount,
                available: free,
            });
        }
        if payer == ch.a {
            ch.free_a -= amount;
            ch.locked_a += amount;
        } else {
            ch.free_b -= amount;
            ch.locked_b += amount;
        }
        let id = HtlcId(self.htlcs.len() as u64);
        self.htlcs.push(Htlc {
            id,
            channel,
            payer,
            payee,
            txid,
            amount,
            digest,
            timeout,
            state: HtlcState::Pending,
        });
        *self.pending_locks.entry(channel).or_insert(0) += 1;
        Ok(id)
    }

    /// Claims a pending lock with the preimage. Credits the payee on
    /// success; a wrong preimage changes nothing.
    pub fn htlc_fulfill(&mut self, id: HtlcId, preimage: &[u8]) -> Result<(), LedgerError> {
        let now = self.now;
        let htlc = self
            .htlcs
            .get(id.0 as usize)
            .ok_or(LedgerError::UnknownHtlc(id))?;
        match htlc.state {
            HtlcState::Pending => {}
            _ => return Err(LedgerError::TerminalHtlc(id)),
        }
        if now >= htlc.timeout {
            return Err(LedgerError::LockExpired(id, htlc.timeout));
        }
        let digest: [u8; 32] = Sha256::digest(preimage).into();
        if digest != htlc.digest {
            return Err(LedgerError::WrongPreimage);
        }
        let (channel, payer, amount) = (htlc.channel, htlc.payer, htlc.amount);
        let ch = &mut self.channels[channel.0 as usize];
        if payer == ch.a {
            ch.locked_a -= amount;
            ch.free_b += amount;
        } else {
            ch.locked_b -= amount;
            ch.free_a += amount;
        }
        self.htlcs[id.0 as usize].state = HtlcState::Fulfilled;
        *self.pending_locks.get_mut(&channel).unwrap() -= 1;
        Ok(())
    }

    /// Returns an expired pending lock to the payer's free balance.
    pub fn htlc_refund(&mut self, id: HtlcId) -> Result<(), LedgerError> {
        let now = self.now;
        let htlc = self
            .htlcs
            .get(id.0 as usize)
            .ok_or(LedgerError::UnknownHtlc(id))?;
        match htlc.state {
            HtlcState::Pending => {}
            _ => return Err(LedgerError::TerminalHtlc(id)),
        }
        if now < htlc.timeout {
            return Err(LedgerError::NotYetExpired(id, htlc.timeout));
        }
        let (channel, payer, amount) = (htlc.channel, htlc.payer, htlc.amount);
        let ch = &mut self.channels[channel.0 as usize];
        if payer == ch.a {
            ch.locked_a -= amount;
            ch.free_a += amount;
        } else {
            ch.locked_b -= amount;
            ch.free_b += amount;
        }
        self.htlcs[id.0 as usize].state = HtlcState::Refunded;
        *self.pending_locks.get_mut(&channel).unwrap() -= 1;
        Ok(())
    }

    /// Refunds every pending lock whose timeout has passed. The harness
    /// calls this once per tick; it models payers claiming refunds as soon
    /// as the chain allows.
    pub fn refund_expired(&mut self) -> Vec<HtlcId> {
        let due: Vec<HtlcId> = self
            .htlcs
            .iter()
            .filter(|h| h.state == HtlcState::Pending && h.timeout <= self.now)
            .map(|h| h.id)
            .collect();
        for id in &due {
            self.htlc_refund(*id).expect("due refund");
        }
        due
    }

    /// Appends an arbitrary canonical dispute tuple; returns its sequence
    /// number.
    pub fn bc_write(&mut self, payload: Vec<u8>) -> u64 {
        self.append(RecordKind::Dispute, payload)
    }

    fn append(&mut self, kind: RecordKind, payload: Vec<u8>) -> u64 {
        let seq = self.records.len() as u64;
        self.records.push(LedgerRecord { seq, kind, payload });
        seq
    }

    /// Every node sharing an open channel with `node`.
    pub fn retrieve_neighbors(&self, node: NodeId) -> Result<Vec<NodeId>, LedgerError> {
        if !self.is_registered(node) {
            return Err(LedgerError::UnknownNode(node));
        }
        let mut out = BTreeSet::new();
        for (&(a, b), _) in &self.open_by_pair {
            if a == node {
                out.insert(b);
            } else if b == node {
                out.insert(a);
            }
        }
        Ok(out.into_iter().collect())
    }

    pub fn channel(&self, id: ChannelId) -> Result<&PaymentChannel, LedgerError> {
        self.channels
            .get(id.0 as usize)
            .ok_or(LedgerError::UnknownChannel(id))
    }

    fn channel_mut(&mut self, id: ChannelId) -> Result<&mut PaymentChannel, LedgerError> {
        self.channels
            .get_mut(id.0 as usize)
            .ok_or(LedgerError::UnknownChannel(id))
    }

    /// The open channel between two nodes, if any.
    pub fn channel_between(&self, a: NodeId, b: NodeId) -> Option<ChannelId> {
        self.open_by_pair.get(&pair_key(a, b)).copied()
    }

    pub fn htlc(&self, id: HtlcId) -> Result<&Htlc, LedgerError> {
        self.htlcs
            .get(id.0 as usize)
            .ok_or(LedgerError::UnknownHtlc(id))
    }

    pub fn pending_lock_count(&self, channel: ChannelId) -> u32 {
        self.pending_locks.get(&channel).copied().unwrap_or(0)
    }

    pub fn node_has_pending_locks(&self, node: NodeId) -> bool {
        self.htlcs
            .iter()
            .any(|h| h.state == HtlcState::Pending && (h.payer == node || h.payee == node))
    }

    pub fn channels(&self) -> impl Iterator<Item = &PaymentChannel> {
        self.channels.iter()
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    pub fn records_of_kind(&self, kind: RecordKind) -> impl Iterator<Item = &LedgerRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// Sum of every wallet and every channel total. Constant after genesis.
    pub fn total_funds(&self) -> Amount {
        let wallets: Amount = self.wallets.values().sum();
        let channels: Amount = self.channels.iter().map(|c| c.total()).sum();
        wallets + channels
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            wallets: self.wallets.clone(),
            channels: self
                .channels
                .iter()
                .map(|c| (c.id, c.free_a, c.free_b, c.locked_a, c.locked_b))
                .collect(),
        }
    }

    /// Newline-delimited export: `seq,kind,hex(payload)`.
    pub fn export(&self, w: &mut impl Write) -> io::Result<()> {
        for r in &self.records {
            writeln!(w, "{},{},{}", r.seq, r.kind.as_str(), hex::encode(&r.payload))?;
        }
        Ok(())
    }

    /// Running hash over the first `n` records; stable once written.
    pub fn record_prefix_hash(&self, n: usize) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for r in self.records.iter().take(n) {
            hasher.update(r.seq.to_be_bytes());
            hasher.update([r.kind as u8]);
            hasher.update((r.payload.len() as u64).to_be_bytes());
            hasher.update(&r.payload);
        }
        hasher.finalize().into()
    }
}

fn open_message(a: &Identity, b: &Identity, deposit_a: Amount, deposit_b: Amount) -> Vec<u8> {
    let mut m = Vec::with_capacity(96);
    m.extend_from_slice(b"raced.pc-open.v1");
    m.extend_from_slice(&a.temp_vk.0);
    m.extend_from_slice(&b.temp_vk.0);
    m.extend_from_slice(&deposit_a.to_be_bytes());
    m.extend_from_slice(&deposit_b.to_be_bytes());
    m
}

fn open_payload(
    id: ChannelId,
    a: &Identity,
    b: &Identity,
    deposit_a: Amount,
    deposit_b: Amount,
    sig_a: &[u8; 64],
    sig_b: &[u8; 64],
) -> Vec<u8> {
    let mut p = Vec::with_capacity(224);
    p.extend_from_slice(&id.0.to_be_bytes());
    p.extend_from_slice(&a.node.0.to_be_bytes());
    p.extend_from_slice(&b.node.0.to_be_bytes());
    p.extend_from_slice(&a.temp_vk.0);
    p.extend_from_slice(&b.temp_vk.0);
    p.extend_from_slice(&deposit_a.to_be_bytes());
    p.extend_from_slice(&deposit_b.to_be_bytes());
    p.extend_from_slice(sig_a);
    p.extend_from_slice(sig_b);
    p
}

fn close_payload(
    id: ChannelId,
    a: NodeId,
    b: NodeId,
    final_a: Amount,
    final_b: Amount,
) -> Vec<u8> {
    let mut p = Vec::with_capacity(32);
    p.extend_from_slice(&id.0.to_be_bytes());
    p.extend_from_slice(&a.0.to_be_bytes());
    p.extend_from_slice(&b.0.to_be_bytes());
    p.extend_from_slice(&final_a.to_be_bytes());
    p.extend_from_slice(&final_b.to_be_bytes());
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::IdentityDirectory;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn env(nodes: u32, wallet: Amount) -> (Ledger, IdentityDirectory) {
        let mut ledger = Ledger::new();
        let ids = IdentityDirectory::bootstrap(nodes, 7);
        for n in 0..nodes {
            ledger.credit_wallet(NodeId(n), wallet);
        }
        (ledger, ids)
    }

    fn txid(tag: u8) -> TxId {
        TxId([tag; 32])
    }

    fn digest_of(preimage: &[u8]) -> [u8; 32] {
        Sha256::digest(preimage).into()
    }

    #[test]
    fn open_sets_both_balances() {
        // Bob deposits 150 toward Denise, Denise 100 toward Bob.
        let (mut ledger, ids) = env(2, 1_000);
        let bob = ids.get(NodeId(0)).unwrap();
        let denise = ids.get(NodeId(1)).unwrap();
        let ch = ledger.pc_open(bob, denise, 150, 100).unwrap();
        let channel = ledger.channel(ch).unwrap();
        assert_eq!(channel.free_from(NodeId(0)), 150);
        assert_eq!(channel.free_from(NodeId(1)), 100);
        assert_eq!(ledger.wallet(NodeId(0)), 850);
        assert_eq!(ledger.wallet(NodeId(1)), 900);
    }

    #[test]
    fn zero_deposit_channel_is_valid() {
        let (mut ledger, ids) = env(2, 10);
        let ch = ledger
            .pc_open(ids.get(NodeId(0)).unwrap(), ids.get(NodeId(1)).unwrap(), 0, 0)
            .unwrap();
        assert_eq!(ledger.channel(ch).unwrap().total(), 0);
    }

    #[test]
    fn duplicate_open_rejected() {
        let (mut ledger, ids) = env(2, 1_000);
        let a = ids.get(NodeId(0)).unwrap();
        let b = ids.get(NodeId(1)).unwrap();
        ledger.pc_open(a, b, 10, 10).unwrap();
        assert_eq!(
            ledger.pc_open(b, a, 5, 5),
            Err(LedgerError::DuplicateChannel(NodeId(1), NodeId(0)))
        );
    }

    #[test]
    fn close_settles_opening_deposits() {
        let (mut ledger, ids) = env(2, 1_000);
        let ch = ledger
            .pc_open(ids.get(NodeId(0)).unwrap(), ids.get(NodeId(1)).unwrap(), 150, 100)
            .unwrap();
        let (fa, fb) = ledger.pc_close(ch).unwrap();
        assert_eq!((fa, fb), (150, 100));
        assert_eq!(ledger.wallet(NodeId(0)), 1_000);
        assert_eq!(ledger.wallet(NodeId(1)), 1_000);
    }

    #[test]
    fn close_after_one_payment_swaps_fifty() {
        // Conservation arithmetic: 50 moves from the (150,100) side, so the
        // settlement must read (100,150).
        let (mut ledger, ids) = env(2, 1_000);
        let ch = ledger
            .pc_open(ids.get(NodeId(0)).unwrap(), ids.get(NodeId(1)).unwrap(), 150, 100)
            .unwrap();
        let lock = ledger
            .htlc_lock(ch, NodeId(0), 50, digest_of(b"x"), 10, txid(1))
            .unwrap();
        ledger.htlc_fulfill(lock, b"x").unwrap();
        assert_eq!(ledger.pc_close(ch).unwrap(), (100, 150));
    }

    #[test]
    fn close_blocked_by_pending_lock() {
        let (mut ledger, ids) = env(2, 1_000);
        let ch = ledger
            .pc_open(ids.get(NodeId(0)).unwrap(), ids.get(NodeId(1)).unwrap(), 150, 100)
            .unwrap();
        ledger
            .htlc_lock(ch, NodeId(0), 50, digest_of(b"x"), 10, txid(1))
            .unwrap();
        assert_eq!(ledger.pc_close(ch), Err(LedgerError::PendingLocks(ch)));
    }

    #[test]
    fn lock_moves_free_to_locked() {
        let (mut ledger, ids) = env(2, 1_000);
        let ch = ledger
            .pc_open(ids.get(NodeId(0)).unwrap(), ids.get(NodeId(1)).unwrap(), 150, 100)
            .unwrap();
        ledger
            .htlc_lock(ch, NodeId(0), 50, digest_of(b"x"), 10, txid(1))
            .unwrap();
        let c = ledger.channel(ch).unwrap();
        assert_eq!(c.free_from(NodeId(0)), 100);
        assert_eq!(c.locked_from(NodeId(0)), 50);
        assert_eq!(c.total(), 250);
    }

    #[test]
    fn lock_of_full_balance_leaves_zero_free() {
        let (mut ledger, ids) = env(2, 1_000);
        let ch = ledger
            .pc_open(ids.get(NodeId(0)).unwrap(), ids.get(NodeId(1)).unwrap(), 150, 100)
            .unwrap();
        ledger
            .htlc_lock(ch, NodeId(0), 150, digest_of(b"x"), 10, txid(1))
            .unwrap();
        assert_eq!(ledger.channel(ch).unwrap().free_from(NodeId(0)), 0);
    }

    #[test]
    fn interleaved_second_lock_hits_liquidity_error() {
        // Two transactions share the channel: after the first locks 50 of
        // 150, a 120 lock must fail with the remaining 100 reported.
        let (mut ledger, ids) = env(2, 1_000);
        let ch = ledger
            .pc_open(ids.get(NodeId(0)).unwrap(), ids.get(NodeId(1)).unwrap(), 150, 100)
            .unwrap();
        ledger
            .htlc_lock(ch, NodeId(0), 50, digest_of(b"a"), 10, txid(1))
            .unwrap();
        assert_eq!(
            ledger.htlc_lock(ch, NodeId(0), 120, digest_of(b"b"), 10, txid(2)),
            Err(LedgerError::InsufficientBalance {
                channel: ch,
                node: NodeId(0),
                needed: 120,
                available: 100,
            })
        );
    }

    #[test]
    fn fulfill_conserves_channel_total() {
        let (mut ledger, ids) = env(2, 1_000);
        let ch = ledger
            .pc_open(ids.get(NodeId(0)).unwrap(), ids.get(NodeId(1)).unwrap(), 150, 100)
            .unwrap();
        let lock = ledger
            .htlc_lock(ch, NodeId(0), 50, digest_of(b"x"), 10, txid(1))
            .unwrap();
        ledger.htlc_fulfill(lock, b"x").unwrap();
        let c = ledger.channel(ch).unwrap();
        assert_eq!(c.free_from(NodeId(0)), 100);
        assert_eq!(c.free_from(NodeId(1)), 150);
        assert_eq!(c.total(), 250);
    }

    #[test]
    fn wrong_preimage_changes_nothing() {
        let (mut ledger, ids) = env(2, 1_000);
        let ch = ledger
            .pc_open(ids.get(NodeId(0)).unwrap(), ids.get(NodeId(1)).unwrap(), 150, 100)
            .unwrap();
        let lock = ledger
            .htlc_lock(ch, NodeId(0), 50, digest_of(b"x"), 10, txid(1))
            .unwrap();
        let before = ledger.snapshot();
        assert_eq!(
            ledger.htlc_fulfill(lock, b"not-x"),
            Err(LedgerError::WrongPreimage)
        );
        assert_eq!(ledger.snapshot(), before);
    }

    #[test]
    fn fulfill_after_timeout_is_an_error() {
        let (mut ledger, ids) = env(2, 1_000);
        let ch = ledger
            .pc_open(ids.get(NodeId(0)).unwrap(), ids.get(NodeId(1)).unwrap(), 150, 100)
            .unwrap();
        let lock = ledger
            .htlc_lock(ch, NodeId(0), 50, digest_of(b"x"), 10, txid(1))
            .unwrap();
        ledger.advance_to(10);
        assert_eq!(
            ledger.htlc_fulfill(lock, b"x"),
            Err(LedgerError::LockExpired(lock, 10))
        );
    }

    #[test]
    fn refund_restores_payer_exactly() {
        let (mut ledger, ids) = env(2, 1_000);
        let ch = ledger
            .pc_open(ids.get(NodeId(0)).unwrap(), ids.get(NodeId(1)).unwrap(), 150, 100)
            .unwrap();
        let before = ledger.snapshot();
        let lock = ledger
            .htlc_lock(ch, NodeId(0), 50, digest_of(b"x"), 10, txid(1))
            .unwrap();
        assert_eq!(
            ledger.htlc_refund(lock),
            Err(LedgerError::NotYetExpired(lock, 10))
        );
        ledger.advance_to(10);
        ledger.htlc_refund(lock).unwrap();
        assert_eq!(ledger.snapshot(), before);
        assert_eq!(
            ledger.htlc_refund(lock),
            Err(LedgerError::TerminalHtlc(lock))
        );
    }

    #[test]
    fn abandoned_three_hop_payment_reverts_all_channels() {
        // Locks along a 3-hop path, nothing revealed: every channel must
        // come back to its pre-transaction snapshot after the timeouts.
        let (mut ledger, ids) = env(4, 1_000);
        let chans: Vec<ChannelId> = (0..3)
            .map(|i| {
                ledger
                    .pc_open(
                        ids.get(NodeId(i)).unwrap(),
                        ids.get(NodeId(i + 1)).unwrap(),
                        200,
                        200,
                    )
                    .unwrap()
            })
            .collect();
        let before = ledger.snapshot();
        let y = digest_of(b"secret");
        for (i, &ch) in chans.iter().enumerate() {
            ledger
                .htlc_lock(ch, NodeId(i as u32), 52 - i as u64, y, (3 - i as u64) * 8, txid(9))
                .unwrap();
        }
        ledger.advance_to(100);
        assert_eq!(ledger.refund_expired().len(), 3);
        assert_eq!(ledger.snapshot(), before);
    }

    #[test]
    fn dispute_round_trips_and_seq_increases() {
        let (mut ledger, _) = env(1, 0);
        let s0 = ledger.bc_write(vec![1, 2, 3]);
        let s1 = ledger.bc_write(vec![4, 5]);
        assert!(s1 > s0);
        let records: Vec<_> = ledger.records_of_kind(RecordKind::Dispute).collect();
        assert_eq!(records[0].payload, vec![1, 2, 3]);
        assert_eq!(records[1].payload, vec![4, 5]);
    }

    #[test]
    fn record_prefix_hash_is_stable_under_appends() {
        let (mut ledger, _) = env(1, 0);
        ledger.bc_write(vec![1]);
        ledger.bc_write(vec![2]);
        let h = ledger.record_prefix_hash(2);
        ledger.bc_write(vec![3]);
        assert_eq!(ledger.record_prefix_hash(2), h);
    }

    #[test]
    fn star_and_isolated_neighbors() {
        let (mut ledger, ids) = env(5, 1_000);
        for leaf in 1..4 {
            ledger
                .pc_open(ids.get(NodeId(0)).unwrap(), ids.get(NodeId(leaf)).unwrap(), 10, 10)
                .unwrap();
        }
        assert_eq!(
            ledger.retrieve_neighbors(NodeId(0)).unwrap(),
            vec![NodeId(1), NodeId(2), NodeId(3)]
        );
        assert_eq!(ledger.retrieve_neighbors(NodeId(4)).unwrap(), vec![]);
        assert_eq!(
            ledger.retrieve_neighbors(NodeId(9)),
            Err(LedgerError::UnknownNode(NodeId(9)))
        );
    }

    #[test]
    fn random_graph_neighbors_match_adjacency() {
        // Brute-force adjacency oracle over a 50-node random graph.
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let (mut ledger, ids) = env(50, 10_000);
        let mut adjacency = vec![BTreeSet::new(); 50];
        for a in 0..50u32 {
            for b in (a + 1)..50 {
                if rng.random_bool(0.08) {
                    ledger
                        .pc_open(ids.get(NodeId(a)).unwrap(), ids.get(NodeId(b)).unwrap(), 5, 5)
                        .unwrap();
                    adjacency[a as usize].insert(NodeId(b));
                    adjacency[b as usize].insert(NodeId(a));
                }
            }
        }
        for n in 0..50u32 {
            let expect: Vec<NodeId> = adjacency[n as usize].iter().copied().collect();
            assert_eq!(ledger.retrieve_neighbors(NodeId(n)).unwrap(), expect);
        }
    }

    proptest! {
        /// Per-channel conservation under arbitrary lock/fulfill/refund
        /// interleavings: the free+locked total never changes and no
        /// balance underflows.
        #[test]
        fn conservation_under_random_ops(ops in proptest::collection::vec((0u8..6, 0u64..120), 1..120)) {
            let (mut ledger, ids) = env(2, 1_000);
            let ch = ledger
                .pc_open(ids.get(NodeId(0)).unwrap(), ids.get(NodeId(1)).unwrap(), 150, 100)
                .unwrap();
            let mut live: Vec<HtlcId> = Vec::new();
            let mut tick = 0;
            for (op, arg) in ops {
                match op {
                    0 | 1 => {
                        let payer = NodeId(op as u32);
                        let _ = ledger.htlc_lock(
                            ch, payer, arg, digest_of(&arg.to_be_bytes()),
                            ledger.now() + 5, txid(0),
                        ).map(|id| live.push(id));
                    }
                    2 => {
                        if let Some(id) = live.pop() {
                            let h = ledger.htlc(id).unwrap().clone();
                            let _ = ledger.htlc_fulfill(id, &h.amount.to_be_bytes());
                        }
                    }
                    3 => {
                        if let Some(id) = live.pop() {
                            let _ = ledger.htlc_refund(id);
                        }
                    }
                    4 => {
                        tick += 3;
                        ledger.advance_to(tick);
                        ledger.refund_expired();
                    }
                    _ => {
                        if let Some(id) = live.pop() {
                            // wrong preimage attempt
                            let _ = ledger.htlc_fulfill(id, b"garbage");
                        }
                    }
                }
                prop_assert_eq!(ledger.channel(ch).unwrap().total(), 250);
            }
        }
    }

    #[test]
    fn generated_identities_sign_deterministically() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let id = Identity::generate(NodeId(0), &mut rng);
        assert_eq!(id.sign_temp(b"m"), id.sign_temp(b"m"));
    }
}
