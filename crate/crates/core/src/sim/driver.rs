//! Experiment driver: builds the network from a spec, selects routing
//! helpers, sets up the ring and advances all transactions concurrently,
//! one protocol message per transaction per tick. Identical configuration
//! and seed replay to bit-identical reports and ledger transcripts.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

use crate::dht::{DhtError, Ring, RingConfig};
use crate::identity::IdentityDirectory;
use crate::ledger::{Ledger, RecordKind};
use crate::routing::{
    choose_path, find_path, find_path_to_rh, select_end_rh, validate_paths, Fault,
    PathRequest, PaymentMachine, PaymentPlan, SenderLog, TieBreaker, TransactionOutcome,
    TxStatus,
};
use crate::sim::graph::{GraphError, NetworkSpec};
use crate::sim::metrics::MetricsReport;
use crate::sim::scc::{components_by_size, strongly_connected_components};
use crate::{Amount, NodeId, Tick, TxId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimMode {
    OneScc,
    KScc,
}

impl SimMode {
    pub fn parse(text: &str) -> Option<SimMode> {
        match text {
            "1scc" => Some(SimMode::OneScc),
            "kscc" => Some(SimMode::KScc),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dht(#[from] DhtError),
    #[error("config invalid: {0}")]
    Config(&'static str),
    #[error("graph has {have} strongly connected components, mode needs {need}")]
    TooFewComponents { have: usize, need: u32 },
    #[error("component holds {have} nodes, cannot select {need} helpers")]
    ComponentTooSmall { have: usize, need: u32 },
}

/// All knobs of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub rh_count: u32,
    pub mode: SimMode,
    pub m_bits: u8,
    /// Attestation epoch length in ticks.
    pub epoch: Tick,
    pub fee_unit: Amount,
    pub seed: u64,
    /// Per-hop spacing of HTLC timeouts.
    pub htlc_delta: Tick,
    pub max_bucket: Amount,
    /// Deposit each side funds into helper-to-finger channels.
    pub finger_deposit: Amount,
    /// Wallet credit granted to each selected helper for those deposits.
    pub rh_wallet: Amount,
    /// Transactions allowed in flight at once; 0 means unlimited.
    pub max_in_flight: u32,
    /// Mean gap between arrivals (Poisson process); none = all at once.
    pub arrival_mean_gap: Option<f64>,
    /// Break score ties with a seeded coin instead of lowest-id.
    pub random_ties: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rh_count: 8,
            mode: SimMode::OneScc,
            m_bits: 32,
            epoch: 100,
            fee_unit: 1,
            seed: 7,
            htlc_delta: 16,
            max_bucket: 10,
            finger_deposit: 50_000,
            rh_wallet: 3_000_000,
            max_in_flight: 0,
            arrival_mean_gap: None,
            random_ties: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.rh_count < 2 {
            return Err(SimError::Config("rh_count must be at least 2"));
        }
        if self.htlc_delta < 2 {
            return Err(SimError::Config("htlc_delta must be at least 2"));
        }
        if self.fee_unit == 0 {
            return Err(SimError::Config("fee_unit must be at least 1"));
        }
        Ok(())
    }

    pub fn ring_config(&self) -> RingConfig {
        RingConfig {
            m_bits: self.m_bits,
            epoch: self.epoch,
            max_bucket: self.max_bucket,
            finger_deposit: self.finger_deposit,
        }
    }
}

/// One requested payment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxSpec {
    pub idx: u32,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub amount: Amount,
}

/// Loads `idx,sender_id,receiver_id,amount` rows.
pub fn load_txs(path: &Path) -> Result<Vec<TxSpec>, GraphError> {
    let file = std::fs::File::open(path)?;
    parse_txs_csv(file)
}

pub fn parse_txs_csv(reader: impl std::io::Read) -> Result<Vec<TxSpec>, GraphError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut txs = Vec::new();
    for record in csv_reader.records() {
        let record = record.map_err(|e| GraphError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(GraphError::Parse {
                line,
                message: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let field = |i: usize| -> Result<u64, GraphError> {
            record[i].parse::<u64>().map_err(|e| GraphError::Parse {
                line,
                message: format!("field {}: {e}", i + 1),
            })
        };
        txs.push(TxSpec {
            idx: field(0)? as u32,
            sender: NodeId(field(1)? as u32),
            receiver: NodeId(field(2)? as u32),
            amount: field(3)?,
        });
    }
    Ok(txs)
}

/// Derives an independent deterministic stream for one purpose, so run
/// results never depend on scheduling order.
pub fn derive_rng(seed: u64, domain: &str, idx: u64) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"raced.rng.v1");
    hasher.update(seed.to_be_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(idx.to_be_bytes());
    ChaCha20Rng::from_seed(hasher.finalize().into())
}

/// Helper selection by out-degree: in one-component mode the top nodes of
/// the largest strongly connected component; in multi-component mode the
/// best node of each of the largest components.
pub fn select_rhs(
    spec: &NetworkSpec,
    rh_count: u32,
    mode: SimMode,
) -> Result<Vec<NodeId>, SimError> {
    let components = components_by_size(strongly_connected_components(
        spec.nodes,
        &spec.arcs(),
    ));
    let degrees = spec.out_degrees();
    let rank = |n: &u32| (std::cmp::Reverse(degrees[*n as usize]), *n);
    match mode {
        SimMode::OneScc => {
            let largest = components
                .first()
                .ok_or(SimError::Config("graph is empty"))?;
            if largest.len() < rh_count as usize {
                return Err(SimError::ComponentTooSmall {
                    have: largest.len(),
                    need: rh_count,
                });
            }
            let mut members = largest.clone();
            members.sort_by_key(rank);
            Ok(members[..rh_count as usize]
                .iter()
                .map(|&n| NodeId(n))
                .collect())
        }
        SimMode::KScc => {
            if components.len() < rh_count as usize {
                return Err(SimError::TooFewComponents {
                    have: components.len(),
                    need: rh_count,
                });
            }
            Ok(components[..rh_count as usize]
                .iter()
                .map(|component| {
                    NodeId(*component.iter().min_by_key(|n| rank(n)).unwrap())
                })
                .collect())
        }
    }
}

/// Deterministically samples transactions compatible with the mode: within
/// the largest component, or across distinct components.
pub fn generate_txs(
    spec: &NetworkSpec,
    cfg: &SimConfig,
    count: u32,
    amt_min: Amount,
    amt_max: Amount,
) -> Vec<TxSpec> {
    let components = components_by_size(strongly_connected_components(
        spec.nodes,
        &spec.arcs(),
    ));
    let mut rng = derive_rng(cfg.seed, "txgen", 0);
    let mut txs = Vec::with_capacity(count as usize);
    match cfg.mode {
        SimMode::OneScc => {
            let pool = &components[0];
            for idx in 0..count {
                let sender = pool[rng.random_range(0..pool.len())];
                let mut receiver = sender;
                while receiver == sender {
                    receiver = pool[rng.random_range(0..pool.len())];
                }
                txs.push(TxSpec {
                    idx,
                    sender: NodeId(sender),
                    receiver: NodeId(receiver),
                    amount: rng.random_range(amt_min..=amt_max),
                });
            }
        }
        SimMode::KScc => {
            let pools = &components[..cfg.rh_count as usize];
            for idx in 0..count {
                let a = rng.random_range(0..pools.len());
                let mut b = a;
                while b == a {
                    b = rng.random_range(0..pools.len());
                }
                let sender = pools[a][rng.random_range(0..pools[a].len())];
                let receiver = pools[b][rng.random_range(0..pools[b].len())];
                txs.push(TxSpec {
                    idx,
                    sender: NodeId(sender),
                    receiver: NodeId(receiver),
                    amount: rng.random_range(amt_min..=amt_max),
                });
            }
        }
    }
    txs
}

enum TxState {
    Waiting { arrival: Tick },
    Routing { machine: PaymentMachine, route_start: Tick },
    Finished,
}

struct PathfindSuccess {
    machine: PaymentMachine,
    path: Vec<NodeId>,
    ring_hops: u32,
    t_pathfind: Tick,
    disputes: Vec<u64>,
    txid: TxId,
}

struct TxRun {
    spec: TxSpec,
    state: TxState,
    txid: TxId,
    path: Vec<NodeId>,
    ring_hops: u32,
    t_pathfind: Tick,
    disputes: Vec<u64>,
    outcome: Option<TransactionOutcome>,
}

/// A built network with its ring, ready to run transaction batches.
pub struct Simulation {
    pub cfg: SimConfig,
    pub ledger: Ledger,
    pub ids: IdentityDirectory,
    pub ring: Ring,
    pub rh_nodes: Vec<NodeId>,
    pub setup_failures: Vec<(NodeId, DhtError)>,
    sender_logs: BTreeMap<NodeId, SenderLog>,
}

impl Simulation {
    /// Opens every channel of the spec (funding both wallets first),
    /// selects and funds the helpers, and sets up the ring.
    pub fn build(spec: &NetworkSpec, cfg: SimConfig) -> Result<Simulation, SimError> {
        cfg.validate()?;
        spec.validate()?;
        let ids = IdentityDirectory::bootstrap(spec.nodes, cfg.seed);
        let mut ledger = Ledger::new();
        for n in 0..spec.nodes {
            ledger.register_node(NodeId(n));
        }
        for e in &spec.edges {
            ledger.credit_wallet(e.src, e.balance_src);
            ledger.credit_wallet(e.dst, e.balance_dst);
            ledger
                .pc_open(
                    ids.get(e.src).expect("bootstrapped"),
                    ids.get(e.dst).expect("bootstrapped"),
                    e.balance_src,
                    e.balance_dst,
                )
                .expect("spec validated");
        }
        let rh_nodes = select_rhs(spec, cfg.rh_count, cfg.mode)?;
        for &rh in &rh_nodes {
            ledger.credit_wallet(rh, cfg.rh_wallet);
        }
        let (ring, setup_failures) =
            Ring::setup(cfg.ring_config(), &rh_nodes, &ids, &mut ledger)?;
        Ok(Simulation {
            cfg,
            ledger,
            ids,
            ring,
            rh_nodes,
            setup_failures,
            sender_logs: BTreeMap::new(),
        })
    }

    fn tie_breaker(&self, idx: u32) -> TieBreaker {
        if self.cfg.random_ties {
            TieBreaker::Seeded(Box::new(derive_rng(self.cfg.seed, "tie", idx as u64)))
        } else {
            TieBreaker::Lowest
        }
    }

    /// Runs the whole pipeline for one transaction at the current tick:
    /// sender leg, ring search, validation, receiver-side selection, path
    /// choice. Returns either an early outcome or the payment machine with
    /// its simulated pathfinding latency.
    fn pathfind(
        &mut self,
        tx: &TxSpec,
    ) -> Result<PathfindSuccess, (TxStatus, Tick, TxId)> {
        let mut rng = derive_rng(self.cfg.seed, "tx", tx.idx as u64);
        let mut tie = self.tie_breaker(tx.idx);
        let fallback_txid = {
            let mut bytes = [0u8; 32];
            rng.fill_bytes(&mut bytes);
            TxId(bytes)
        };
        if !self.ledger.is_registered(tx.sender)
            || !self.ledger.is_registered(tx.receiver)
            || self.ids.get(tx.sender).is_none()
        {
            return Err((TxStatus::NoPath, 1, fallback_txid));
        }

        let rh_set: BTreeSet<NodeId> = self.rh_nodes.iter().copied().collect();
        let Some(sender_leg) = find_path_to_rh(
            tx.sender,
            tx.amount,
            &self.ledger,
            &rh_set,
            self.cfg.fee_unit,
            &mut tie,
        ) else {
            return Err((TxStatus::NoPath, 1, fallback_txid));
        };
        let near = self
            .ring
            .ring_of(*sender_leg.last().unwrap())
            .expect("leg ends at a helper");

        let sender_identity = self.ids.get(tx.sender).unwrap();
        let request = PathRequest::new(sender_identity, tx.amount, &mut rng);
        let receiver_vk = self
            .ids
            .get(tx.receiver)
            .map(|r| r.long_term_vk)
            .unwrap_or(crate::identity::LongTermVk([0; 32]));
        self.sender_logs
            .entry(tx.sender)
            .or_default()
            .record(receiver_vk, request.txid, tx.amount);

        let sender_leg_ticks = (sender_leg.len() - 1) as Tick;
        let found = match find_path(&request, near, &self.ring, &mut rng) {
            Ok(found) => found,
            Err(_) => return Err((TxStatus::NoPath, sender_leg_ticks + 1, request.txid)),
        };
        // Request hop to the near helper, the ring search itself, the
        // stack coming back, the end-helper negotiation and the digest.
        let t_pathfind = sender_leg_ticks + found.message_hops + 4;
        if found.stack.is_empty() {
            return Err((TxStatus::NoPath, t_pathfind, request.txid));
        }

        let reporter = sender_identity.temp_vk;
        let validated = validate_paths(
            &found.stack,
            tx.amount,
            self.ledger.now(),
            &self.ring.long_term_vks,
            &reporter,
            &mut self.ledger,
        );
        let disputes = validated.disputes.clone();
        if validated.accepted.is_empty() {
            return Err((TxStatus::ValidationFailed, t_pathfind, request.txid));
        }

        let Some((end_rh, receiver_leg)) = select_end_rh(
            tx.receiver,
            &validated.accepted,
            tx.amount,
            &self.ledger,
            &self.ring,
            self.cfg.fee_unit,
            &mut tie,
        ) else {
            return Err((TxStatus::NoPath, t_pathfind, request.txid));
        };
        let Some(candidate) = choose_path(&validated.accepted, end_rh) else {
            return Err((TxStatus::ValidationFailed, t_pathfind, request.txid));
        };

        let mut nodes = sender_leg;
        for ring_node in &candidate.ring_nodes()[1..] {
            nodes.push(self.ring.node_of(*ring_node).expect("live helper"));
        }
        nodes.extend_from_slice(&receiver_leg[1..]);

        let plan = PaymentPlan::new(
            request.txid,
            tx.amount,
            self.cfg.fee_unit,
            nodes.clone(),
            self.cfg.htlc_delta,
            &mut rng,
        );
        Ok(PathfindSuccess {
            machine: PaymentMachine::new(plan, Fault::None),
            path: nodes,
            ring_hops: candidate.hop_count() as u32,
            t_pathfind,
            disputes,
            txid: request.txid,
        })
    }

    /// Drives every transaction to completion. Admission respects the
    /// in-flight cap and the arrival process; active payments advance one
    /// protocol message per tick; expired locks refund every tick.
    pub fn run(&mut self, txs: &[TxSpec]) -> (MetricsReport, Vec<TransactionOutcome>) {
        let mut arrival_rng = derive_rng(self.cfg.seed, "arrivals", 0);
        let mut next_arrival = 0.0f64;
        let mut runs: Vec<TxRun> = txs
            .iter()
            .map(|&spec| {
                let arrival = match self.cfg.arrival_mean_gap {
                    None => 0,
                    Some(mean) => {
                        let u: f64 = arrival_rng.random();
                        next_arrival += -(1.0 - u).ln() * mean;
                        next_arrival.round() as Tick
                    }
                };
                TxRun {
                    spec,
                    state: TxState::Waiting { arrival },
                    txid: TxId([0; 32]),
                    path: Vec::new(),
                    ring_hops: 0,
                    t_pathfind: 0,
                    disputes: Vec::new(),
                    outcome: None,
                }
            })
            .collect();

        let mut finished = 0usize;
        let mut in_flight = 0u32;
        // Continue from the current clock so a batch can follow earlier
        // activity (churn, previous batches) on the same network.
        let start_tick = self.ledger.now();
        let mut tick: Tick = start_tick;
        while finished < runs.len() {
            self.ledger.advance_to(tick);
            self.ring.maintain(tick, &self.ids, &mut self.ledger);
            self.ledger.refund_expired();

            for run in runs.iter_mut() {
                match &mut run.state {
                    TxState::Waiting { arrival } => {
                        if tick < start_tick + *arrival {
                            continue;
                        }
                        if self.cfg.max_in_flight > 0 && in_flight >= self.cfg.max_in_flight
                        {
                            continue;
                        }
                        in_flight += 1;
                        match self.pathfind(&run.spec) {
                            Ok(found) => {
                                run.txid = found.txid;
                                run.path = found.path;
                                run.ring_hops = found.ring_hops;
                                run.t_pathfind = found.t_pathfind;
                                run.disputes = found.disputes;
                                run.state = TxState::Routing {
                                    machine: found.machine,
                                    route_start: tick + run.t_pathfind,
                                };
                            }
                            Err((status, t_pathfind, txid)) => {
                                run.txid = txid;
                                run.t_pathfind = t_pathfind;
                                run.outcome = Some(TransactionOutcome {
                                    txid,
                                    status,
                                    path: Vec::new(),
                                    path_len: 0,
                                    ring_hops: 0,
                                    t_pathfind,
                                    t_route: 0,
                                    disputes: run.disputes.clone(),
                                });
                                run.state = TxState::Finished;
                                finished += 1;
                                in_flight -= 1;
                            }
                        }
                    }
                    TxState::Routing {
                        machine,
                        route_start,
                    } => {
                        if tick < *route_start {
                            continue;
                        }
                        machine.step(&mut self.ledger);
                        if machine.is_done() {
                            let mut disputes = run.disputes.clone();
                            disputes.extend_from_slice(&machine.extra_disputes);
                            run.outcome = Some(TransactionOutcome {
                                txid: run.txid,
                                status: machine.status().unwrap(),
                                path: run.path.clone(),
                                path_len: (run.path.len() - 1) as u32,
                                ring_hops: run.ring_hops,
                                t_pathfind: run.t_pathfind,
                                t_route: machine.route_ticks(),
                                disputes,
                            });
                            run.state = TxState::Finished;
                            finished += 1;
                            in_flight -= 1;
                        }
                    }
                    TxState::Finished => {}
                }
            }
            tick += 1;
            assert!(
                tick - start_tick < 100_000_000,
                "simulation failed to quiesce"
            );
        }

        let outcomes: Vec<TransactionOutcome> =
            runs.into_iter().map(|r| r.outcome.unwrap()).collect();
        let disputes = self
            .ledger
            .records_of_kind(RecordKind::Dispute)
            .count() as u64;
        (MetricsReport::from_outcomes(&outcomes, disputes), outcomes)
    }
}

/// Convenience wrapper: build and run in one call.
pub fn run_simulation(
    spec: &NetworkSpec,
    txs: &[TxSpec],
    cfg: SimConfig,
) -> Result<(MetricsReport, Vec<TransactionOutcome>, Simulation), SimError> {
    let mut sim = Simulation::build(spec, cfg)?;
    let (report, outcomes) = sim.run(txs);
    Ok((report, outcomes, sim))
}
