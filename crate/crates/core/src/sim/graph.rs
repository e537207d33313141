//! Network specification: CSV ingestion and synthetic generation.
//!
//! A channel row carries both directed balances. Ingestion mirrors the
//! usual data pruning: rows with a non-positive balance on either side are
//! dropped and counted rather than rejected.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

use crate::{Amount, NodeId};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: self-loop on node {node}")]
    SelfLoop { line: u64, node: u32 },
    #[error("line {line}: duplicate channel {a}-{b}")]
    DuplicatePair { line: u64, a: u32, b: u32 },
    #[error("synthetic parameters degenerate: {0}")]
    Degenerate(&'static str),
}

/// One channel: endpoints and each side's deposit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub src: NodeId,
    pub dst: NodeId,
    pub balance_src: Amount,
    pub balance_dst: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphSource {
    Csv(String),
    Synthetic { seed: u64 },
}

/// A validated network: node count, channels, provenance and how many
/// input rows the ingestion pruning removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub nodes: u32,
    pub edges: Vec<EdgeSpec>,
    pub source: GraphSource,
    pub dropped_rows: u32,
}

impl NetworkSpec {
    /// Directed arcs with positive balance, the graph the SCC analysis and
    /// out-degree ranking run on.
    pub fn arcs(&self) -> Vec<(u32, u32)> {
        let mut arcs = Vec::with_capacity(self.edges.len() * 2);
        for e in &self.edges {
            if e.balance_src > 0 {
                arcs.push((e.src.0, e.dst.0));
            }
            if e.balance_dst > 0 {
                arcs.push((e.dst.0, e.src.0));
            }
        }
        arcs
    }

    pub fn out_degrees(&self) -> Vec<u32> {
        let mut deg = vec![0u32; self.nodes as usize];
        for (u, _) in self.arcs() {
            deg[u as usize] += 1;
        }
        deg
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let mut pairs = BTreeSet::new();
        for (i, e) in self.edges.iter().enumerate() {
            let line = i as u64 + 1;
            if e.src == e.dst {
                return Err(GraphError::SelfLoop {
                    line,
                    node: e.src.0,
                });
            }
            let key = (e.src.min(e.dst), e.src.max(e.dst));
            if !pairs.insert(key) {
                return Err(GraphError::DuplicatePair {
                    line,
                    a: key.0 .0,
                    b: key.1 .0,
                });
            }
            if e.src.0 >= self.nodes || e.dst.0 >= self.nodes {
                return Err(GraphError::Parse {
                    line,
                    message: format!("edge endpoint beyond node count {}", self.nodes),
                });
            }
        }
        Ok(())
    }
}

/// Loads `src,dst,lw_src_to_dst,lw_dst_to_src` rows. Rows where either
/// direction is non-positive are dropped and counted; structural problems
/// are hard errors with their line number.
pub fn load_graph(path: &Path) -> Result<NetworkSpec, GraphError> {
    let file = std::fs::File::open(path)?;
    let mut spec = parse_graph_csv(file)?;
    spec.source = GraphSource::Csv(path.display().to_string());
    Ok(spec)
}

pub fn parse_graph_csv(reader: impl Read) -> Result<NetworkSpec, GraphError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut edges = Vec::new();
    let mut pairs = BTreeSet::new();
    let mut dropped = 0u32;
    let mut max_node = 0u32;
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
        let field = |i: usize| -> Result<i64, GraphError> {
            record[i].parse::<i64>().map_err(|e| GraphError::Parse {
                line,
                message: format!("field {}: {e}", i + 1),
            })
        };
        let src = field(0)?;
        let dst = field(1)?;
        let lw_src = field(2)?;
        let lw_dst = field(3)?;
        if src < 0 || dst < 0 || src > u32::MAX as i64 || dst > u32::MAX as i64 {
            return Err(GraphError::Parse {
                line,
                message: "node ids must be unsigned 32-bit".into(),
            });
        }
        let (src, dst) = (src as u32, dst as u32);
        if src == dst {
            return Err(GraphError::SelfLoop { line, node: src });
        }
        if lw_src <= 0 || lw_dst <= 0 {
            dropped += 1;
            continue;
        }
        let key = (src.min(dst), src.max(dst));
        if !pairs.insert(key) {
            return Err(GraphError::DuplicatePair {
                line,
                a: key.0,
                b: key.1,
            });
        }
        max_node = max_node.max(src).max(dst);
        edges.push(EdgeSpec {
            src: NodeId(src),
            dst: NodeId(dst),
            balance_src: lw_src as Amount,
            balance_dst: lw_dst as Amount,
        });
    }
    Ok(NetworkSpec {
        nodes: if edges.is_empty() && dropped == 0 {
            0
        } else {
            max_node + 1
        },
        edges,
        source: GraphSource::Csv(String::new()),
        dropped_rows: dropped,
    })
}

/// Scale-free generator parameters. `components` disjoint preferential-
/// attachment graphs are laid out over consecutive id blocks, which gives
/// the multi-component experiments their disjoint SCCs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub nodes: u32,
    /// Channels each newcomer opens toward degree-weighted targets.
    pub attach: u32,
    pub components: u32,
    pub balance_min: Amount,
    pub balance_max: Amount,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            nodes: 2_000,
            attach: 2,
            components: 1,
            balance_min: 200,
            balance_max: 1_000,
        }
    }
}

/// Deterministic preferential attachment: identical seeds give identical
/// edge lists. The degree-weighted endpoint list makes early nodes hubs,
/// so out-degree-based helper selection has something to select.
pub fn generate_synthetic(params: &SyntheticParams, seed: u64) -> Result<NetworkSpec, GraphError> {
    if params.nodes < 2 {
        return Err(GraphError::Degenerate("need at least two nodes"));
    }
    if params.attach == 0 {
        return Err(GraphError::Degenerate("attach must be at least 1"));
    }
    if params.components == 0 || params.components > params.nodes / 2 {
        return Err(GraphError::Degenerate(
            "components must be in 1..=nodes/2",
        ));
    }
    if params.balance_min == 0 || params.balance_min > params.balance_max {
        return Err(GraphError::Degenerate("balance range empty"));
    }

    let mut edges = Vec::new();
    let per = params.nodes / params.components;
    let mut start = 0u32;
    for c in 0..params.components {
        let count = if c + 1 == params.components {
            params.nodes - start
        } else {
            per
        };
        let mut rng = component_rng(seed, c);
        grow_component(&mut edges, start, count, params, &mut rng);
        start += count;
    }
    Ok(NetworkSpec {
        nodes: params.nodes,
        edges,
        source: GraphSource::Synthetic { seed },
        dropped_rows: 0,
    })
}

fn component_rng(seed: u64, component: u32) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"raced.synthetic.v1");
    hasher.update(seed.to_be_bytes());
    hasher.update(component.to_be_bytes());
    ChaCha20Rng::from_seed(hasher.finalize().into())
}

fn grow_component(
    edges: &mut Vec<EdgeSpec>,
    base: u32,
    count: u32,
    params: &SyntheticParams,
    rng: &mut ChaCha20Rng,
) {
    let balance = |rng: &mut ChaCha20Rng| -> Amount {
        rng.random_range(params.balance_min..=params.balance_max)
    };
    // Degree-weighted endpoint pool: each edge contributes both ends.
    let mut pool: Vec<u32> = Vec::new();
    let m0 = (params.attach + 1).min(count);
    for a in 0..m0 {
        for b in (a + 1)..m0 {
            let (ba, bb) = (balance(rng), balance(rng));
            edges.push(EdgeSpec {
                src: NodeId(base + a),
                dst: NodeId(base + b),
                balance_src: ba,
                balance_dst: bb,
            });
            pool.push(base + a);
            pool.push(base + b);
        }
    }
    for v in m0..count {
        let node = base + v;
        let mut targets = BTreeSet::new();
        let want = params.attach.min(v) as usize;
        let mut guard = 0;
        while targets.len() < want && guard < 10_000 {
            guard += 1;
            let t = pool[rng.random_range(0..pool.len())];
            if t != node {
                targets.insert(t);
            }
        }
        for t in targets {
            let (ba, bb) = (balance(rng), balance(rng));
            edges.push(EdgeSpec {
                src: NodeId(node),
                dst: NodeId(t),
                balance_src: ba,
                balance_dst: bb,
            });
            pool.push(node);
            pool.push(t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_rows_parse_into_three_edges() {
        let csv = "0,1,100,50\n1,2,70,70\n2,3,10,20\n";
        let spec = parse_graph_csv(csv.as_bytes()).unwrap();
        assert_eq!(spec.edges.len(), 3);
        assert_eq!(spec.nodes, 4);
        assert_eq!(spec.dropped_rows, 0);
        spec.validate().unwrap();
    }

    #[test]
    fn non_positive_rows_are_dropped_and_counted() {
        let csv = "0,1,100,50\n1,2,0,70\n2,3,-5,20\n";
        let spec = parse_graph_csv(csv.as_bytes()).unwrap();
        assert_eq!(spec.edges.len(), 1);
        assert_eq!(spec.dropped_rows, 2);
    }

    #[test]
    fn duplicate_pair_is_rejected_with_line() {
        let csv = "0,1,100,50\n1,0,70,70\n";
        match parse_graph_csv(csv.as_bytes()) {
            Err(GraphError::DuplicatePair { line, a, b }) => {
                assert_eq!(line, 2);
                assert_eq!((a, b), (0, 1));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_its_line() {
        let csv = "0,1,100,50\n1,2,abc,70\n";
        match parse_graph_csv(csv.as_bytes()) {
            Err(GraphError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn self_loop_is_rejected() {
        let csv = "3,3,10,10\n";
        assert!(matches!(
            parse_graph_csv(csv.as_bytes()),
            Err(GraphError::SelfLoop { node: 3, .. })
        ));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let params = SyntheticParams {
            nodes: 300,
            ..Default::default()
        };
        let a = generate_synthetic(&params, 42).unwrap();
        let b = generate_synthetic(&params, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&params, 43).unwrap();
        assert_ne!(a.edges, c.edges);
    }

    #[test]
    fn synthetic_degree_distribution_is_heavy_tailed() {
        let params = SyntheticParams {
            nodes: 2_000,
            ..Default::default()
        };
        let spec = generate_synthetic(&params, 42).unwrap();
        spec.validate().unwrap();
        let mut deg = spec.out_degrees();
        deg.sort_unstable();
        let median = deg[deg.len() / 2];
        let max = *deg.last().unwrap();
        assert!(
            max >= 20 * median,
            "max {max} vs median {median}: tail too thin"
        );
    }

    #[test]
    fn two_node_graph_is_a_single_edge() {
        let params = SyntheticParams {
            nodes: 2,
            attach: 2,
            components: 1,
            balance_min: 10,
            balance_max: 20,
        };
        let spec = generate_synthetic(&params, 1).unwrap();
        assert_eq!(spec.edges.len(), 1);
    }

    #[test]
    fn components_are_disjoint() {
        let params = SyntheticParams {
            nodes: 400,
            components: 8,
            ..Default::default()
        };
        let spec = generate_synthetic(&params, 7).unwrap();
        spec.validate().unwrap();
        let comps =
            crate::sim::scc::strongly_connected_components(spec.nodes, &spec.arcs());
        let big: Vec<_> = comps.iter().filter(|c| c.len() > 1).collect();
        assert_eq!(big.len(), 8);
        // Every block of 50 ids stays within its own component.
        for c in big {
            let block = c[0] / 50;
            assert!(c.iter().all(|&n| n / 50 == block));
        }
    }

    #[test]
    fn degenerate_parameters_error() {
        let bad = SyntheticParams {
            nodes: 1,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad, 1).is_err());
        let bad = SyntheticParams {
            balance_min: 50,
            balance_max: 10,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad, 1).is_err());
    }
}
