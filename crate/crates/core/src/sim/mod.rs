//! Experiment harness: graph ingestion and generation, component
//! analysis, helper selection, the concurrent transaction driver and
//! metrics reporting.

pub mod driver;
pub mod graph;
pub mod metrics;
pub mod scc;

pub use driver::{
    derive_rng, generate_txs, load_txs, parse_txs_csv, run_simulation, select_rhs,
    SimConfig, SimError, SimMode, Simulation, TxSpec,
};
pub use graph::{
    generate_synthetic, load_graph, parse_graph_csv, EdgeSpec, GraphError, GraphSource,
    NetworkSpec, SyntheticParams,
};
pub use metrics::{emit_report, write_traces, MetricsReport, ReportFormat};
pub use scc::{components_by_size, strongly_connected_components};
