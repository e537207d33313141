//! `raced` command line: run simulations and check the helper ring
//! against a brute-force finger oracle.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use raced_core::dht::{finger_targets, RingId};
use raced_core::sim::{
    emit_report, generate_synthetic, generate_txs, load_graph, load_txs, write_traces,
    NetworkSpec, ReportFormat, SimConfig, SimMode, Simulation, SyntheticParams,
};

#[derive(Parser)]
#[command(name = "raced", about = "payment-channel routing over a helper ring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full simulation and write the metrics report.
    Sim(SimArgs),
    /// Build the ring for a graph and diff every finger table against a
    /// brute-force successor oracle; exits non-zero on any mismatch.
    DhtCheck(DhtCheckArgs),
}

#[derive(Args)]
struct GraphArgs {
    /// Channel CSV: `src,dst,lw_src_to_dst,lw_dst_to_src`.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Synthetic generator, e.g. `n=2000,seed=42,attach=2,components=1,bal-min=200,bal-max=1000`.
    #[arg(long)]
    synthetic: Option<String>,
}

impl GraphArgs {
    fn load(&self) -> Result<NetworkSpec> {
        let spec = match (&self.graph, &self.synthetic) {
            (Some(path), None) => load_graph(path)
                .with_context(|| format!("loading graph {}", path.display()))?,
            (None, Some(params)) => {
                let (params, seed) = parse_synthetic(params)?;
                generate_synthetic(&params, seed)?
            }
            _ => bail!("exactly one of --graph or --synthetic is required"),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Transaction CSV: `idx,sender_id,receiver_id,amount`.
    #[arg(long)]
    txs: Option<PathBuf>,
    /// Generate transactions instead, e.g. `n=5000,amt-min=1,amt-max=20`.
    #[arg(long)]
    gen_txs: Option<String>,
    #[arg(long, default_value_t = 8)]
    rh_count: u32,
    /// `1scc` or `kscc`.
    #[arg(long, default_value = "1scc")]
    mode: String,
    #[arg(long, default_value_t = 32)]
    m_bits: u8,
    /// Attestation epoch length in ticks.
    #[arg(long, default_value_t = 100)]
    delta: u64,
    /// Unit fee charged per hop.
    #[arg(long, default_value_t = 1)]
    fee: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Report output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `json` or `kv`.
    #[arg(long, default_value = "json")]
    format: String,
    /// Per-transaction trace CSV.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Ledger transcript: `seq,kind,hex(payload)`.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Key dump: `node,vk,VK,sigma_VK`.
    #[arg(long)]
    keys: Option<PathBuf>,
    /// Per-hop HTLC timeout spacing in ticks.
    #[arg(long, default_value_t = 16)]
    htlc_delta: u64,
    /// Advertised caps round down to this bucket.
    #[arg(long, default_value_t = 10)]
    bucket: u64,
    /// Transactions in flight at once; 0 = all.
    #[arg(long, default_value_t = 0)]
    max_in_flight: u32,
    /// Mean arrival gap in ticks (Poisson); omitted = all at tick 0.
    #[arg(long)]
    poisson_gap: Option<f64>,
    /// Resolve score ties with a seeded coin instead of lowest-id.
    #[arg(long)]
    random_ties: bool,
    /// Deposit per side of helper-to-finger channels.
    #[arg(long, default_value_t = 50_000)]
    finger_deposit: u64,
    /// Wallet credit granted to each selected helper.
    #[arg(long, default_value_t = 3_000_000)]
    rh_wallet: u64,
}

#[derive(Args)]
struct DhtCheckArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, default_value_t = 8)]
    rh_count: u32,
    #[arg(long, default_value = "1scc")]
    mode: String,
    #[arg(long, default_value_t = 32)]
    m_bits: u8,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn parse_kv_list(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got `{part}`"))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_synthetic(text: &str) -> Result<(SyntheticParams, u64)> {
    let kv = parse_kv_list(text)?;
    let mut params = SyntheticParams::default();
    let mut seed = 42u64;
    for (k, v) in &kv {
        match k.as_str() {
            "n" | "nodes" => params.nodes = v.parse()?,
            "seed" => seed = v.parse()?,
            "attach" => params.attach = v.parse()?,
            "components" => params.components = v.parse()?,
            "bal-min" => params.balance_min = v.parse()?,
            "bal-max" => params.balance_max = v.parse()?,
            other => bail!("unknown synthetic key `{other}`"),
        }
    }
    Ok((params, seed))
}

fn build_config(args: &SimArgs) -> Result<SimConfig> {
    let mode = SimMode::parse(&args.mode)
        .ok_or_else(|| anyhow!("mode must be `1scc` or `kscc`"))?;
    Ok(SimConfig {
        rh_count: args.rh_count,
        mode,
        m_bits: args.m_bits,
        epoch: args.delta,
        fee_unit: args.fee,
        seed: args.seed,
        htlc_delta: args.htlc_delta,
        max_bucket: args.bucket,
        finger_deposit: args.finger_deposit,
        rh_wallet: args.rh_wallet,
        max_in_flight: args.max_in_flight,
        arrival_mean_gap: args.poisson_gap,
        random_ties: args.random_ties,
    })
}

fn run_sim(args: SimArgs) -> Result<()> {
    let spec = args.graph.load()?;
    let cfg = build_config(&args)?;
    let format = ReportFormat::parse(&args.format)
        .ok_or_else(|| anyhow!("format must be `json` or `kv`"))?;

    let txs = match (&args.txs, &args.gen_txs) {
        (Some(path), None) => {
            load_txs(path).with_context(|| format!("loading txs {}", path.display()))?
        }
        (None, Some(params)) => {
            let kv = parse_kv_list(params)?;
            let count: u32 = kv.get("n").map(|v| v.parse()).transpose()?.unwrap_or(1_000);
            let amt_min: u64 = kv
                .get("amt-min")
                .map(|v| v.parse())
                .transpose()?
                .unwrap_or(1);
            let amt_max: u64 = kv
                .get("amt-max")
                .map(|v| v.parse())
                .transpose()?
                .unwrap_or(20);
            generate_txs(&spec, &cfg, count, amt_min, amt_max)
        }
        _ => bail!("exactly one of --txs or --gen-txs is required"),
    };

    let started = Instant::now();
    let mut sim = Simulation::build(&spec, cfg)?;
    for (node, err) in &sim.setup_failures {
        eprintln!("warning: volunteer {node} excluded from the ring: {err}");
    }
    let (report, outcomes) = sim.run(&txs);
    // Wall-clock goes to stderr only; report files must replay
    // byte-identically across runs.
    eprintln!(
        "simulated {} transactions in {:.2?} wall-clock ({} helpers, {} nodes, {} channels dropped {} rows)",
        report.attempted,
        started.elapsed(),
        sim.rh_nodes.len(),
        spec.nodes,
        spec.edges.len(),
        spec.dropped_rows,
    );

    match &args.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            emit_report(&report, format, &mut w)?;
            w.flush()?;
        }
        None => {
            let mut stdout = std::io::stdout();
            emit_report(&report, format, &mut stdout)?;
            writeln!(stdout)?;
        }
    }
    if let Some(path) = &args.traces {
        let mut w = BufWriter::new(File::create(path)?);
        write_traces(&outcomes, &mut w)?;
    }
    if let Some(path) = &args.ledger {
        let mut w = BufWriter::new(File::create(path)?);
        sim.ledger.export(&mut w)?;
    }
    if let Some(path) = &args.keys {
        let mut w = BufWriter::new(File::create(path)?);
        sim.ids.write_key_dump(&mut w)?;
    }
    Ok(())
}

fn run_dht_check(args: DhtCheckArgs) -> Result<()> {
    let spec = args.graph.load()?;
    let mode = SimMode::parse(&args.mode)
        .ok_or_else(|| anyhow!("mode must be `1scc` or `kscc`"))?;
    let cfg = SimConfig {
        rh_count: args.rh_count,
        mode,
        m_bits: args.m_bits,
        seed: args.seed,
        ..SimConfig::default()
    };
    let sim = Simulation::build(&spec, cfg)?;
    let mut dump = Vec::new();
    sim.ring.dump(&mut dump)?;
    print!("{}", String::from_utf8_lossy(&dump));

    // Brute-force oracle: resolve every finger target by a linear scan
    // over the sorted membership, independent of the production lookup.
    let members: Vec<RingId> = sim.ring.members().into_iter().collect();
    let mut mismatches = 0u32;
    for helper in sim.ring.helpers() {
        for (j, target) in finger_targets(helper.ring_id, args.m_bits).iter().enumerate() {
            let oracle = members
                .iter()
                .find(|m| m.0 >= target.0)
                .or_else(|| members.first())
                .copied()
                .unwrap();
            let resolved = helper.finger_raw[j];
            if resolved != oracle {
                mismatches += 1;
                println!(
                    "MISMATCH helper {} finger {}: resolved {} oracle {}",
                    helper.ring_id, j, resolved, oracle
                );
            }
        }
    }
    if mismatches > 0 {
        bail!("{mismatches} finger entries differ from the oracle");
    }
    eprintln!(
        "ok: {} helpers, every finger entry matches the successor oracle",
        members.len()
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Sim(args) => run_sim(args),
        Command::DhtCheck(args) => run_dht_check(args),
    }
}
