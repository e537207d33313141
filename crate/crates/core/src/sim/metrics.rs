//! Aggregation of per-transaction outcomes into the run report.

use serde::{Deserialize, Serialize};
use std::io::{self, Write};

use crate::routing::{TransactionOutcome, TxStatus};

/// Flat summary of one simulation run. Path-length and routing statistics
/// cover successful transactions; pathfinding statistics cover everything
/// attempted. Standard deviations are population deviations and read zero
/// for fewer than two samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub attempted: u64,
    pub successes: u64,
    pub success_ratio: f64,
    pub mean_path_len: f64,
    pub stdev_path_len: f64,
    pub mean_pathfind_ticks: f64,
    pub stdev_pathfind_ticks: f64,
    pub mean_route_ticks: f64,
    pub stdev_route_ticks: f64,
    pub no_path: u64,
    pub validation_failed: u64,
    pub liquidity_failed: u64,
    pub timeout: u64,
    pub disputes: u64,
}

fn mean_stdev(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
        / samples.len() as f64;
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn from_outcomes(outcomes: &[TransactionOutcome], disputes: u64) -> MetricsReport {
        let mut counts = [0u64; 5];
        for o in outcomes {
            let slot = match o.status {
                TxStatus::Success => 0,
                TxStatus::NoPath => 1,
                TxStatus::ValidationFailed => 2,
                TxStatus::LiquidityFailed => 3,
                TxStatus::Timeout => 4,
            };
            counts[slot] += 1;
        }
        let successes: Vec<&TransactionOutcome> = outcomes
            .iter()
            .filter(|o| o.status == TxStatus::Success)
            .collect();
        let (mean_path_len, stdev_path_len) = mean_stdev(
            &successes.iter().map(|o| o.path_len as f64).collect::<Vec<_>>(),
        );
        let (mean_route_ticks, stdev_route_ticks) = mean_stdev(
            &successes.iter().map(|o| o.t_route as f64).collect::<Vec<_>>(),
        );
        let (mean_pathfind_ticks, stdev_pathfind_ticks) = mean_stdev(
            &outcomes.iter().map(|o| o.t_pathfind as f64).collect::<Vec<_>>(),
        );
        let attempted = outcomes.len() as u64;
        MetricsReport {
            attempted,
            successes: counts[0],
            success_ratio: if attempted == 0 {
                0.0
            } else {
                counts[0] as f64 / attempted as f64
            },
            mean_path_len,
            stdev_path_len,
            mean_pathfind_ticks,
            stdev_pathfind_ticks,
            mean_route_ticks,
            stdev_route_ticks,
            no_path: counts[1],
            validation_failed: counts[2],
            liquidity_failed: counts[3],
            timeout: counts[4],
            disputes,
        }
    }

    pub fn failure_total(&self) -> u64 {
        self.no_path + self.validation_failed + self.liquidity_failed + self.timeout
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<MetricsReport, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Flat `key=value` lines with stable key names and order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.kv_pairs() {
            out.push_str(&key);
            out.push('=');
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    fn kv_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("attempted".into(), self.attempted.to_string()),
            ("successes".into(), self.successes.to_string()),
            ("success_ratio".into(), self.success_ratio.to_string()),
            ("mean_path_len".into(), self.mean_path_len.to_string()),
            ("stdev_path_len".into(), self.stdev_path_len.to_string()),
            (
                "mean_pathfind_ticks".into(),
                self.mean_pathfind_ticks.to_string(),
            ),
            (
                "stdev_pathfind_ticks".into(),
                self.stdev_pathfind_ticks.to_string(),
            ),
            ("mean_route_ticks".into(), self.mean_route_ticks.to_string()),
            (
                "stdev_route_ticks".into(),
                self.stdev_route_ticks.to_string(),
            ),
            ("no_path".into(), self.no_path.to_string()),
            (
                "validation_failed".into(),
                self.validation_failed.to_string(),
            ),
            (
                "liquidity_failed".into(),
                self.liquidity_failed.to_string(),
            ),
            ("timeout".into(), self.timeout.to_string()),
            ("disputes".into(), self.disputes.to_string()),
        ]
    }

    pub fn from_kv(text: &str) -> Result<MetricsReport, String> {
        let mut report = MetricsReport::from_outcomes(&[], 0);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("bad line: {line}"))?;
            let u = || value.parse::<u64>().map_err(|e| e.to_string());
            let f = || value.parse::<f64>().map_err(|e| e.to_string());
            match key {
                "attempted" => report.attempted = u()?,
                "successes" => report.successes = u()?,
                "success_ratio" => report.success_ratio = f()?,
                "mean_path_len" => report.mean_path_len = f()?,
                "stdev_path_len" => report.stdev_path_len = f()?,
                "mean_pathfind_ticks" => report.mean_pathfind_ticks = f()?,
                "stdev_pathfind_ticks" => report.stdev_pathfind_ticks = f()?,
                "mean_route_ticks" => report.mean_route_ticks = f()?,
                "stdev_route_ticks" => report.stdev_route_ticks = f()?,
                "no_path" => report.no_path = u()?,
                "validation_failed" => report.validation_failed = u()?,
                "liquidity_failed" => report.liquidity_failed = u()?,
                "timeout" => report.timeout = u()?,
                "disputes" => report.disputes = u()?,
                other => return Err(format!("unknown key {other}")),
            }
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Kv,
}

impl ReportFormat {
    pub fn parse(text: &str) -> Option<ReportFormat> {
        match text {
            "json" => Some(ReportFormat::Json),
            "kv" => Some(ReportFormat::Kv),
            _ => None,
        }
    }
}

pub fn emit_report(
    report: &MetricsReport,
    format: ReportFormat,
    w: &mut impl Write,
) -> io::Result<()> {
    match format {
        ReportFormat::Json => w.write_all(report.to_json().as_bytes()),
        ReportFormat::Kv => w.write_all(report.to_kv().as_bytes()),
    }
}

/// Per-transaction trace rows:
/// `txid,status,path(node-id list),t_pathfind_ticks,t_route_ticks,disputes`.
pub fn write_traces(outcomes: &[TransactionOutcome], w: &mut impl Write) -> io::Result<()> {
    for o in outcomes {
        let path: Vec<String> = o.path.iter().map(|n| n.to_string()).collect();
        let disputes: Vec<String> = o.disputes.iter().map(|d| d.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            o.txid,
            o.status.as_str(),
            path.join(";"),
            o.t_pathfind,
            o.t_route,
            disputes.join(";")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{NodeId, TxId};

    fn outcome(status: TxStatus, path_len: u32, tp: u64, tr: u64) -> TransactionOutcome {
        TransactionOutcome {
            txid: TxId([1; 32]),
            status,
            path: (0..=path_len).map(NodeId).collect(),
            path_len,
            ring_hops: 1,
            t_pathfind: tp,
            t_route: tr,
            disputes: vec![],
        }
    }

    #[test]
    fn counts_sum_to_attempted() {
        let outcomes = vec![
            outcome(TxStatus::Success, 3, 10, 6),
            outcome(TxStatus::Success, 5, 12, 10),
            outcome(TxStatus::NoPath, 0, 2, 0),
            outcome(TxStatus::LiquidityFailed, 4, 9, 30),
            outcome(TxStatus::Timeout, 4, 9, 40),
        ];
        let report = MetricsReport::from_outcomes(&outcomes, 2);
        assert_eq!(report.attempted, 5);
        assert_eq!(report.successes + report.failure_total(), 5);
        assert_eq!(report.success_ratio, 2.0 / 5.0);
        // Path lengths are averaged over successes only.
        assert_eq!(report.mean_path_len, 4.0);
        assert_eq!(report.disputes, 2);
    }

    #[test]
    fn json_round_trips() {
        let report = MetricsReport::from_outcomes(
            &[outcome(TxStatus::Success, 3, 10, 6)],
            1,
        );
        let parsed = MetricsReport::from_json(&report.to_json()).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn kv_round_trips_and_matches_json_numbers() {
        let report = MetricsReport::from_outcomes(
            &[
                outcome(TxStatus::Success, 3, 10, 6),
                outcome(TxStatus::Success, 4, 11, 8),
                outcome(TxStatus::NoPath, 0, 3, 0),
            ],
            0,
        );
        let parsed = MetricsReport::from_kv(&report.to_kv()).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn single_sample_stdev_is_zero() {
        let report =
            MetricsReport::from_outcomes(&[outcome(TxStatus::Success, 3, 10, 6)], 0);
        assert_eq!(report.stdev_path_len, 0.0);
        assert_eq!(report.stdev_route_ticks, 0.0);
        assert!(report.to_kv().contains("stdev_path_len=0"));
    }

    #[test]
    fn empty_run_is_all_zero() {
        let report = MetricsReport::from_outcomes(&[], 0);
        assert_eq!(report.attempted, 0);
        assert_eq!(report.success_ratio, 0.0);
    }
}
