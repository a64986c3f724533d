// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Strategy, WorkloadConfig};
use crate::txretry::RetryMode;

pub const CSV_HEADER: &str = "strategy,n,retry,issued,succeeded,failed,failure_rate,mean_ms,p50,p95,p99,seed";

/// Outcome of one workload run. Transaction times are virtual milliseconds
/// from a vote's arrival to the end of its last commit, backoff waits
/// included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub strategy: Strategy,
    pub issued: u32,
    pub succeeded: u32,
    pub failed: u32,
    pub failure_rate: f64,
    /// Commit attempts over all votes.
    pub attempts: u64,
    /// Mean over successful votes; `None` when nothing succeeded.
    pub mean_tx_ms: Option<f64>,
    pub p50_tx_ms: Option<f64>,
    pub p95_tx_ms: Option<f64>,
    pub p99_tx_ms: Option<f64>,
    /// Mean over all votes, failed ones charged up to their last failure.
    pub mean_all_tx_ms: f64,
    pub tx_time_includes_backoff: bool,
    /// Final fold per question id after the store has gone quiet.
    pub per_question_final: BTreeMap<u64, i64>,
    /// Succeeded votes per question id.
    pub per_question_succeeded: BTreeMap<u64, u32>,
    pub config: WorkloadConfig,
}

impl WorkloadReport {
    pub fn total_final(&self) -> i64 {
        self.per_question_final.values().sum()
    }

    pub fn retry_label(&self) -> &'static str {
        match self.config.retry.mode {
            RetryMode::None => "none",
            RetryMode::UntilSuccess { .. } => "until-success",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One CSV row matching [`CSV_HEADER`], without a trailing newline.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
        let n = self.strategy.shard_count().map(|n| n.to_string()).unwrap_or_default();
        let mut row = String::new();
        write!(
            row,
            "{},{},{},{},{},{},{:.6},{},{},{},{},{}",
            self.strategy.name(),
            n,
            self.retry_label(),
            self.issued,
            self.succeeded,
            self.failed,
            self.failure_rate,
            opt(self.mean_tx_ms),
            opt(self.p50_tx_ms),
            opt(self.p95_tx_ms),
            opt(self.p99_tx_ms),
            self.config.seed
        )
        .expect("write to string");
        row
    }

    /// Header plus one row per report, newline terminated.
    pub fn to_csv<'a>(reports: impl IntoIterator<Item = &'a WorkloadReport>) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Nearest-rank percentile of an ascending slice.
pub(crate) fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub(crate) fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}
