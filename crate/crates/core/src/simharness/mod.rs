// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

//! Discrete-event voting workload. Votes arrive as a Poisson process spread
//! uniformly over a set of questions; each vote is an independent client
//! that loads its question, votes up and saves under one sharding strategy.
//!
//! Timing of one attempt, with `r` the read latency and `s` the store's
//! commit service time:
//!
//! | strategy   | load | shard read / tx open | commit | done   |
//! |------------|------|----------------------|--------|--------|
//! | naive      | t    | -                    | t+r    | t+r+s  |
//! | static(n)  | t    | t+r                  | t+2r   | t+2r+s |
//! | dynamic    | t    | t+r                  | t+2r   | t+2r+s |
//! | group(n)   | t    | t+r                  | t+2r   | t+2r+s |
//!
//! A failed attempt is charged up to its failed commit. Retries wait out the
//! policy's backoff; the naive arm then reloads, the sharded arms reopen
//! their write with the unsaved delta kept.

mod report;
mod run;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use report::{WorkloadReport, CSV_HEADER};
pub use run::run_workload;

use crate::docstore::StoreConfig;
use crate::exec;
use crate::txretry::{PolicyError, RetryPolicy};

/// How votes reach the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// The vote count is a plain property of the question entity.
    Naive,
    /// `n` static shards per question.
    Static(u32),
    /// Every vote appends a fresh shard.
    Dynamic,
    /// Each vote is a member entity written into one of `n` replica groups.
    Group(u32),
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Static(_) => "static",
            Strategy::Dynamic => "dynamic",
            Strategy::Group(_) => "group",
        }
    }

    /// Number of places a question's votes are spread over, if fixed.
    pub fn shard_count(self) -> Option<u32> {
        match self {
            Strategy::Naive => Some(1),
            Strategy::Static(n) | Strategy::Group(n) => Some(n),
            Strategy::Dynamic => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Static(n) | Strategy::Group(n) => write!(f, "{}({n})", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub questions: u32,
    pub total_votes: u32,
    /// Votes per virtual second, across all questions.
    pub arrival_rate: f64,
    pub strategy: Strategy,
    pub retry: RetryPolicy,
    pub seed: u64,
    pub store: StoreConfig,
    /// Virtual time between issuing a read and acting on its result.
    #[serde(with = "crate::millis", rename = "read_latency_ms")]
    pub read_latency: Duration,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            questions: 16,
            total_votes: 2000,
            arrival_rate: 75.0,
            strategy: Strategy::Static(16),
            retry: RetryPolicy::until_success(),
            seed: 0,
            store: StoreConfig::default(),
            read_latency: Duration::from_millis(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("`{0}` must be positive")]
    NotPositive(&'static str),
    #[error("arrival_rate must be a positive finite number, got {0}")]
    ArrivalRate(f64),
    #[error("a store must allow at least one group per transaction")]
    GroupCap,
    #[error("invalid retry policy: {0}")]
    Retry(#[from] PolicyError),
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.questions == 0 {
            return Err(ConfigError::NotPositive("questions"));
        }
        if self.total_votes == 0 {
            return Err(ConfigError::NotPositive("total_votes"));
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return Err(ConfigError::ArrivalRate(self.arrival_rate));
        }
        if matches!(self.strategy, Strategy::Static(0) | Strategy::Group(0)) {
            return Err(ConfigError::NotPositive("shards"));
        }
        if self.store.max_groups_per_tx == 0 {
            return Err(ConfigError::GroupCap);
        }
        self.retry.validate()?;
        Ok(())
    }

    /// Same workload with another seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        WorkloadConfig { seed, ..self.clone() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("workload aborted: {0}")]
    Run(#[from] crate::mapper::MapperError),
}

/// Runs every config on its own store; results keep the input order.
pub fn sweep(configs: &[WorkloadConfig]) -> Vec<Result<WorkloadReport, HarnessError>> {
    exec::map(configs, run_workload)
}

pub fn sweep_sequential(configs: &[WorkloadConfig]) -> Vec<Result<WorkloadReport, HarnessError>> {
    exec::map_sequential(configs, run_workload)
}

#[cfg(feature = "parallel")]
pub fn sweep_parallel(configs: &[WorkloadConfig]) -> Vec<Result<WorkloadReport, HarnessError>> {
    exec::map_parallel(configs, run_workload)
}

/// Seeds `base, base+1, ..` for multi-seed averages.
pub fn seed_range(base: u64, count: u64) -> Vec<u64> {
    (0..count).map(|i| base.wrapping_add(i)).collect()
}

/// One run of `config` per seed.
pub fn run_seeds(config: &WorkloadConfig, seeds: &[u64]) -> Vec<Result<WorkloadReport, HarnessError>> {
    let configs: Vec<_> = seeds.iter().map(|&s| config.with_seed(s)).collect();
    sweep(&configs)
}
