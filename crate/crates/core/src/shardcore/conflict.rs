// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

//! Monte Carlo estimate of how often simultaneous writers collide on a
//! statically sharded counter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::property::{prepare_static_update, static_shard_init};
use super::spec::{ShardMode, ShardSpec};
use crate::docstore::{DocStore, Entity, Key, StoreConfig};
use crate::exec;
use crate::value::PropertyValue;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConflictEstimate {
    pub shards: u32,
    pub writers: u32,
    pub trials: u32,
    /// Fraction of all attempted writes that failed with contention.
    pub conflict_rate: f64,
    /// Per-trial standard deviation of the conflict fraction.
    pub std_dev: f64,
}

impl ConflictEstimate {
    pub fn std_error(&self) -> f64 {
        self.std_dev / f64::from(self.trials).sqrt()
    }
}

/// One trial: `writers` clients each fold +1 into a random shard of a fresh
/// `shards`-way counter at the same virtual instant. Returns how many failed.
pub fn simultaneous_conflicts(shards: u32, writers: u32, seed: u64) -> u32 {
    let spec = ShardSpec::counter("votes", ShardMode::Static(shards)).expect("counter spec");
    let owner = Key::new("Question", "1");
    let mut store = DocStore::new(StoreConfig {
        rng_seed: seed,
        ..StoreConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, init) = static_shard_init(&Entity::new(owner.clone()).with("votes", 0), &spec).expect("init");
    for s in init {
        store.put(s.to_entity(&spec)).expect("fresh shard");
    }
    let service = store.config().commit_service_time;
    store.advance_time(service);

    let one = PropertyValue::Int(1);
    let mut pending: Vec<_> = (0..writers)
        .map(|_| {
            prepare_static_update(&mut store, &owner, &one, &spec, &mut rng)
                .expect("prepare")
                .0
        })
        .collect();
    pending
        .iter_mut()
        .map(|tx| store.commit(tx))
        .filter(Result::is_err)
        .count() as u32
}

/// Runs `trials` independent trials (in parallel with the `parallel`
/// feature) and summarizes the conflict fraction.
pub fn estimate_conflict_rate(shards: u32, writers: u32, trials: u32, seed: u64) -> ConflictEstimate {
    let seeds: Vec<u64> = (0..trials).map(|t| exec::derive_seed(seed, u64::from(t))).collect();
    let fractions: Vec<f64> = exec::map(&seeds, |&s| {
        f64::from(simultaneous_conflicts(shards, writers, s)) / f64::from(writers)
    });
    let n = fractions.len().max(1) as f64;
    let mean = fractions.iter().sum::<f64>() / n;
    let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    ConflictEstimate {
        shards,
        writers,
        trials,
        conflict_rate: mean,
        std_dev: var.sqrt(),
    }
}
