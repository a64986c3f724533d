// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

//! Property sharding (static and dynamic), entity-group sharding, fold
//! aggregation and shard compaction, built directly on [`crate::docstore`].

mod conflict;
mod fold;
mod group;
mod property;
mod spec;

pub use conflict::{estimate_conflict_rate, simultaneous_conflicts, ConflictEstimate};
pub use fold::{check_fold_laws, probe_value, FoldDomain, FoldFn, FoldLawViolation, FoldRegistry};
pub use group::{group_shard_write, group_union, group_write_at, prepare_group_write, replica_root, replica_roots};
pub use property::{
    compact, dynamic_shard_append, dynamic_shard_init, fold_all, fold_values, load_shards, make_shard_keys,
    pick_random_shard, prepare_dynamic_append, prepare_static_update, static_shard_init, static_shard_update,
    ShardEntity,
};
pub use spec::{ShardMode, ShardSpec, ShardSpecConfig};

use crate::docstore::{Key, StoreError};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ShardError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{key} has no property `{property}`")]
    MissingProperty { key: Key, property: String },
    #[error("operation requires {expected} sharding")]
    WrongMode { expected: &'static str },
    #[error("fold `{fold}` cannot take a {found} operand")]
    FoldType { fold: String, found: &'static str },
    #[error("fold `{fold}` overflowed")]
    Overflow { fold: String },
    #[error("unknown fold `{0}`")]
    UnknownFold(String),
    #[error("fold `{0}` is already registered")]
    DuplicateFold(String),
    #[error("fold law violated: {0}")]
    FoldLaw(FoldLawViolation),
    #[error("shard count must be at least 1")]
    InvalidShardCount,
    #[error("invalid shard spec: {0}")]
    InvalidSpec(String),
}

impl ShardError {
    pub fn is_contention(&self) -> bool {
        matches!(self, ShardError::Store(e) if e.is_contention())
    }
}
