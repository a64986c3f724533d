// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fold::{check_fold_laws, FoldFn, FoldRegistry};
use super::ShardError;
use crate::docstore::Key;
use crate::value::PropertyValue;

/// Number of randomized probes a spec's neutral element is checked with on
/// construction.
const SPEC_PROBES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShardMode {
    /// A fixed number of shards with deterministic ids `<owner>-1 .. <owner>-n`.
    #[serde(rename = "static")]
    Static(u32),
    /// One new shard per write, compacted later.
    #[serde(rename = "dynamic")]
    Dynamic,
}

/// Serialized form of a [`ShardSpec`]; the fold is referenced by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardSpecConfig {
    pub property: String,
    pub neutral: PropertyValue,
    pub fold: String,
    pub mode: ShardMode,
    #[serde(default = "default_shard_kind")]
    pub shard_kind: String,
}

fn default_shard_kind() -> String {
    "Shard".to_owned()
}

/// How one property is sharded.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardSpec {
    property: String,
    neutral: PropertyValue,
    fold: FoldFn,
    mode: ShardMode,
    shard_kind: String,
}

impl ShardSpec {
    pub fn new(
        property: impl Into<String>,
        neutral: PropertyValue,
        fold: FoldFn,
        mode: ShardMode,
    ) -> Result<Self, ShardError> {
        Self::with_kind(property, neutral, fold, mode, default_shard_kind())
    }

    pub fn with_kind(
        property: impl Into<String>,
        neutral: PropertyValue,
        fold: FoldFn,
        mode: ShardMode,
        shard_kind: impl Into<String>,
    ) -> Result<Self, ShardError> {
        let property = property.into();
        let shard_kind = shard_kind.into();
        if let ShardMode::Static(0) = mode {
            return Err(ShardError::InvalidShardCount);
        }
        if property.is_empty() || shard_kind.is_empty() {
            return Err(ShardError::InvalidSpec(
                "property and shard kind must be non-empty".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        check_fold_laws(&fold, &neutral, SPEC_PROBES, &mut rng)?;
        Ok(ShardSpec {
            property,
            neutral,
            fold,
            mode,
            shard_kind,
        })
    }

    /// The common counter: integer sum with neutral 0.
    pub fn counter(property: impl Into<String>, mode: ShardMode) -> Result<Self, ShardError> {
        Self::new(property, PropertyValue::Int(0), FoldFn::sum_int(), mode)
    }

    pub fn from_config(config: &ShardSpecConfig, registry: &FoldRegistry) -> Result<Self, ShardError> {
        let fold = registry.get(&config.fold)?.clone();
        Self::with_kind(
            config.property.clone(),
            config.neutral.clone(),
            fold,
            config.mode,
            config.shard_kind.clone(),
        )
    }

    pub fn to_config(&self) -> ShardSpecConfig {
        ShardSpecConfig {
            property: self.property.clone(),
            neutral: self.neutral.clone(),
            fold: self.fold.name().to_owned(),
            mode: self.mode,
            shard_kind: self.shard_kind.clone(),
        }
    }

    pub fn property(&self) -> &str {
        &self.property
    }

    pub fn neutral(&self) -> &PropertyValue {
        &self.neutral
    }

    pub fn fold(&self) -> &FoldFn {
        &self.fold
    }

    pub fn mode(&self) -> ShardMode {
        self.mode
    }

    pub fn shard_kind(&self) -> &str {
        &self.shard_kind
    }

    /// Name of the shard entity's value property, e.g. `shard_votes`.
    pub fn shard_field(&self) -> String {
        format!("shard_{}", self.property)
    }

    /// Name of the shard entity's owner reference, e.g. `question`.
    pub fn owner_field(owner: &Key) -> String {
        owner.kind().to_lowercase()
    }

    pub fn static_count(&self) -> Option<u32> {
        match self.mode {
            ShardMode::Static(n) => Some(n),
            ShardMode::Dynamic => None,
        }
    }
}
