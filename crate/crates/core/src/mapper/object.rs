// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use super::MapperError;
use crate::docstore::{Entity, Key};
use crate::value::PropertyValue;

/// Both views of a sharded property held by a loaded object.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardedValue {
    /// The logical value application code reads.
    pub aggregated: PropertyValue,
    /// This session's contribution, not yet written to any shard.
    pub delta: PropertyValue,
}

/// In-memory image of a mapped entity. Confined to one logical client.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedObject {
    pub(crate) kind: String,
    pub(crate) key: Key,
    pub(crate) plain: BTreeMap<String, PropertyValue>,
    pub(crate) sharded: BTreeMap<String, ShardedValue>,
    /// Version of the main entity this object was read at (0 if new).
    pub(crate) main_version: u64,
    /// Plain properties as last persisted; `None` until the main entity is
    /// written once.
    pub(crate) persisted_plain: Option<BTreeMap<String, PropertyValue>>,
}

impl MappedObject {
    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn key(&self) -> &Key {
        &self.key
    }

    /// Plain property, or the aggregated value of a sharded one.
    pub fn get(&self, name: &str) -> Option<&PropertyValue> {
        self.plain
            .get(name)
            .or_else(|| self.sharded.get(name).map(|s| &s.aggregated))
    }

    pub fn set(&mut self, name: &str, value: impl Into<PropertyValue>) -> Result<(), MapperError> {
        if self.sharded.contains_key(name) {
            return Err(MapperError::ShardedAssignment(name.to_owned()));
        }
        self.plain.insert(name.to_owned(), value.into());
        Ok(())
    }

    pub fn aggregated(&self, property: &str) -> Option<&PropertyValue> {
        self.sharded.get(property).map(|s| &s.aggregated)
    }

    pub fn shard_delta(&self, property: &str) -> Option<&PropertyValue> {
        self.sharded.get(property).map(|s| &s.delta)
    }

    pub fn main_version(&self) -> u64 {
        self.main_version
    }

    /// Whether plain properties differ from what was last persisted.
    pub fn is_dirty(&self) -> bool {
        self.persisted_plain.as_ref() != Some(&self.plain)
    }

    pub(crate) fn main_entity(&self) -> Entity {
        Entity {
            key: self.key.clone(),
            properties: self.plain.clone(),
            version: self.main_version,
        }
    }
}
