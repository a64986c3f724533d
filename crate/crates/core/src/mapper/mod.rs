// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

//! Object mapper with transparent property sharding.
//!
//! A kind is registered with a [`MappingDef`]. Loading folds all shards of
//! each sharded property into its aggregated value and starts a neutral
//! session delta. Shard methods update both. Saving writes the main entity
//! when its plain properties changed, then folds each non-neutral delta
//! into one random static shard (or appends a dynamic shard) in its own
//! transaction, and only then resets the delta. A failed save keeps the
//! delta, so retrying submits it exactly once.
//!
//! The main-entity write and the shard writes are not atomic together.

mod def;
mod object;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use def::{MappingDef, MappingDefConfig, MethodOp, ShardMethodDef};
pub use object::{MappedObject, ShardedValue};

use crate::docstore::{DocStore, Entity, Key, StoreError, Transaction};
use crate::shardcore::{
    self, fold_all, load_shards, prepare_dynamic_append, prepare_static_update, ShardEntity, ShardError, ShardMode,
    ShardSpec,
};
use crate::txretry::Retryable;
use crate::value::PropertyValue;

/// Probes per law when a definition is registered.
const REGISTRATION_PROBES: usize = 256;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MapperError {
    #[error("kind `{0}` is already registered")]
    DuplicateKind(String),
    #[error("kind `{0}` is not registered")]
    UnknownKind(String),
    #[error("no entity {0}")]
    NotFound(Key),
    #[error("unknown shard method `{0}`")]
    UnknownMethod(String),
    #[error("invalid mapping: {0}")]
    InvalidDefinition(String),
    #[error("sharded property `{0}` can only change through shard methods")]
    ShardedAssignment(String),
    #[error("property `{0}` is not mapped")]
    UnmappedProperty(String),
    #[error("missing or malformed id property `{0}`")]
    MissingId(String),
    #[error("{op:?}: {reason}")]
    BadArguments { op: MethodOp, reason: String },
    #[error("save failed (main entity persisted: {main_persisted}); pending shard deltas kept: {source}")]
    Save { main_persisted: bool, source: ShardError },
    #[error(transparent)]
    Shard(#[from] ShardError),
}

impl From<StoreError> for MapperError {
    fn from(e: StoreError) -> Self {
        MapperError::Shard(ShardError::Store(e))
    }
}

impl MapperError {
    pub fn is_contention(&self) -> bool {
        match self {
            MapperError::Shard(e) | MapperError::Save { source: e, .. } => e.is_contention(),
            _ => false,
        }
    }
}

impl Retryable for MapperError {
    fn is_contention(&self) -> bool {
        MapperError::is_contention(self)
    }
}

/// What a successful save wrote.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SaveReceipt {
    pub main_written: bool,
    /// (property, shard key) for every shard written.
    pub shard_writes: Vec<(String, Key)>,
    /// Sharded properties whose delta was neutral, so no shard was touched.
    pub skipped: Vec<String>,
}

impl SaveReceipt {
    pub fn entities_written(&self) -> usize {
        usize::from(self.main_written) + self.shard_writes.len()
    }
}

/// A save whose main entity is done and whose shard transactions are open
/// but not yet committed.
#[derive(Debug)]
pub struct PendingSave {
    main_written: bool,
    writes: Vec<(String, Transaction, ShardEntity)>,
    skipped: Vec<String>,
}

impl PendingSave {
    pub fn main_written(&self) -> bool {
        self.main_written
    }

    pub fn shard_transactions(&self) -> usize {
        self.writes.len()
    }
}

/// Registry of mapped kinds. Immutable once set up; share freely.
#[derive(Debug, Clone, Default)]
pub struct Mapper {
    defs: BTreeMap<String, MappingDef>,
}

impl Mapper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, def: MappingDef) -> Result<(), MapperError> {
        if self.defs.contains_key(&def.kind) {
            return Err(MapperError::DuplicateKind(def.kind));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0xa11ce);
        def.validate(REGISTRATION_PROBES, &mut rng)?;
        for spec in &def.shard_specs {
            let clash = self
                .defs
                .values()
                .flat_map(|d| d.shard_specs.iter())
                .chain(def.shard_specs.iter().filter(|s| s.property() != spec.property()))
                .any(|other| other.shard_kind() == spec.shard_kind());
            if clash {
                return Err(MapperError::InvalidDefinition(format!(
                    "shard kind `{}` is used by another sharded property",
                    spec.shard_kind()
                )));
            }
        }
        self.defs.insert(def.kind.clone(), def);
        Ok(())
    }

    pub fn def(&self, kind: &str) -> Result<&MappingDef, MapperError> {
        self.defs
            .get(kind)
            .ok_or_else(|| MapperError::UnknownKind(kind.to_owned()))
    }

    /// Creates and persists a new object from its property map: the main
    /// entity plus the initial shard layout of every sharded property.
    pub fn create(
        &self,
        store: &mut DocStore,
        kind: &str,
        mut properties: BTreeMap<String, PropertyValue>,
    ) -> Result<MappedObject, MapperError> {
        let def = self.def(kind)?;
        let id = match properties.remove(&def.id_property) {
            Some(PropertyValue::Int(i)) => i.to_string(),
            Some(PropertyValue::String(s)) if !s.is_empty() => s,
            _ => return Err(MapperError::MissingId(def.id_property.clone())),
        };
        if let Some(name) = properties
            .keys()
            .find(|n| !def.plain_properties.contains(n) && def.spec(n).is_none())
        {
            return Err(MapperError::UnmappedProperty(name.clone()));
        }
        let mut main = Entity {
            key: Key::new(kind, id),
            properties,
            version: 0,
        };
        let mut shards: Vec<(ShardEntity, &ShardSpec)> = Vec::new();
        let mut sharded = BTreeMap::new();
        for spec in &def.shard_specs {
            main.properties
                .entry(spec.property().to_owned())
                .or_insert_with(|| spec.neutral().clone());
            let value = main.properties[spec.property()].clone();
            match spec.mode() {
                ShardMode::Static(_) => {
                    let (stripped, init) = shardcore::static_shard_init(&main, spec)?;
                    main = stripped;
                    shards.extend(init.into_iter().map(|s| (s, spec)));
                }
                ShardMode::Dynamic => {
                    let fresh = store.allocate_id(spec.shard_kind());
                    let (stripped, init) = shardcore::dynamic_shard_init(&main, spec, fresh)?;
                    main = stripped;
                    shards.push((init, spec));
                }
            }
            sharded.insert(
                spec.property().to_owned(),
                ShardedValue {
                    aggregated: value,
                    delta: spec.neutral().clone(),
                },
            );
        }

        let mut tx = store.begin_transaction([main.key.clone()])?;
        store.tx_get(&mut tx, &main.key)?;
        tx.put(main.clone())?;
        let version = store.commit(&mut tx)?.versions[&main.key];
        for (shard, spec) in shards {
            store.put(shard.to_entity(spec))?;
        }
        Ok(MappedObject {
            kind: kind.to_owned(),
            key: main.key,
            persisted_plain: Some(main.properties.clone()),
            plain: main.properties,
            sharded,
            main_version: version,
        })
    }

    /// Reads the main entity (strongly consistent) and folds every sharded
    /// property's shards. Dynamic shards come from a kind query and may be
    /// stale.
    pub fn load(&self, store: &DocStore, kind: &str, key: &Key) -> Result<MappedObject, MapperError> {
        let def = self.def(kind)?;
        let main = store.get(key).ok_or_else(|| MapperError::NotFound(key.clone()))?;
        let mut sharded = BTreeMap::new();
        for spec in &def.shard_specs {
            let shards = load_shards(store, key, spec)?;
            sharded.insert(
                spec.property().to_owned(),
                ShardedValue {
                    aggregated: fold_all(&shards, spec)?,
                    delta: spec.neutral().clone(),
                },
            );
        }
        let plain = main.properties;
        Ok(MappedObject {
            kind: kind.to_owned(),
            key: main.key,
            persisted_plain: Some(plain.clone()),
            plain,
            sharded,
            main_version: main.version,
        })
    }

    /// Runs a shard method on both the session delta and the aggregated
    /// value.
    pub fn apply_shard_method(
        &self,
        obj: &mut MappedObject,
        method: &str,
        args: &[PropertyValue],
    ) -> Result<(), MapperError> {
        let def = self.def(&obj.kind)?;
        let m = def
            .method_def(method)
            .ok_or_else(|| MapperError::UnknownMethod(method.to_owned()))?;
        let slot = obj
            .sharded
            .get_mut(&m.property)
            .ok_or_else(|| MapperError::UnknownMethod(method.to_owned()))?;
        let delta = m.op.apply(&slot.delta, args)?;
        let aggregated = m.op.apply(&slot.aggregated, args)?;
        slot.delta = delta;
        slot.aggregated = aggregated;
        Ok(())
    }

    /// Sharded properties whose delta has not been written yet.
    pub fn pending_properties(&self, obj: &MappedObject) -> Result<Vec<String>, MapperError> {
        let def = self.def(&obj.kind)?;
        Ok(def
            .shard_specs
            .iter()
            .filter(|s| obj.sharded.get(s.property()).is_some_and(|v| &v.delta != s.neutral()))
            .map(|s| s.property().to_owned())
            .collect())
    }

    /// First half of a save: persists the main entity if dirty (validated
    /// against the version it was loaded at) and opens one shard
    /// transaction per non-neutral delta.
    pub fn begin_save<R: Rng + ?Sized>(
        &self,
        store: &mut DocStore,
        obj: &mut MappedObject,
        rng: &mut R,
    ) -> Result<PendingSave, MapperError> {
        let def = self.def(&obj.kind)?;
        let mut main_written = false;
        if obj.is_dirty() {
            let result = (|| {
                let mut tx = store.begin_transaction([obj.key.clone()])?;
                tx.expect_version(obj.key.clone(), obj.main_version)?;
                tx.put(obj.main_entity())?;
                store.commit(&mut tx)
            })();
            match result {
                Ok(commit) => {
                    obj.main_version = commit.versions[&obj.key];
                    obj.persisted_plain = Some(obj.plain.clone());
                    main_written = true;
                }
                Err(e) => {
                    return Err(MapperError::Save {
                        main_persisted: false,
                        source: e.into(),
                    })
                }
            }
        }

        let mut writes = Vec::new();
        let mut skipped = Vec::new();
        for spec in &def.shard_specs {
            let delta = &obj.sharded[spec.property()].delta;
            if delta == spec.neutral() {
                skipped.push(spec.property().to_owned());
                continue;
            }
            let prepared = match spec.mode() {
                ShardMode::Static(_) => prepare_static_update(store, &obj.key, delta, spec, rng),
                ShardMode::Dynamic => prepare_dynamic_append(store, &obj.key, delta, spec),
            };
            let (tx, shard) = prepared.map_err(|source| MapperError::Save {
                main_persisted: main_written,
                source,
            })?;
            writes.push((spec.property().to_owned(), tx, shard));
        }
        Ok(PendingSave {
            main_written,
            writes,
            skipped,
        })
    }

    /// Second half of a save: commits the shard transactions, resetting each
    /// property's delta only once its shard is committed.
    pub fn finish_save(
        &self,
        store: &mut DocStore,
        obj: &mut MappedObject,
        pending: PendingSave,
    ) -> Result<SaveReceipt, MapperError> {
        let def = self.def(&obj.kind)?;
        let mut receipt = SaveReceipt {
            main_written: pending.main_written,
            shard_writes: Vec::new(),
            skipped: pending.skipped,
        };
        for (property, mut tx, shard) in pending.writes {
            store.commit(&mut tx).map_err(|e| MapperError::Save {
                main_persisted: pending.main_written,
                source: e.into(),
            })?;
            let spec = def.spec(&property).expect("pending write for a mapped property");
            if let Some(slot) = obj.sharded.get_mut(&property) {
                slot.delta = spec.neutral().clone();
            }
            receipt.shard_writes.push((property, shard.key));
        }
        Ok(receipt)
    }

    /// Saves at the store's current instant.
    pub fn save<R: Rng + ?Sized>(
        &self,
        store: &mut DocStore,
        obj: &mut MappedObject,
        rng: &mut R,
    ) -> Result<SaveReceipt, MapperError> {
        let pending = self.begin_save(store, obj, rng)?;
        self.finish_save(store, obj, pending)
    }

    /// Current fold of a sharded property as the store shows it now.
    pub fn reload_value(
        &self,
        store: &DocStore,
        kind: &str,
        key: &Key,
        property: &str,
    ) -> Result<PropertyValue, MapperError> {
        let def = self.def(kind)?;
        if store.get(key).is_none() {
            return Err(MapperError::NotFound(key.clone()));
        }
        let spec = def
            .spec(property)
            .ok_or_else(|| MapperError::UnmappedProperty(property.to_owned()))?;
        Ok(fold_all(&load_shards(store, key, spec)?, spec)?)
    }
}
