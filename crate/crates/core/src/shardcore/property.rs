// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

use rand::Rng;

use super::spec::{ShardMode, ShardSpec};
use super::ShardError;
use crate::docstore::{DocStore, Entity, Filter, Key, Transaction};
use crate::value::PropertyValue;

/// One shard of a sharded property.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardEntity {
    pub key: Key,
    pub owner: Key,
    pub value: PropertyValue,
}

impl ShardEntity {
    /// The persisted document, e.g.
    /// `{"kind":"Shard","id":"42-1","question":"42","shard_votes":76}`.
    pub fn to_entity(&self, spec: &ShardSpec) -> Entity {
        Entity::new(self.key.clone())
            .with(ShardSpec::owner_field(&self.owner), self.owner.id())
            .with(spec.shard_field(), self.value.clone())
    }

    pub fn from_entity(entity: &Entity, owner: &Key, spec: &ShardSpec) -> Result<Self, ShardError> {
        let value = entity
            .get(&spec.shard_field())
            .cloned()
            .ok_or_else(|| ShardError::MissingProperty {
                key: entity.key.clone(),
                property: spec.shard_field(),
            })?;
        Ok(ShardEntity {
            key: entity.key.clone(),
            owner: owner.clone(),
            value,
        })
    }
}

/// Keys `<owner-id>-1 .. <owner-id>-n` of kind `shard_kind`, each its own
/// entity group.
pub fn make_shard_keys(owner: &Key, n: u32, shard_kind: &str) -> Vec<Key> {
    (1..=n)
        .map(|i| Key::new(shard_kind, format!("{}-{}", owner.id(), i)))
        .collect()
}

fn require_static(spec: &ShardSpec) -> Result<u32, ShardError> {
    spec.static_count().ok_or(ShardError::WrongMode { expected: "static" })
}

fn require_dynamic(spec: &ShardSpec) -> Result<(), ShardError> {
    match spec.mode() {
        ShardMode::Dynamic => Ok(()),
        ShardMode::Static(_) => Err(ShardError::WrongMode { expected: "dynamic" }),
    }
}

fn split_property(main: &Entity, spec: &ShardSpec) -> Result<(Entity, PropertyValue), ShardError> {
    let mut main = main.clone();
    let value = main
        .properties
        .remove(spec.property())
        .ok_or_else(|| ShardError::MissingProperty {
            key: main.key.clone(),
            property: spec.property().to_owned(),
        })?;
    if !spec.fold().accepts(&value) {
        return Err(ShardError::FoldType {
            fold: spec.fold().name().to_owned(),
            found: value.type_name(),
        });
    }
    Ok((main, value))
}

/// Splits `main` into the main entity (without the sharded property) and
/// `n` shards: the first holds the original value, the rest the neutral
/// element. Nothing is persisted.
pub fn static_shard_init(main: &Entity, spec: &ShardSpec) -> Result<(Entity, Vec<ShardEntity>), ShardError> {
    let n = require_static(spec)?;
    let (stripped, value) = split_property(main, spec)?;
    let shards = make_shard_keys(&main.key, n, spec.shard_kind())
        .into_iter()
        .enumerate()
        .map(|(i, key)| ShardEntity {
            key,
            owner: main.key.clone(),
            value: if i == 0 { value.clone() } else { spec.neutral().clone() },
        })
        .collect();
    Ok((stripped, shards))
}

/// Dynamic counterpart of [`static_shard_init`]: a single shard holding the
/// original value under a store-assigned id.
pub fn dynamic_shard_init(
    main: &Entity,
    spec: &ShardSpec,
    fresh_id: String,
) -> Result<(Entity, ShardEntity), ShardError> {
    require_dynamic(spec)?;
    let (stripped, value) = split_property(main, spec)?;
    let shard = ShardEntity {
        key: Key::new(spec.shard_kind(), fresh_id),
        owner: main.key.clone(),
        value,
    };
    Ok((stripped, shard))
}

/// Uniformly chooses one of the owner's static shards.
pub fn pick_random_shard<R: Rng + ?Sized>(owner: &Key, spec: &ShardSpec, rng: &mut R) -> Result<Key, ShardError> {
    let n = require_static(spec)?;
    let i = rng.random_range(1..=n);
    Ok(Key::new(spec.shard_kind(), format!("{}-{}", owner.id(), i)))
}

pub fn fold_values<'a, I>(values: I, spec: &ShardSpec) -> Result<PropertyValue, ShardError>
where
    I: IntoIterator<Item = &'a PropertyValue>,
{
    values
        .into_iter()
        .try_fold(spec.neutral().clone(), |acc, v| spec.fold().apply(&acc, v))
}

/// Left fold of the shard values seeded with the neutral element.
pub fn fold_all(shards: &[ShardEntity], spec: &ShardSpec) -> Result<PropertyValue, ShardError> {
    fold_values(shards.iter().map(|s| &s.value), spec)
}

/// Reads the owner's shards: key-enumerated gets for static mode (strongly
/// consistent), a kind query for dynamic mode (eventually consistent).
pub fn load_shards(store: &DocStore, owner: &Key, spec: &ShardSpec) -> Result<Vec<ShardEntity>, ShardError> {
    let entities: Vec<Entity> = match spec.mode() {
        ShardMode::Static(n) => make_shard_keys(owner, n, spec.shard_kind())
            .iter()
            .filter_map(|k| store.get(k))
            .collect(),
        ShardMode::Dynamic => store.query(
            spec.shard_kind(),
            &[Filter::eq(ShardSpec::owner_field(owner), owner.id())],
        )?,
    };
    entities
        .iter()
        .map(|e| ShardEntity::from_entity(e, owner, spec))
        .collect()
}

/// Opens the transaction that folds `delta` into one random static shard.
/// The shard's version is recorded, so a concurrent update of the same
/// shard makes the commit fail.
pub fn prepare_static_update<R: Rng + ?Sized>(
    store: &mut DocStore,
    owner: &Key,
    delta: &PropertyValue,
    spec: &ShardSpec,
    rng: &mut R,
) -> Result<(Transaction, ShardEntity), ShardError> {
    let key = pick_random_shard(owner, spec, rng)?;
    let mut tx = store.begin_transaction([key.clone()])?;
    let current = match store.tx_get(&mut tx, &key)? {
        Some(e) => ShardEntity::from_entity(&e, owner, spec)?.value,
        None => spec.neutral().clone(),
    };
    let shard = ShardEntity {
        key,
        owner: owner.clone(),
        value: spec.fold().apply(&current, delta)?,
    };
    tx.put(shard.to_entity(spec))?;
    Ok((tx, shard))
}

/// Folds `delta` into one random static shard and commits.
pub fn static_shard_update<R: Rng + ?Sized>(
    store: &mut DocStore,
    owner: &Key,
    delta: &PropertyValue,
    spec: &ShardSpec,
    rng: &mut R,
) -> Result<ShardEntity, ShardError> {
    let (mut tx, shard) = prepare_static_update(store, owner, delta, spec, rng)?;
    store.commit(&mut tx)?;
    Ok(shard)
}

/// Opens the insert of a brand-new shard holding `delta`. The key is fresh
/// and forms its own entity group, so the commit cannot contend.
pub fn prepare_dynamic_append(
    store: &mut DocStore,
    owner: &Key,
    delta: &PropertyValue,
    spec: &ShardSpec,
) -> Result<(Transaction, ShardEntity), ShardError> {
    require_dynamic(spec)?;
    let key = Key::new(spec.shard_kind(), store.allocate_id(spec.shard_kind()));
    let shard = ShardEntity {
        key: key.clone(),
        owner: owner.clone(),
        value: delta.clone(),
    };
    let mut tx = store.begin_transaction([key.clone()])?;
    store.tx_get(&mut tx, &key)?;
    tx.put(shard.to_entity(spec))?;
    Ok((tx, shard))
}

pub fn dynamic_shard_append(
    store: &mut DocStore,
    owner: &Key,
    delta: &PropertyValue,
    spec: &ShardSpec,
) -> Result<ShardEntity, ShardError> {
    let (mut tx, shard) = prepare_dynamic_append(store, owner, delta, spec)?;
    store.commit(&mut tx)?;
    Ok(shard)
}

/// Replaces every visible dynamic shard of `owner` with a single fresh
/// shard holding their fold.
///
/// Each step inserts or updates the accumulator shard and deletes up to
/// `max_groups_per_tx - 1` old shards in one transaction, so the fold over
/// committed shards is the same after every step. Between steps the clock
/// advances by one commit service time to free the accumulator's group.
/// Shards committed within the staleness window may be missed; run after
/// quiescence. Must not run concurrently with itself for the same owner.
pub fn compact(store: &mut DocStore, owner: &Key, spec: &ShardSpec) -> Result<ShardEntity, ShardError> {
    require_dynamic(spec)?;
    let mut shards = load_shards(store, owner, spec)?;
    if shards.len() == 1 {
        return Ok(shards.remove(0));
    }
    let per_step = store.config().max_groups_per_tx.saturating_sub(1);
    if per_step == 0 {
        return Err(ShardError::InvalidSpec(
            "compaction needs transactions over at least two groups".into(),
        ));
    }

    let mut acc = ShardEntity {
        key: Key::new(spec.shard_kind(), store.allocate_id(spec.shard_kind())),
        owner: owner.clone(),
        value: spec.neutral().clone(),
    };
    let mut remaining = shards.into_iter().map(|s| s.key);
    let mut first = true;
    loop {
        let chunk: Vec<Key> = remaining.by_ref().take(per_step).collect();
        if chunk.is_empty() && !first {
            break;
        }
        if !first {
            let service = store.config().commit_service_time;
            store.advance_time(service);
        }
        let mut tx = store.begin_transaction(std::iter::once(acc.key.clone()).chain(chunk.iter().cloned()))?;
        let mut value = match store.tx_get(&mut tx, &acc.key)? {
            Some(e) => ShardEntity::from_entity(&e, owner, spec)?.value,
            None => spec.neutral().clone(),
        };
        for key in &chunk {
            // a shard deleted since the query simply contributes nothing
            if let Some(e) = store.tx_get(&mut tx, key)? {
                value = spec
                    .fold()
                    .apply(&value, &ShardEntity::from_entity(&e, owner, spec)?.value)?;
                tx.delete(key.clone())?;
            }
        }
        acc.value = value;
        tx.put(acc.to_entity(spec))?;
        store.commit(&mut tx)?;
        first = false;
    }
    Ok(acc)
}
