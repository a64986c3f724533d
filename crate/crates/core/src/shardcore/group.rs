// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

//! Entity-group sharding: a hot group root is replicated into `n` roots
//! `<root-id>-g1 .. <root-id>-gn` and member writes are spread across them.

use std::collections::BTreeSet;

use rand::Rng;

use super::ShardError;
use crate::docstore::{DocStore, Entity, Key, Transaction};

pub fn replica_root(root: &Key, index: u32) -> Key {
    Key::new(root.kind(), format!("{}-g{}", root.id(), index))
}

pub fn replica_roots(root: &Key, n: u32) -> Vec<Key> {
    (1..=n).map(|i| replica_root(root, i)).collect()
}

/// Opens the write of `member` into replica group `index`. The member keeps
/// its kind and id but is re-parented under the replica root.
pub fn prepare_group_write(
    store: &mut DocStore,
    root: &Key,
    index: u32,
    member: &Entity,
) -> Result<(Transaction, Key), ShardError> {
    if index == 0 {
        return Err(ShardError::InvalidShardCount);
    }
    let replica = replica_root(root, index);
    let mut entity = member.clone();
    entity.key = Key::with_parent(member.key.kind(), member.key.id(), replica.clone());
    let mut tx = store.begin_transaction([replica.clone()])?;
    store.tx_get(&mut tx, &entity.key)?;
    tx.put(entity)?;
    Ok((tx, replica))
}

/// Writes `member` into the replica group `index` and returns that root.
pub fn group_write_at(store: &mut DocStore, root: &Key, index: u32, member: &Entity) -> Result<Key, ShardError> {
    let (mut tx, replica) = prepare_group_write(store, root, index, member)?;
    store.commit(&mut tx)?;
    Ok(replica)
}

/// Writes `member` into a uniformly chosen replica group of `root`.
pub fn group_shard_write<R: Rng + ?Sized>(
    store: &mut DocStore,
    root: &Key,
    n: u32,
    member: &Entity,
    rng: &mut R,
) -> Result<Key, ShardError> {
    if n == 0 {
        return Err(ShardError::InvalidShardCount);
    }
    let index = rng.random_range(1..=n);
    group_write_at(store, root, index, member)
}

/// Union of the members of all `n` replica groups, deduplicated by
/// (kind, id); the first replica in index order wins. Replica roots
/// themselves are not members. Ancestor reads are strongly consistent.
pub fn group_union(store: &DocStore, root: &Key, n: u32) -> Vec<Entity> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for replica in replica_roots(root, n) {
        for e in store.group_members(&replica) {
            if e.key == replica {
                continue;
            }
            if seen.insert((e.key.kind().to_owned(), e.key.id().to_owned())) {
                out.push(e);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::time::Duration;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::docstore::{Outcome, StoreConfig};

    fn response(id: u32) -> Entity {
        Entity::new(Key::new("Response", id.to_string())).with("response", "Crucial for our future")
    }

    #[test]
    fn single_group_always_g1() {
        let mut store = DocStore::new(StoreConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let root = Key::new("Question", "42");
        for i in 0..5 {
            let g = group_shard_write(&mut store, &root, 1, &response(i), &mut rng).unwrap();
            assert_eq!(g.id(), "42-g1");
            store.advance_time(Duration::from_secs(1));
        }
    }

    #[test]
    fn concurrent_writes_to_distinct_groups_commit() {
        let mut store = DocStore::new(StoreConfig::default());
        let root = Key::new("Question", "42");
        assert!(group_write_at(&mut store, &root, 1, &response(47)).is_ok());
        assert!(group_write_at(&mut store, &root, 2, &response(67)).is_ok());
        let union = group_union(&store, &root, 2);
        let ids: Vec<&str> = union.iter().map(|e| e.key.id()).collect();
        assert_eq!(ids, ["47", "67"]);
    }

    #[test]
    fn concurrent_writes_to_one_group_contend() {
        let mut store = DocStore::new(StoreConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let root = Key::new("Question", "42");
        assert!(group_shard_write(&mut store, &root, 1, &response(47), &mut rng).is_ok());
        let err = group_shard_write(&mut store, &root, 1, &response(67), &mut rng).unwrap_err();
        assert!(err.is_contention());
    }

    #[test]
    fn union_of_empty_groups_is_empty() {
        let store = DocStore::new(StoreConfig::default());
        assert!(group_union(&store, &Key::new("Question", "42"), 4).is_empty());
    }

    /// Random writes spread over time; the union must hold exactly the
    /// members whose commits the event log records.
    #[test]
    fn union_matches_committed_log() {
        let mut store = DocStore::new(StoreConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let root = Key::new("Question", "42");
        let mut by_tx = BTreeMap::new();
        for i in 0..300u32 {
            let before = store.event_log().len();
            let _ = group_shard_write(&mut store, &root, 4, &response(i), &mut rng);
            let rec = &store.event_log()[before];
            by_tx.insert(rec.tx, (i, rec.outcome));
            store.advance_time(Duration::from_millis(rng.random_range(0..60)));
        }
        let expected: BTreeSet<String> = by_tx
            .values()
            .filter(|(_, o)| *o == Outcome::Committed)
            .map(|(i, _)| i.to_string())
            .collect();
        let union: BTreeSet<String> = group_union(&store, &root, 4)
            .iter()
            .map(|e| e.key.id().to_owned())
            .collect();
        assert!(expected.len() < 300, "the workload should see some contention");
        assert_eq!(union, expected);
    }
}
