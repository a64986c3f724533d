// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::entity::{Entity, EntityFormatError, Key, RESERVED_FIELDS};
use super::query::Filter;
use crate::value::ValueError;

/// Tunables of the simulated store. Durations are virtual time.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StoreConfig {
    /// How long a committed write keeps its entity group occupied.
    #[serde(with = "crate::millis")]
    pub commit_service_time: Duration,
    /// Delay before a committed write becomes visible to kind queries.
    #[serde(with = "crate::millis")]
    pub query_staleness_window: Duration,
    pub max_groups_per_tx: usize,
    pub rng_seed: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            commit_service_time: Duration::from_millis(150),
            query_staleness_window: Duration::from_millis(500),
            max_groups_per_tx: 5,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Contention {
    /// Another commit still occupies the entity group.
    GroupBusy { group: Key, busy_until: Duration },
    /// An entity read by the transaction has been written since.
    VersionConflict { key: Key, observed: u64, current: u64 },
}

impl fmt::Display for Contention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Contention::GroupBusy { group, busy_until } => {
                write!(f, "entity group {group} busy until t={}", fmt_ms(*busy_until))
            }
            Contention::VersionConflict { key, observed, current } => {
                write!(f, "{key} changed from version {observed} to {current}")
            }
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("write contention: {0}")]
    Contention(Contention),
    #[error("transaction spans {requested} entity groups, at most {max} allowed")]
    TooManyGroups { requested: usize, max: usize },
    #[error("transaction must name at least one entity group")]
    NoGroups,
    #[error("{0} lies outside the transaction's entity groups")]
    OutsideTransaction(Key),
    #[error("transaction {0} is no longer open")]
    TransactionClosed(u64),
    #[error("malformed key {0}")]
    MalformedKey(Key),
    #[error("property `{0}` uses a reserved field name")]
    ReservedProperty(String),
    #[error("property `{name}`: {source}")]
    InvalidValue { name: String, source: ValueError },
    #[error("unsupported filter `{0}`: only top-level atomic comparisons are allowed")]
    UnsupportedFilter(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

impl StoreError {
    pub fn is_contention(&self) -> bool {
        matches!(self, StoreError::Contention(_))
    }
}

impl From<EntityFormatError> for StoreError {
    fn from(e: EntityFormatError) -> Self {
        StoreError::Snapshot(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxState {
    Open,
    Committed,
    Aborted,
}

/// Unit of atomic work over a bounded set of entity groups. Reads made
/// through [`DocStore::tx_get`] are validated optimistically at commit.
#[derive(Debug, Clone)]
pub struct Transaction {
    id: u64,
    group_roots: BTreeSet<Key>,
    read_set: BTreeMap<Key, u64>,
    write_set: BTreeMap<Key, Option<Entity>>,
    state: TxState,
}

impl Transaction {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn state(&self) -> TxState {
        self.state
    }

    pub fn group_roots(&self) -> &BTreeSet<Key> {
        &self.group_roots
    }

    pub fn read_set(&self) -> &BTreeMap<Key, u64> {
        &self.read_set
    }

    pub fn write_set(&self) -> &BTreeMap<Key, Option<Entity>> {
        &self.write_set
    }

    fn check_scope(&self, key: &Key) -> Result<(), StoreError> {
        if self.state != TxState::Open {
            return Err(StoreError::TransactionClosed(self.id));
        }
        if !self.group_roots.contains(key.group_root()) {
            return Err(StoreError::OutsideTransaction(key.clone()));
        }
        Ok(())
    }

    /// Records that `key` was observed at `version` by an earlier read, so the
    /// commit fails if it has been written since.
    pub fn expect_version(&mut self, key: Key, version: u64) -> Result<(), StoreError> {
        self.check_scope(&key)?;
        self.read_set.entry(key).or_insert(version);
        Ok(())
    }

    pub fn put(&mut self, entity: Entity) -> Result<(), StoreError> {
        self.check_scope(&entity.key)?;
        validate_entity(&entity)?;
        self.write_set.insert(entity.key.clone(), Some(entity));
        Ok(())
    }

    pub fn delete(&mut self, key: Key) -> Result<(), StoreError> {
        self.check_scope(&key)?;
        self.write_set.insert(key, None);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitResult {
    pub tx: u64,
    pub committed_at: Duration,
    /// When the entity groups touched become free again.
    pub completes_at: Duration,
    /// New version of every written key.
    pub versions: BTreeMap<Key, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Committed,
    Contention,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub at: Duration,
    pub tx: u64,
    pub groups: Vec<Key>,
    pub outcome: Outcome,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let groups: Vec<String> = self.groups.iter().map(Key::to_string).collect();
        let outcome = match self.outcome {
            Outcome::Committed => "committed",
            Outcome::Contention => "contention",
        };
        write!(
            f,
            "t={} tx={} groups={} outcome={}",
            fmt_ms(self.at),
            self.tx,
            groups.join(","),
            outcome
        )
    }
}

pub(crate) fn fmt_ms(d: Duration) -> String {
    let micros = d.as_micros();
    format!("{}.{:03}", micros / 1000, micros % 1000)
}

#[derive(Debug, Clone, Default)]
struct Slot {
    /// Latest committed state; `None` once deleted.
    current: Option<Entity>,
    version: u64,
    /// Query-visible states, oldest first, each tagged with the instant it
    /// becomes visible.
    history: Vec<(Duration, Option<Entity>)>,
}

impl Slot {
    fn visible_at(&self, now: Duration) -> Option<&Entity> {
        self.history
            .iter()
            .rev()
            .find(|(t, _)| *t <= now)
            .and_then(|(_, e)| e.as_ref())
    }

    fn prune(&mut self, now: Duration) {
        if let Some(idx) = self.history.iter().rposition(|(t, _)| *t <= now) {
            self.history.drain(..idx);
        }
    }
}

/// In-process document store running on a virtual clock.
///
/// Each committed write occupies its entity groups for
/// `commit_service_time`; any other commit touching those groups inside the
/// window fails with [`StoreError::Contention`], as does a commit whose
/// reads have gone stale. `get` is strongly consistent. `query` only sees
/// writes older than `query_staleness_window`.
///
/// The store is single-writer: embed it behind a lock if shared.
#[derive(Debug, Clone)]
pub struct DocStore {
    config: StoreConfig,
    now: Duration,
    next_tx: u64,
    slots: BTreeMap<Key, Slot>,
    groups: BTreeMap<Key, BTreeSet<Key>>,
    busy_until: BTreeMap<Key, Duration>,
    allocated: BTreeSet<(String, String)>,
    log: Vec<LogRecord>,
    rng: ChaCha8Rng,
}

impl DocStore {
    pub fn new(config: StoreConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        DocStore {
            config,
            now: Duration::ZERO,
            next_tx: 1,
            slots: BTreeMap::new(),
            groups: BTreeMap::new(),
            busy_until: BTreeMap::new(),
            allocated: BTreeSet::new(),
            log: Vec::new(),
            rng,
        }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn now(&self) -> Duration {
        self.now
    }

    pub fn advance_time(&mut self, delta: Duration) {
        if delta.is_zero() {
            return;
        }
        self.now += delta;
        let now = self.now;
        self.busy_until.retain(|_, until| *until > now);
    }

    /// Moves the clock forward to `t`; earlier instants are ignored.
    pub fn advance_to(&mut self, t: Duration) {
        if t > self.now {
            self.advance_time(t - self.now);
        }
    }

    pub fn event_log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn get(&self, key: &Key) -> Option<Entity> {
        self.slots.get(key).and_then(|s| s.current.clone())
    }

    /// Committed version of `key`; 0 if it was never written.
    pub fn version_of(&self, key: &Key) -> u64 {
        self.slots.get(key).map_or(0, |s| s.version)
    }

    pub fn begin_transaction<I>(&mut self, group_roots: I) -> Result<Transaction, StoreError>
    where
        I: IntoIterator<Item = Key>,
    {
        let mut roots = BTreeSet::new();
        for key in group_roots {
            if !key.is_well_formed() {
                return Err(StoreError::MalformedKey(key));
            }
            roots.insert(key.group_root().clone());
        }
        if roots.is_empty() {
            return Err(StoreError::NoGroups);
        }
        if roots.len() > self.config.max_groups_per_tx {
            return Err(StoreError::TooManyGroups {
                requested: roots.len(),
                max: self.config.max_groups_per_tx,
            });
        }
        let id = self.next_tx;
        self.next_tx += 1;
        Ok(Transaction {
            id,
            group_roots: roots,
            read_set: BTreeMap::new(),
            write_set: BTreeMap::new(),
            state: TxState::Open,
        })
    }

    /// Strongly consistent read through a transaction; the observed version
    /// (0 when absent) joins the read set.
    pub fn tx_get(&self, tx: &mut Transaction, key: &Key) -> Result<Option<Entity>, StoreError> {
        tx.check_scope(key)?;
        tx.read_set.entry(key.clone()).or_insert_with(|| self.version_of(key));
        Ok(self.get(key))
    }

    pub fn commit(&mut self, tx: &mut Transaction) -> Result<CommitResult, StoreError> {
        if tx.state != TxState::Open {
            return Err(StoreError::TransactionClosed(tx.id));
        }
        let write_groups: BTreeSet<Key> = tx.write_set.keys().map(|k| k.group_root().clone()).collect();
        match self.validate(tx, &write_groups) {
            Err(reason) => {
                tx.state = TxState::Aborted;
                self.log.push(LogRecord {
                    at: self.now,
                    tx: tx.id,
                    groups: tx.group_roots.iter().cloned().collect(),
                    outcome: Outcome::Contention,
                });
                Err(StoreError::Contention(reason))
            }
            Ok(()) => {
                let committed_at = self.now;
                let completes_at = self.now + self.config.commit_service_time;
                let visible_at = self.now + self.config.query_staleness_window;
                let mut versions = BTreeMap::new();
                for (key, write) in std::mem::take(&mut tx.write_set) {
                    let slot = self.slots.entry(key.clone()).or_default();
                    slot.prune(committed_at);
                    slot.version += 1;
                    let written = write.map(|mut e| {
                        e.version = slot.version;
                        e
                    });
                    let members = self.groups.entry(key.group_root().clone()).or_default();
                    if written.is_some() {
                        members.insert(key.clone());
                    } else {
                        members.remove(&key);
                    }
                    slot.current = written.clone();
                    slot.history.push((visible_at, written));
                    versions.insert(key, slot.version);
                }
                for group in write_groups {
                    self.busy_until.insert(group, completes_at);
                }
                tx.state = TxState::Committed;
                self.log.push(LogRecord {
                    at: committed_at,
                    tx: tx.id,
                    groups: tx.group_roots.iter().cloned().collect(),
                    outcome: Outcome::Committed,
                });
                Ok(CommitResult {
                    tx: tx.id,
                    committed_at,
                    completes_at,
                    versions,
                })
            }
        }
    }

    fn validate(&self, tx: &Transaction, write_groups: &BTreeSet<Key>) -> Result<(), Contention> {
        for group in write_groups {
            if let Some(&busy_until) = self.busy_until.get(group) {
                if busy_until > self.now {
                    return Err(Contention::GroupBusy {
                        group: group.clone(),
                        busy_until,
                    });
                }
            }
        }
        for (key, &observed) in &tx.read_set {
            let current = self.version_of(key);
            if current != observed {
                return Err(Contention::VersionConflict {
                    key: key.clone(),
                    observed,
                    current,
                });
            }
        }
        Ok(())
    }

    /// Blind single-entity write, auto-committed.
    pub fn put(&mut self, entity: Entity) -> Result<Key, StoreError> {
        if !entity.key.is_well_formed() {
            return Err(StoreError::MalformedKey(entity.key));
        }
        let key = entity.key.clone();
        let mut tx = self.begin_transaction([key.clone()])?;
        tx.put(entity)?;
        self.commit(&mut tx)?;
        Ok(key)
    }

    pub fn delete(&mut self, key: &Key) -> Result<(), StoreError> {
        let mut tx = self.begin_transaction([key.clone()])?;
        tx.delete(key.clone())?;
        self.commit(&mut tx).map(|_| ())
    }

    /// Kind query over the eventually consistent snapshot, ordered by key.
    pub fn query(&self, kind: &str, filters: &[Filter]) -> Result<Vec<Entity>, StoreError> {
        if let Some(bad) = filters.iter().find(|f| !f.is_supported()) {
            return Err(StoreError::UnsupportedFilter(bad.to_string()));
        }
        Ok(self
            .slots
            .range(Key::new(kind, "")..)
            .take_while(|(k, _)| k.kind() == kind)
            .filter_map(|(_, slot)| slot.visible_at(self.now))
            .filter(|e| filters.iter().all(|f| f.matches(e)))
            .cloned()
            .collect())
    }

    /// Strongly consistent ancestor query: every entity in the group of `root`.
    pub fn group_members(&self, root: &Key) -> Vec<Entity> {
        self.groups
            .get(root.group_root())
            .into_iter()
            .flatten()
            .filter_map(|k| self.get(k))
            .collect()
    }

    /// Draws a fresh id for `kind` that no committed or previously
    /// allocated entity uses.
    pub fn allocate_id(&mut self, kind: &str) -> String {
        loop {
            let id = self.rng.random_range(1..1_000_000_000u64).to_string();
            let taken = self.slots.contains_key(&Key::new(kind, id.clone()));
            if !taken && self.allocated.insert((kind.to_owned(), id.clone())) {
                return id;
            }
        }
    }

    /// All live entities, ordered by key.
    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.slots.values().filter_map(|s| s.current.as_ref())
    }

    /// JSON array of every live entity, each carrying its `version`.
    pub fn dump(&self) -> Value {
        Value::Array(self.entities().map(|e| e.to_json(true)).collect())
    }

    /// Rebuilds a store from [`DocStore::dump`] output. Everything loaded is
    /// visible immediately and no entity group is busy.
    pub fn from_snapshot(config: StoreConfig, snapshot: &Value) -> Result<Self, StoreError> {
        let items = snapshot
            .as_array()
            .ok_or_else(|| StoreError::Snapshot("expected a JSON array".into()))?;
        let mut store = DocStore::new(config);
        for item in items {
            let mut entity = Entity::from_json(item)?;
            validate_entity(&entity)?;
            if entity.version == 0 {
                entity.version = 1;
            }
            let key = entity.key.clone();
            if store.slots.contains_key(&key) {
                return Err(StoreError::Snapshot(format!("duplicate key {key}")));
            }
            store
                .groups
                .entry(key.group_root().clone())
                .or_default()
                .insert(key.clone());
            store.slots.insert(
                key,
                Slot {
                    version: entity.version,
                    history: vec![(Duration::ZERO, Some(entity.clone()))],
                    current: Some(entity),
                },
            );
        }
        Ok(store)
    }
}

fn validate_entity(entity: &Entity) -> Result<(), StoreError> {
    if !entity.key.is_well_formed() {
        return Err(StoreError::MalformedKey(entity.key.clone()));
    }
    for (name, value) in &entity.properties {
        if RESERVED_FIELDS.contains(&name.as_str()) {
            return Err(StoreError::ReservedProperty(name.clone()));
        }
        value.validate().map_err(|source| StoreError::InvalidValue {
            name: name.clone(),
            source,
        })?;
    }
    Ok(())
}
