// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

//! Simulated NoSQL document store.
//!
//! Single-entity writes and key lookups are strongly consistent, kind
//! queries are eventually consistent, and transactions span at most
//! `max_groups_per_tx` entity groups under optimistic concurrency control.
//! Time is virtual and only moves through [`DocStore::advance_time`].

mod entity;
mod query;
mod store;

pub use entity::{Entity, EntityFormatError, Key, RESERVED_FIELDS};
pub use query::{Comparator, Filter};
pub use store::{
    CommitResult, Contention, DocStore, LogRecord, Outcome, StoreConfig, StoreError, Transaction, TxState,
};
