// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

//! Auto-sharding object mapper for document stores.
//!
//! Hot-spot properties (counters and other commutative aggregates) are
//! split over shard entities so concurrent writers stop contending on a
//! single entity. The crate contains:
//!
//! - [`docstore`]: a simulated document store with per-entity-group write
//!   contention, optimistic transactions and eventually consistent queries,
//!   all on a virtual clock;
//! - [`shardcore`]: static and dynamic property sharding, entity-group
//!   sharding, fold aggregation and shard compaction;
//! - [`mapper`]: the object-mapper lifecycle (load, shard-method updates,
//!   save) over registered mapping definitions;
//! - [`txretry`]: retry policies for contended transactions;
//! - [`simharness`]: a discrete-event voting workload that measures failure
//!   rates and transaction times per sharding strategy.

pub mod docstore;
pub mod exec;
pub mod mapper;
pub mod shardcore;
pub mod simharness;
pub mod txretry;
pub mod value;

pub use docstore::{DocStore, Entity, Key, StoreConfig, StoreError};
pub use value::PropertyValue;

/// Serde adapter for virtual durations written as milliseconds.
pub(crate) mod millis {
    use std::time::Duration;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        if d.subsec_nanos().is_multiple_of(1_000_000) {
            s.serialize_u64(d.as_millis() as u64)
        } else {
            s.serialize_f64(d.as_secs_f64() * 1000.0)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Duration::try_from_secs_f64(ms / 1000.0).map_err(D::Error::custom)
    }
}
