// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

//! Question 42 walkthrough: a vote counter of 76 sharded three ways, two
//! concurrent up-votes landing on different shards, and a shard query that
//! lags behind until the store goes quiet.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use shardmap::docstore::Filter;
use shardmap::mapper::{Mapper, MappingDef, MethodOp};
use shardmap::shardcore::{fold_values, ShardMode, ShardSpec};
use shardmap::{DocStore, Key, PropertyValue, StoreConfig};

/// Chosen so the two votes hit shards `42-2` and `42-3`.
pub const DEMO_SEED: u64 = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoStep {
    pub at: Duration,
    pub label: String,
    /// Entities shown at this step, in store order.
    pub entities: Vec<Value>,
    /// Fold of `select * from Shard where question = 42` at this step.
    pub query_value: Option<i64>,
    /// Whether every committed write was visible to queries at this step.
    pub quiescent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoTrace {
    pub steps: Vec<DemoStep>,
    /// Strongly consistent value read through the shard keys at the end.
    pub final_value: i64,
}

impl DemoTrace {
    pub fn query_values(&self) -> impl Iterator<Item = (bool, i64)> + '_ {
        self.steps
            .iter()
            .filter_map(|s| s.query_value.map(|v| (s.quiescent, v)))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            let ms = step.at.as_secs_f64() * 1000.0;
            writeln!(out, "# t={ms}ms {}", step.label).unwrap();
            for e in &step.entities {
                writeln!(out, "{e}").unwrap();
            }
            if let Some(v) = step.query_value {
                writeln!(out, "select * from Shard where question = 42 -> votes = {v}").unwrap();
            }
        }
        writeln!(out, "# final votes = {}", self.final_value).unwrap();
        out
    }
}

fn question_mapping() -> MappingDef {
    MappingDef::new("Question")
        .plain(&["question", "author"])
        .shard(ShardSpec::counter("votes", ShardMode::Static(3)).expect("counter spec"))
        .method("voteUp", "votes", MethodOp::Increment)
}

fn listing(store: &DocStore, keys: &[Key]) -> Vec<Value> {
    keys.iter()
        .filter_map(|k| store.get(k))
        .map(|e| e.to_json(false))
        .collect()
}

fn query_fold(store: &DocStore, spec: &ShardSpec) -> anyhow::Result<i64> {
    let shards = store.query("Shard", &[Filter::eq("question", "42")])?;
    let values: Vec<PropertyValue> = shards
        .iter()
        .filter_map(|e| e.get(&spec.shard_field()).cloned())
        .collect();
    Ok(fold_values(values.iter(), spec)?.as_int().unwrap_or(0))
}

pub fn run_demo() -> anyhow::Result<DemoTrace> {
    let mut mapper = Mapper::new();
    mapper.register(question_mapping())?;
    let spec = mapper.def("Question")?.spec("votes").expect("votes is sharded").clone();
    let config = StoreConfig {
        rng_seed: DEMO_SEED,
        ..StoreConfig::default()
    };
    let window = config.query_staleness_window;
    let mut store = DocStore::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(DEMO_SEED);

    let q42 = Key::new("Question", "42");
    let shard_keys: Vec<Key> = (1..=3).map(|i| Key::new("Shard", format!("42-{i}"))).collect();
    let all_keys: Vec<Key> = std::iter::once(q42.clone()).chain(shard_keys.iter().cloned()).collect();
    let mut steps = Vec::new();

    let props = BTreeMap::from([
        ("id".to_owned(), PropertyValue::Int(42)),
        (
            "question".to_owned(),
            "How do you plan to improve public education?".into(),
        ),
        ("author".to_owned(), "Phil R".into()),
        ("votes".to_owned(), PropertyValue::Int(76)),
    ]);
    mapper.create(&mut store, "Question", props)?;
    store.advance_time(window);
    steps.push(DemoStep {
        at: store.now(),
        label: "question 42 stored with votes split over three shards".into(),
        entities: listing(&store, &all_keys),
        query_value: Some(query_fold(&store, &spec)?),
        quiescent: true,
    });

    let mut first = mapper.load(&store, "Question", &q42)?;
    let mut second = mapper.load(&store, "Question", &q42)?;
    mapper.apply_shard_method(&mut first, "voteUp", &[])?;
    mapper.apply_shard_method(&mut second, "voteUp", &[])?;
    let first_write = mapper.save(&mut store, &mut first, &mut rng)?;
    let first_at = store.now();
    store.advance_time(Duration::from_millis(200));
    let second_write = mapper.save(&mut store, &mut second, &mut rng)?;
    let last_commit = store.now();
    let touched: Vec<Key> = first_write
        .shard_writes
        .iter()
        .chain(&second_write.shard_writes)
        .map(|(_, k)| k.clone())
        .collect();
    steps.push(DemoStep {
        at: store.now(),
        label: format!(
            "two concurrent up-votes saved at t={}ms and t={}ms",
            ms(first_at),
            ms(last_commit)
        ),
        entities: listing(&store, &touched),
        query_value: None,
        quiescent: false,
    });

    for at in [
        last_commit + Duration::from_millis(100),
        first_at + window + Duration::from_millis(100),
    ] {
        store.advance_to(at);
        steps.push(DemoStep {
            at,
            label: "shard query while recent commits are still settling".into(),
            entities: Vec::new(),
            query_value: Some(query_fold(&store, &spec)?),
            quiescent: false,
        });
    }

    store.advance_to(last_commit + window);
    steps.push(DemoStep {
        at: store.now(),
        label: "shard query after the store has gone quiet".into(),
        entities: listing(&store, &all_keys),
        query_value: Some(query_fold(&store, &spec)?),
        quiescent: true,
    });

    let final_value = mapper
        .reload_value(&store, "Question", &q42, "votes")?
        .as_int()
        .unwrap_or(0);
    Ok(DemoTrace { steps, final_value })
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}
