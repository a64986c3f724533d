// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

//! Property-level checks of the sharding layer against independent oracles.

use std::time::Duration;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shardmap::shardcore::{
    compact, dynamic_shard_append, estimate_conflict_rate, fold_all, load_shards, prepare_dynamic_append,
    static_shard_init, static_shard_update, FoldFn, FoldRegistry, ShardMode, ShardSpec,
};
use shardmap::{DocStore, Entity, Key, PropertyValue, StoreConfig};

fn owner() -> Key {
    Key::new("Question", "42")
}

fn settle(store: &mut DocStore) {
    let c = store.config().clone();
    store.advance_time(c.query_staleness_window.max(c.commit_service_time));
}

/// Expected fraction of `k` simultaneous writers that lose when each picks
/// one of `n` shards uniformly: only one writer per occupied shard commits,
/// and the expected number of occupied shards is `n (1 - (1 - 1/n)^k)`.
fn collision_oracle(n: u32, k: u32) -> f64 {
    let n = f64::from(n);
    let occupied = n * (1.0 - (1.0 - 1.0 / n).powi(k as i32));
    1.0 - occupied / f64::from(k)
}

#[test]
fn conflict_rate_matches_collision_model_and_falls_with_shards() {
    let writers = 8;
    let mut last = f64::INFINITY;
    for n in [1, 2, 4, 8, 16, 32] {
        let est = estimate_conflict_rate(n, writers, 3000, 0x5eed + u64::from(n));
        let expected = collision_oracle(n, writers);
        let tol = 3.0 * est.std_error() + 1e-12;
        assert!(
            (est.conflict_rate - expected).abs() <= tol,
            "n={n}: {} vs oracle {expected} (tol {tol})",
            est.conflict_rate
        );
        assert!(est.conflict_rate < last, "n={n}");
        last = est.conflict_rate;
    }
}

#[test]
fn thousand_concurrent_dynamic_appends_never_contend() {
    let spec = ShardSpec::counter("votes", ShardMode::Dynamic).unwrap();
    let mut store = DocStore::new(StoreConfig::default());
    let mut pending = Vec::new();
    for _ in 0..1000 {
        pending.push(
            prepare_dynamic_append(&mut store, &owner(), &PropertyValue::Int(1), &spec)
                .unwrap()
                .0,
        );
    }
    let failures = pending
        .iter_mut()
        .map(|tx| store.commit(tx))
        .filter(Result::is_err)
        .count();
    assert_eq!(failures, 0);
    settle(&mut store);
    let shards = load_shards(&store, &owner(), &spec).unwrap();
    assert_eq!(shards.len(), 1000);
    assert_eq!(fold_all(&shards, &spec).unwrap(), PropertyValue::Int(1000));
}

fn sum_int() -> impl Strategy<Value = i64> {
    -(1i64 << 40)..(1i64 << 40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn integer_folds_are_lawful(a in sum_int(), b in sum_int(), c in sum_int()) {
        let registry = FoldRegistry::default();
        for (name, neutral) in [("sum-int", 0), ("max-int", i64::MIN), ("min-int", i64::MAX)] {
            let f = registry.get(name).unwrap();
            let (a, b, c, e) = (PropertyValue::Int(a), PropertyValue::Int(b), PropertyValue::Int(c), PropertyValue::Int(neutral));
            prop_assert_eq!(f.apply(&a, &b).unwrap(), f.apply(&b, &a).unwrap());
            let left = f.apply(&f.apply(&a, &b).unwrap(), &c).unwrap();
            let right = f.apply(&a, &f.apply(&b, &c).unwrap()).unwrap();
            prop_assert_eq!(left, right);
            prop_assert_eq!(f.apply(&a, &e).unwrap(), a.clone());
            prop_assert_eq!(f.apply(&e, &a).unwrap(), a);
        }
    }

    #[test]
    fn float_sum_is_lawful_on_exact_values(a in -(1i64 << 30)..(1i64 << 30), b in -(1i64 << 30)..(1i64 << 30), c in -(1i64 << 30)..(1i64 << 30)) {
        let f = FoldFn::sum_float();
        let v = |x: i64| PropertyValue::Float(x as f64 / 8.0);
        let (a, b, c) = (v(a), v(b), v(c));
        prop_assert_eq!(f.apply(&a, &b).unwrap(), f.apply(&b, &a).unwrap());
        prop_assert_eq!(
            f.apply(&f.apply(&a, &b).unwrap(), &c).unwrap(),
            f.apply(&a, &f.apply(&b, &c).unwrap()).unwrap()
        );
        prop_assert_eq!(f.apply(&a, &PropertyValue::Float(0.0)).unwrap(), a);
    }

    /// Serialized static updates: the fold equals the plain running sum.
    #[test]
    fn static_updates_conserve_the_sum(
        initial in -100_000i64..100_000,
        n in 1u32..=32,
        deltas in prop::collection::vec(-50i64..=50, 1..200),
        seed in any::<u64>(),
    ) {
        let spec = ShardSpec::counter("votes", ShardMode::Static(n)).unwrap();
        let mut store = DocStore::new(StoreConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, init) = static_shard_init(&Entity::new(owner()).with("votes", initial), &spec).unwrap();
        for s in &init {
            store.put(s.to_entity(&spec)).unwrap();
        }
        let service = store.config().commit_service_time;
        let mut expected = initial;
        for d in deltas {
            store.advance_time(service);
            static_shard_update(&mut store, &owner(), &PropertyValue::Int(d), &spec, &mut rng).unwrap();
            expected += d;
        }
        let shards = load_shards(&store, &owner(), &spec).unwrap();
        prop_assert_eq!(shards.len(), n as usize);
        prop_assert_eq!(fold_all(&shards, &spec).unwrap(), PropertyValue::Int(expected));
    }

    /// Compaction leaves one shard with the same fold, whatever the fold.
    #[test]
    fn compaction_preserves_the_fold(
        values in prop::collection::vec(-1_000_000i64..1_000_000, 0..40),
        fold in prop::sample::select(vec!["sum-int", "max-int", "min-int"]),
        seed in any::<u64>(),
    ) {
        let registry = FoldRegistry::default();
        let f = registry.get(fold).unwrap().clone();
        let neutral = match fold {
            "sum-int" => 0,
            "max-int" => i64::MIN,
            _ => i64::MAX,
        };
        let spec = ShardSpec::new("votes", PropertyValue::Int(neutral), f, ShardMode::Dynamic).unwrap();
        let mut store = DocStore::new(StoreConfig { rng_seed: seed, ..StoreConfig::default() });
        for v in &values {
            dynamic_shard_append(&mut store, &owner(), &PropertyValue::Int(*v), &spec).unwrap();
        }
        settle(&mut store);
        let before = fold_all(&load_shards(&store, &owner(), &spec).unwrap(), &spec).unwrap();
        let mut oracle = neutral;
        for v in &values {
            oracle = match fold {
                "sum-int" => oracle + v,
                "max-int" => oracle.max(*v),
                _ => oracle.min(*v),
            };
        }
        prop_assert_eq!(&before, &PropertyValue::Int(oracle));
        let merged = compact(&mut store, &owner(), &spec).unwrap();
        settle(&mut store);
        let after = load_shards(&store, &owner(), &spec).unwrap();
        prop_assert_eq!(after.len(), 1);
        prop_assert_eq!(&after[0].value, &before);
        prop_assert_eq!(merged.value, before);
    }
}

#[test]
fn compaction_is_bounded_by_the_group_cap() {
    let spec = ShardSpec::counter("votes", ShardMode::Dynamic).unwrap();
    let mut store = DocStore::new(StoreConfig::default());
    for _ in 0..9 {
        dynamic_shard_append(&mut store, &owner(), &PropertyValue::Int(1), &spec).unwrap();
    }
    settle(&mut store);
    let before = store.event_log().len();
    let t0 = store.now();
    compact(&mut store, &owner(), &spec).unwrap();
    // 9 shards, 4 deletions per transaction
    assert_eq!(store.event_log().len() - before, 3);
    assert_eq!(store.now() - t0, Duration::from_millis(300));
    assert!(store.event_log()[before..].iter().all(|r| r.groups.len() <= 5));
}
