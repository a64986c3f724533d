// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use shardmap::mapper::{Mapper, MappingDef, MethodOp};
use shardmap::shardcore::{dynamic_shard_append, FoldRegistry, ShardMode, ShardSpec};
use shardmap::simharness::{run_seeds, seed_range, Strategy, WorkloadConfig, WorkloadReport};
use shardmap::txretry::RetryPolicy;
use shardmap::{DocStore, Key, PropertyValue, StoreConfig, StoreError};
use shardmap_cli::compact_snapshot;
use shardmap_cli::demo::run_demo;

type Verdict = Result<String, String>;
type Draw = Box<dyn Fn(&mut ChaCha8Rng) -> PropertyValue>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(budget: Duration, start: Instant, verdict: Verdict) -> Verdict {
    let took = start.elapsed();
    let tag = format!("{:.2}s of {}s", took.as_secs_f64(), budget.as_secs());
    match verdict {
        Ok(d) if took <= budget => Ok(format!("{d} [{tag}]")),
        Ok(d) => Err(format!("{d} [over budget: {tag}]")),
        Err(d) => Err(format!("{d} [{tag}]")),
    }
}

fn settle(store: &mut DocStore) {
    let c = store.config().clone();
    store.advance_time(c.query_staleness_window.max(c.commit_service_time));
}

fn counter_mapper(mode: ShardMode) -> Mapper {
    let mut m = Mapper::new();
    m.register(
        MappingDef::new("Question")
            .shard(ShardSpec::counter("votes", mode).unwrap())
            .method("voteUp", "votes", MethodOp::Increment),
    )
    .unwrap();
    m
}

fn create_question(m: &Mapper, store: &mut DocStore, votes: i64) -> Key {
    let props = BTreeMap::from([
        ("id".to_owned(), PropertyValue::Int(42)),
        ("votes".to_owned(), PropertyValue::Int(votes)),
    ]);
    m.create(store, "Question", props).unwrap();
    Key::new("Question", "42")
}

/// 1. Fold laws over 10,000 random triples per registered fold.
fn fold_laws() -> Verdict {
    let start = Instant::now();
    let registry = FoldRegistry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = Vec::new();
    for fold in registry.iter() {
        let (neutral, draw): (PropertyValue, Draw) = match fold.name() {
            "sum-int" => (
                PropertyValue::Int(0),
                Box::new(|r| PropertyValue::Int(r.random_range(-(1i64 << 40)..(1i64 << 40)))),
            ),
            "max-int" => (
                PropertyValue::Int(i64::MIN),
                Box::new(|r| PropertyValue::Int(r.random())),
            ),
            "min-int" => (
                PropertyValue::Int(i64::MAX),
                Box::new(|r| PropertyValue::Int(r.random())),
            ),
            "sum-float" => (
                PropertyValue::Float(0.0),
                Box::new(|r| PropertyValue::Float(r.random_range(-(1i64 << 30)..(1i64 << 30)) as f64 / 8.0)),
            ),
            other => return Err(format!("no neutral element known for fold `{other}`")),
        };
        for _ in 0..10_000 {
            let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let f = |x: &PropertyValue, y: &PropertyValue| fold.apply(x, y).unwrap();
            let lawful = f(&a, &b) == f(&b, &a)
                && f(&f(&a, &b), &c) == f(&a, &f(&b, &c))
                && f(&a, &neutral) == a
                && f(&neutral, &a) == a;
            if !lawful {
                return Err(format!("{} violates a law at ({a}, {b}, {c})", fold.name()));
            }
        }
        checked.push(fold.name().to_owned());
    }
    within(
        Duration::from_secs(5),
        start,
        Ok(format!("10000 triples each for {}", checked.join(", "))),
    )
}

/// 2. Serialized load/voteUp/save sessions conserve the running sum.
fn conservation() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases = 150;
    let mut total_saves = 0;
    for case in 0..cases {
        let initial = rng.random_range(-10_000i64..10_000);
        let n = rng.random_range(1..=32u32);
        let increments = rng.random_range(1..=500u32);
        let m = counter_mapper(ShardMode::Static(n));
        let mut store = DocStore::new(StoreConfig::default());
        let key = create_question(&m, &mut store, initial);
        let service = store.config().commit_service_time;
        for _ in 0..increments {
            store.advance_time(service);
            let mut obj = m.load(&store, "Question", &key).unwrap();
            m.apply_shard_method(&mut obj, "voteUp", &[]).unwrap();
            m.save(&mut store, &mut obj, &mut rng).unwrap();
        }
        total_saves += increments;
        let got = m.reload_value(&store, "Question", &key, "votes").unwrap();
        let expected = initial + i64::from(increments);
        if got != PropertyValue::Int(expected) {
            return Err(format!("case {case} (n={n}): reload {got}, expected {expected}"));
        }
    }
    within(
        Duration::from_secs(10),
        start,
        Ok(format!(
            "{cases} cases, {total_saves} saves, all equal to the sequential sum"
        )),
    )
}

fn arm(strategy: Strategy, retry: RetryPolicy) -> Vec<WorkloadReport> {
    let config = WorkloadConfig {
        strategy,
        retry,
        ..WorkloadConfig::default()
    };
    run_seeds(&config, &seed_range(0, 10))
        .into_iter()
        .map(Result::unwrap)
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// 3. Static 16 with retries loses nothing.
fn retry_no_loss() -> Verdict {
    let start = Instant::now();
    let runs = arm(Strategy::Static(16), RetryPolicy::until_success());
    let bad: Vec<String> = runs
        .iter()
        .filter(|r| r.failure_rate != 0.0 || r.total_final() != 2000)
        .map(|r| {
            format!(
                "seed {}: failure_rate {} total {}",
                r.config.seed,
                r.failure_rate,
                r.total_final()
            )
        })
        .collect();
    let verdict = check(
        bad.is_empty(),
        if bad.is_empty() {
            "10 seeds: failure_rate 0, 2000 votes counted each".to_owned()
        } else {
            bad.join("; ")
        },
    );
    within(Duration::from_secs(30), start, verdict)
}

/// 4 and 6 share the no-retry runs.
fn contention_trend(naive: &[WorkloadReport], sharded: &[WorkloadReport], start: Instant) -> Verdict {
    let rate = |rs: &[WorkloadReport]| mean(&rs.iter().map(|r| r.failure_rate).collect::<Vec<_>>());
    let (n, s) = (rate(naive), rate(sharded));
    let verdict = check(
        n > 0.15 && s <= n / 3.0,
        format!(
            "mean failure rate naive {n:.4} (> 0.15), static-16 {s:.4} (<= {:.4})",
            n / 3.0
        ),
    );
    within(Duration::from_secs(60), start, verdict)
}

fn sharding_overhead(naive: &[WorkloadReport], sharded: &[WorkloadReport]) -> Verdict {
    let ok_mean = |rs: &[WorkloadReport]| mean(&rs.iter().map(|r| r.mean_tx_ms.unwrap()).collect::<Vec<_>>());
    let (n, s) = (ok_mean(naive), ok_mean(sharded));
    check(
        s >= n,
        format!("mean successful tx time static-16 {s:.3} ms >= naive {n:.3} ms"),
    )
}

/// 5. With retries, sharding is faster by more than three standard errors.
fn retry_latency() -> Verdict {
    let start = Instant::now();
    let times = |rs: Vec<WorkloadReport>| rs.iter().map(|r| r.mean_tx_ms.unwrap()).collect::<Vec<_>>();
    let naive = times(arm(Strategy::Naive, RetryPolicy::until_success()));
    let sharded = times(arm(Strategy::Static(16), RetryPolicy::until_success()));
    let diff = mean(&naive) - mean(&sharded);
    let se = (variance(&naive) / naive.len() as f64 + variance(&sharded) / sharded.len() as f64).sqrt();
    let verdict = check(
        diff > 3.0 * se,
        format!(
            "mean tx time naive {:.3} ms, static-16 {:.3} ms, gap {diff:.3} > 3se {:.3}",
            mean(&naive),
            mean(&sharded),
            3.0 * se
        ),
    );
    within(Duration::from_secs(60), start, verdict)
}

/// 7. A thousand simultaneous dynamic-mode saves.
fn dynamic_zero_contention() -> Verdict {
    let m = counter_mapper(ShardMode::Dynamic);
    let mut store = DocStore::new(StoreConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let key = create_question(&m, &mut store, 76);
    settle(&mut store);
    let mut sessions = Vec::new();
    for _ in 0..1000 {
        let mut obj = m.load(&store, "Question", &key).unwrap();
        m.apply_shard_method(&mut obj, "voteUp", &[]).unwrap();
        let pending = m.begin_save(&mut store, &mut obj, &mut rng);
        sessions.push((obj, pending));
    }
    let mut contention = 0;
    for (mut obj, pending) in sessions {
        let result = pending.and_then(|p| m.finish_save(&mut store, &mut obj, p));
        if let Err(e) = result {
            if e.is_contention() {
                contention += 1;
            } else {
                return Err(format!("unexpected error {e}"));
            }
        }
    }
    settle(&mut store);
    let total = m.reload_value(&store, "Question", &key, "votes").unwrap();
    check(
        contention == 0 && total == PropertyValue::Int(1076),
        format!("{contention} contention errors, fold {total} (expected 1076)"),
    )
}

/// 8. Random dynamic snapshots compact to one shard with the same fold.
fn compaction() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let registry = FoldRegistry::default();
    let folds = [("sum-int", 0i64), ("max-int", i64::MIN), ("min-int", i64::MAX)];
    let owner = Key::new("Question", "42");
    let bystander = Key::new("Question", "7");
    for case in 0..1000 {
        let (name, neutral) = folds[rng.random_range(0..folds.len())];
        let spec = ShardSpec::new(
            "votes",
            PropertyValue::Int(neutral),
            registry.get(name).unwrap().clone(),
            ShardMode::Dynamic,
        )
        .unwrap();
        let mut store = DocStore::new(StoreConfig {
            rng_seed: rng.random(),
            ..StoreConfig::default()
        });
        let count = rng.random_range(0..=24);
        let mut oracle = neutral;
        for _ in 0..count {
            let v = rng.random_range(-1_000_000i64..1_000_000);
            oracle = match name {
                "sum-int" => oracle + v,
                "max-int" => oracle.max(v),
                _ => oracle.min(v),
            };
            dynamic_shard_append(&mut store, &owner, &PropertyValue::Int(v), &spec).unwrap();
        }
        dynamic_shard_append(&mut store, &bystander, &PropertyValue::Int(3), &spec).unwrap();
        let summary = compact_snapshot(&store.dump(), &owner, &spec).map_err(|e| format!("case {case}: {e}"))?;
        let items = summary.snapshot.as_array().unwrap();
        let owned: Vec<&Value> = items.iter().filter(|e| e["question"] == "42").collect();
        let others = items.iter().filter(|e| e["question"] == "7").count();
        if owned.len() != 1 || owned[0]["shard_votes"] != oracle || others != 1 {
            return Err(format!(
                "case {case} ({name}, {count} shards): {} shard(s) after compaction, expected one holding {oracle}",
                owned.len()
            ));
        }
    }
    within(
        Duration::from_secs(60),
        start,
        Ok("1000 snapshots, one shard each, fold unchanged".into()),
    )
}

/// 9. The walkthrough shows a stale 76 or 77, then 78.
fn demo_convergence() -> Verdict {
    let trace = run_demo().map_err(|e| e.to_string())?;
    let values: Vec<(bool, i64)> = trace.query_values().collect();
    let stale: Vec<i64> = values.iter().filter(|(q, _)| !q).map(|(_, v)| *v).collect();
    let settled = values.last().copied();
    check(
        stale.iter().any(|v| [76, 77].contains(v)) && settled == Some((true, 78)) && trace.final_value == 78,
        format!(
            "queries before quiescence {stale:?}, after {:?}, final {}",
            settled.map(|s| s.1),
            trace.final_value
        ),
    )
}

/// 10. Five entity groups per transaction, not six.
fn group_cap() -> Verdict {
    let mut store = DocStore::new(StoreConfig::default());
    let roots = |n: usize| (1..=n).map(|i| Key::new("Question", i.to_string())).collect::<Vec<_>>();
    let five = store.begin_transaction(roots(5));
    let six = store.begin_transaction(roots(6));
    check(
        five.is_ok() && matches!(six, Err(StoreError::TooManyGroups { requested: 6, max: 5 })),
        format!(
            "5 groups: {}, 6 groups: {}",
            if five.is_ok() { "accepted" } else { "rejected" },
            match six {
                Ok(_) => "accepted".to_owned(),
                Err(e) => format!("rejected ({e})"),
            }
        ),
    )
}

/// 11. Repeated bench/sweep invocations write identical bytes.
fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: [(&str, Vec<&str>); 3] = [
        (
            "bench.json",
            vec![
                "bench",
                "--strategy",
                "static",
                "--shards",
                "16",
                "--retry",
                "until-success",
                "--seed",
                "7",
            ],
        ),
        (
            "bench.csv",
            vec!["bench", "--strategy", "naive", "--retry", "none", "--seed", "3"],
        ),
        (
            "sweep.csv",
            vec![
                "sweep",
                "--shards-list",
                "1,2,4,8,16",
                "--retry",
                "none",
                "--seed",
                "11",
            ],
        ),
    ];
    let mut sizes = Vec::new();
    for (name, args) in runs {
        let mut outputs = Vec::new();
        for attempt in 0..2 {
            let path = dir.path().join(format!("{attempt}-{name}"));
            let status = Command::new(env!("CARGO_BIN_EXE_shardmap"))
                .args(&args)
                .arg("--out")
                .arg(&path)
                .env_remove("SHARDMAP_SEED")
                .output()
                .map_err(|e| e.to_string())?
                .status;
            if !status.success() {
                return Err(format!("{name}: exit {status}"));
            }
            outputs.push(fs::read(&path).map_err(|e| e.to_string())?);
        }
        if outputs[0] != outputs[1] {
            return Err(format!("{name}: outputs differ"));
        }
        sizes.push(format!("{name} {} bytes", outputs[0].len()));
    }
    Ok(format!("identical repeats: {}", sizes.join(", ")))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    results.push((1, "fold laws", fold_laws()));
    results.push((2, "serialized conservation", conservation()));
    results.push((3, "no lost updates with retry", retry_no_loss()));
    let start = Instant::now();
    let naive = arm(Strategy::Naive, RetryPolicy::none());
    let sharded = arm(Strategy::Static(16), RetryPolicy::none());
    results.push((4, "contention trend", contention_trend(&naive, &sharded, start)));
    results.push((5, "retry latency ordering", retry_latency()));
    results.push((6, "sharding overhead direction", sharding_overhead(&naive, &sharded)));
    results.push((7, "dynamic zero contention", dynamic_zero_contention()));
    results.push((8, "compaction", compaction()));
    results.push((9, "eventual consistency demo", demo_convergence()));
    results.push((10, "transaction group cap", group_cap()));
    results.push((11, "determinism", determinism()));

    let mut failed = 0;
    for (n, name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("PASS criterion {n:>2} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n:>2} ({name}): {detail}");
            }
        }
    }
    println!(
        "{} of {} acceptance criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
