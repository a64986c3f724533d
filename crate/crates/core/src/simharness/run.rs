// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::report::{percentile, round_ms, WorkloadReport};
use super::{HarnessError, Strategy, WorkloadConfig};
use crate::docstore::{DocStore, Entity, Key, Transaction};
use crate::exec::derive_seed;
use crate::mapper::{MappedObject, Mapper, MapperError, MappingDef, MethodOp, PendingSave};
use crate::shardcore::{group_union, prepare_group_write, ShardMode, ShardSpec};
use crate::value::PropertyValue;

const QUESTION: &str = "Question";
const VOTE: &str = "Vote";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Phase {
    Load,
    Prepare,
    Commit,
}

enum Pending {
    Save(PendingSave),
    Group(Transaction),
}

struct Vote {
    qid: u64,
    key: Key,
    arrival: Duration,
    attempts: u32,
    obj: Option<MappedObject>,
    pending: Option<Pending>,
    /// (succeeded, finished at)
    outcome: Option<(bool, Duration)>,
}

struct Sim<'a> {
    config: &'a WorkloadConfig,
    mapper: Mapper,
    store: DocStore,
    rng: ChaCha8Rng,
    events: BinaryHeap<Reverse<(Duration, u64, usize, Phase)>>,
    seq: u64,
    votes: Vec<Vote>,
}

fn mapping(strategy: Strategy) -> MappingDef {
    let counter = |mode| {
        MappingDef::new(QUESTION)
            .shard(ShardSpec::counter("votes", mode).expect("built-in counter"))
            .method("voteUp", "votes", MethodOp::Increment)
    };
    match strategy {
        Strategy::Naive => MappingDef::new(QUESTION).plain(&["votes"]),
        Strategy::Static(n) => counter(ShardMode::Static(n)),
        Strategy::Dynamic => counter(ShardMode::Dynamic),
        Strategy::Group(_) => MappingDef::new(QUESTION),
    }
}

fn settle_time(store: &DocStore) -> Duration {
    let c = store.config();
    c.query_staleness_window.max(c.commit_service_time)
}

/// Runs one workload on a fresh store.
pub fn run_workload(config: &WorkloadConfig) -> Result<WorkloadReport, HarnessError> {
    config.validate()?;
    let mut mapper = Mapper::new();
    mapper.register(mapping(config.strategy))?;
    let mut store = DocStore::new(config.store.clone());
    for qid in 1..=u64::from(config.questions) {
        let mut props = BTreeMap::from([("id".to_owned(), PropertyValue::Int(qid as i64))]);
        if !matches!(config.strategy, Strategy::Group(_)) {
            props.insert("votes".to_owned(), PropertyValue::Int(0));
        }
        mapper.create(&mut store, QUESTION, props)?;
    }
    let start = store.now() + settle_time(&store);
    store.advance_to(start);

    let mut arrivals = ChaCha8Rng::seed_from_u64(config.seed);
    let gap = Exp::new(config.arrival_rate).expect("validated rate");
    let mut t = start;
    let mut sim = Sim {
        config,
        mapper,
        store,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1)),
        events: BinaryHeap::new(),
        seq: 0,
        votes: Vec::with_capacity(config.total_votes as usize),
    };
    for i in 0..config.total_votes as usize {
        t += Duration::from_secs_f64(gap.sample(&mut arrivals));
        let qid = arrivals.random_range(1..=u64::from(config.questions));
        sim.votes.push(Vote {
            qid,
            key: Key::new(QUESTION, qid.to_string()),
            arrival: t,
            attempts: 0,
            obj: None,
            pending: None,
            outcome: None,
        });
        sim.schedule(t, i, Phase::Load);
    }

    while let Some(Reverse((at, _, vote, phase))) = sim.events.pop() {
        sim.store.advance_to(at);
        match phase {
            Phase::Load => sim.load(vote)?,
            Phase::Prepare => sim.prepare(vote)?,
            Phase::Commit => sim.commit(vote)?,
        }
    }
    let quiet = settle_time(&sim.store);
    sim.store.advance_time(quiet);
    sim.report()
}

impl Sim<'_> {
    fn schedule(&mut self, at: Duration, vote: usize, phase: Phase) {
        self.events.push(Reverse((at, self.seq, vote, phase)));
        self.seq += 1;
    }

    fn latency(&self) -> Duration {
        self.config.read_latency
    }

    fn load(&mut self, i: usize) -> Result<(), HarnessError> {
        let mut obj = self.mapper.load(&self.store, QUESTION, &self.votes[i].key)?;
        match self.config.strategy {
            Strategy::Naive => {
                let votes = obj.get("votes").and_then(PropertyValue::as_int).unwrap_or(0);
                obj.set("votes", votes + 1)?;
            }
            Strategy::Static(_) | Strategy::Dynamic => self.mapper.apply_shard_method(&mut obj, "voteUp", &[])?,
            Strategy::Group(_) => {}
        }
        self.votes[i].obj = Some(obj);
        let at = self.store.now() + self.latency();
        self.schedule(at, i, Phase::Prepare);
        Ok(())
    }

    fn prepare(&mut self, i: usize) -> Result<(), HarnessError> {
        let now = self.store.now();
        let opened = match self.config.strategy {
            Strategy::Group(n) => {
                let index = self.rng.random_range(1..=n);
                let vote = &self.votes[i];
                let member =
                    Entity::new(Key::new(VOTE, format!("{}-{}", vote.qid, i + 1))).with("question", vote.qid as i64);
                prepare_group_write(&mut self.store, &vote.key, index, &member)
                    .map(|(tx, _)| Some(Pending::Group(tx)))
                    .map_err(MapperError::from)
            }
            _ => {
                let obj = self.votes[i].obj.as_mut().expect("loaded before prepare");
                match self.mapper.begin_save(&mut self.store, obj, &mut self.rng) {
                    Ok(p) if p.shard_transactions() == 0 => {
                        self.mapper.finish_save(&mut self.store, obj, p)?;
                        Ok(None)
                    }
                    Ok(p) => Ok(Some(Pending::Save(p))),
                    Err(e) => Err(e),
                }
            }
        };
        match opened {
            Ok(Some(pending)) => {
                self.votes[i].pending = Some(pending);
                self.schedule(now + self.latency(), i, Phase::Commit);
                Ok(())
            }
            Ok(None) => {
                self.succeed(i, now);
                Ok(())
            }
            Err(e) if e.is_contention() => {
                self.fail(i, now);
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    fn commit(&mut self, i: usize) -> Result<(), HarnessError> {
        let now = self.store.now();
        let result = match self.votes[i].pending.take().expect("prepared before commit") {
            Pending::Group(mut tx) => self.store.commit(&mut tx).map(|_| ()).map_err(MapperError::from),
            Pending::Save(p) => {
                let obj = self.votes[i].obj.as_mut().expect("loaded before commit");
                self.mapper.finish_save(&mut self.store, obj, p).map(|_| ())
            }
        };
        match result {
            Ok(()) => self.succeed(i, now),
            Err(e) if e.is_contention() => self.fail(i, now),
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    fn succeed(&mut self, i: usize, committed_at: Duration) {
        let done = committed_at + self.store.config().commit_service_time;
        let vote = &mut self.votes[i];
        vote.attempts += 1;
        vote.outcome = Some((true, done));
        vote.obj = None;
    }

    fn fail(&mut self, i: usize, now: Duration) {
        let vote = &mut self.votes[i];
        vote.attempts += 1;
        match self.config.retry.next_delay(vote.attempts, &mut self.rng) {
            Some(wait) => {
                let phase = if self.config.strategy == Strategy::Naive {
                    vote.obj = None;
                    Phase::Load
                } else {
                    Phase::Prepare
                };
                self.schedule(now + wait, i, phase);
            }
            None => {
                vote.outcome = Some((false, now));
                vote.obj = None;
            }
        }
    }

    fn final_value(&self, key: &Key) -> Result<i64, HarnessError> {
        let value = match self.config.strategy {
            Strategy::Naive => self
                .store
                .get(key)
                .and_then(|e| e.get("votes").and_then(PropertyValue::as_int))
                .unwrap_or(0),
            Strategy::Static(_) | Strategy::Dynamic => self
                .mapper
                .reload_value(&self.store, QUESTION, key, "votes")?
                .as_int()
                .unwrap_or(0),
            Strategy::Group(n) => group_union(&self.store, key, n).len() as i64,
        };
        Ok(value)
    }

    fn report(&self) -> Result<WorkloadReport, HarnessError> {
        let mut ok_times = Vec::new();
        let mut all_sum = 0.0;
        let mut attempts = 0u64;
        let mut per_question_succeeded = BTreeMap::new();
        for v in &self.votes {
            let (success, end) = v.outcome.expect("every vote resolves");
            let ms = (end - v.arrival).as_secs_f64() * 1000.0;
            all_sum += ms;
            attempts += u64::from(v.attempts);
            let count = per_question_succeeded.entry(v.qid).or_insert(0u32);
            if success {
                ok_times.push(ms);
                *count += 1;
            }
        }
        let mut per_question_final = BTreeMap::new();
        for qid in 1..=u64::from(self.config.questions) {
            per_question_succeeded.entry(qid).or_insert(0);
            per_question_final.insert(qid, self.final_value(&Key::new(QUESTION, qid.to_string()))?);
        }
        ok_times.sort_by(f64::total_cmp);
        let issued = self.votes.len() as u32;
        let succeeded = ok_times.len() as u32;
        let failed = issued - succeeded;
        let mean = (!ok_times.is_empty()).then(|| round_ms(ok_times.iter().sum::<f64>() / ok_times.len() as f64));
        let pct = |p| percentile(&ok_times, p).map(round_ms);
        Ok(WorkloadReport {
            strategy: self.config.strategy,
            issued,
            succeeded,
            failed,
            failure_rate: f64::from(failed) / f64::from(issued),
            attempts,
            mean_tx_ms: mean,
            p50_tx_ms: pct(50.0),
            p95_tx_ms: pct(95.0),
            p99_tx_ms: pct(99.0),
            mean_all_tx_ms: round_ms(all_sum / f64::from(issued)),
            tx_time_includes_backoff: true,
            per_question_final,
            per_question_succeeded,
            config: self.config.clone(),
        })
    }
}
