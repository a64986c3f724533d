// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

//! The `shardmap` command line: `bench`, `sweep`, `demo` and `compact`.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.

pub mod demo;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;
use shardmap::shardcore::{compact, fold_all, load_shards, FoldRegistry, ShardMode, ShardSpec, ShardSpecConfig};
use shardmap::simharness::{run_workload, sweep, Strategy, WorkloadConfig, WorkloadReport};
use shardmap::txretry::{Backoff, RetryMode, RetryPolicy};
use shardmap::{DocStore, Key, StoreConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "shardmap", version, about = "Sharded-counter contention simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one voting workload and report failure rate and latency.
    Bench(BenchArgs),
    /// Run the workload once per shard count, one CSV row each.
    Sweep(SweepArgs),
    /// Replay the question-42 walkthrough.
    Demo,
    /// Fold the dynamic shards of one owner in a store snapshot.
    Compact(CompactArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Naive,
    Static,
    Dynamic,
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RetryArg {
    None,
    UntilSuccess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Workload knobs shared by `bench` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct WorkloadArgs {
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    pub questions: u32,
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u32).range(1..))]
    pub votes: u32,
    /// Votes per virtual second across all questions.
    #[arg(long, default_value_t = 75.0, value_parser = positive_f64)]
    pub rps: f64,
    #[arg(long, value_enum, default_value_t = RetryArg::UntilSuccess)]
    pub retry: RetryArg,
    /// Fixed backoff between retries, virtual ms.
    #[arg(long, default_value_t = 50.0, value_parser = non_negative_f64)]
    pub backoff_ms: f64,
    #[arg(long, default_value_t = 0.5)]
    pub jitter: f64,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_attempts: Option<u32>,
    #[arg(long, env = "SHARDMAP_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10.0, value_parser = non_negative_f64)]
    pub read_latency_ms: f64,
    #[arg(long, default_value_t = 150.0, value_parser = non_negative_f64)]
    pub service_ms: f64,
    #[arg(long, default_value_t = 500.0, value_parser = non_negative_f64)]
    pub staleness_ms: f64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_groups: u64,
    /// Write the report here; format follows the extension unless --format.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = StrategyArg::Static)]
    pub strategy: StrategyArg,
    /// Shards (static) or replica groups (group) per question.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    pub shards: u32,
    #[command(flatten)]
    pub workload: WorkloadArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value_t = StrategyArg::Static)]
    pub strategy: StrategyArg,
    /// Comma-separated shard counts, e.g. 1,2,4,8,16.
    #[arg(long, value_delimiter = ',', required = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub shards_list: Vec<u32>,
    #[command(flatten)]
    pub workload: WorkloadArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompactArgs {
    /// Store snapshot (JSON array of entities).
    #[arg(long)]
    pub store: PathBuf,
    /// Id of the entity whose shards are compacted.
    #[arg(long)]
    pub owner: String,
    #[arg(long, default_value = "Question")]
    pub owner_kind: String,
    /// Shard spec JSON, e.g. {"property":"votes","neutral":0,"fold":"sum-int","mode":"dynamic"}.
    #[arg(long)]
    pub spec_file: PathBuf,
    /// Where to write the compacted snapshot; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("expected a non-negative number, got `{s}`")),
    }
}

fn ms(v: f64) -> Duration {
    Duration::from_secs_f64(v / 1000.0)
}

impl WorkloadArgs {
    fn policy(&self) -> RetryPolicy {
        match self.retry {
            RetryArg::None => RetryPolicy::none(),
            RetryArg::UntilSuccess => RetryPolicy {
                mode: RetryMode::UntilSuccess {
                    max_attempts: self.max_attempts,
                },
                backoff: if self.backoff_ms > 0.0 {
                    Backoff::Fixed(ms(self.backoff_ms))
                } else {
                    Backoff::None
                },
                jitter: self.jitter,
            },
        }
    }

    pub fn config(&self, strategy: Strategy) -> WorkloadConfig {
        WorkloadConfig {
            questions: self.questions,
            total_votes: self.votes,
            arrival_rate: self.rps,
            strategy,
            retry: self.policy(),
            seed: self.seed,
            store: StoreConfig {
                commit_service_time: ms(self.service_ms),
                query_staleness_window: ms(self.staleness_ms),
                max_groups_per_tx: self.max_groups as usize,
                rng_seed: self.seed,
            },
            read_latency: ms(self.read_latency_ms),
        }
    }

    fn format(&self) -> Format {
        self.format.unwrap_or_else(|| match &self.out {
            Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => Format::Csv,
            _ => Format::Json,
        })
    }
}

fn strategy(arg: StrategyArg, shards: u32) -> Strategy {
    match arg {
        StrategyArg::Naive => Strategy::Naive,
        StrategyArg::Static => Strategy::Static(shards),
        StrategyArg::Dynamic => Strategy::Dynamic,
        StrategyArg::Group => Strategy::Group(shards),
    }
}

/// Usage problems found after flag parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Output goes to the given writers.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) if e.is::<UsageError>() => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn execute(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        Command::Bench(args) => bench(&args, stdout),
        Command::Sweep(args) => sweep_cmd(&args, stdout, stderr),
        Command::Demo => {
            let trace = demo::run_demo()?;
            stdout.write_all(trace.render().as_bytes())?;
            Ok(())
        }
        Command::Compact(args) => compact_cmd(&args, stdout),
    }
}

fn render(reports: &[WorkloadReport], format: Format) -> String {
    match format {
        Format::Csv => WorkloadReport::to_csv(reports),
        Format::Json if reports.len() == 1 => reports[0].to_json() + "\n",
        Format::Json => serde_json::to_string_pretty(reports).expect("reports serialize") + "\n",
    }
}

fn table(reports: &[WorkloadReport]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{x:.1}"));
    let mut out = format!(
        "{:<8} {:>4} {:<13} {:>7} {:>9} {:>7} {:>8} {:>9} {:>9} {:>9} {:>9}\n",
        "strategy", "n", "retry", "issued", "succeeded", "failed", "fail%", "mean_ms", "p50", "p95", "p99"
    );
    for r in reports {
        let n = r
            .strategy
            .shard_count()
            .map_or_else(|| "-".to_owned(), |n| n.to_string());
        out.push_str(&format!(
            "{:<8} {:>4} {:<13} {:>7} {:>9} {:>7} {:>8.2} {:>9} {:>9} {:>9} {:>9}\n",
            r.strategy.name(),
            n,
            r.retry_label(),
            r.issued,
            r.succeeded,
            r.failed,
            r.failure_rate * 100.0,
            opt(r.mean_tx_ms),
            opt(r.p50_tx_ms),
            opt(r.p95_tx_ms),
            opt(r.p99_tx_ms),
        ));
    }
    out
}

fn write_out(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn validated(config: &WorkloadConfig) -> anyhow::Result<()> {
    config.validate().map_err(|e| UsageError(e.to_string()).into())
}

fn bench(args: &BenchArgs, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let config = args.workload.config(strategy(args.strategy, args.shards));
    validated(&config)?;
    let report = run_workload(&config)?;
    let reports = [report];
    stdout.write_all(table(&reports).as_bytes())?;
    if let Some(path) = &args.workload.out {
        write_out(path, &render(&reports, args.workload.format()))?;
    }
    Ok(())
}

fn sweep_cmd(args: &SweepArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> anyhow::Result<()> {
    if matches!(args.strategy, StrategyArg::Naive | StrategyArg::Dynamic) {
        return Err(UsageError("sweep needs --strategy static or group".into()).into());
    }
    let mut counts = Vec::new();
    for &n in &args.shards_list {
        if counts.contains(&n) {
            writeln!(
                stderr,
                "warning: shard count {n} listed more than once; running it once"
            )?;
        } else {
            counts.push(n);
        }
    }
    let configs: Vec<WorkloadConfig> = counts
        .iter()
        .map(|&n| args.workload.config(strategy(args.strategy, n)))
        .collect();
    for c in &configs {
        validated(c)?;
    }
    let reports = sweep(&configs).into_iter().collect::<Result<Vec<_>, _>>()?;
    let csv = WorkloadReport::to_csv(&reports);
    stdout.write_all(csv.as_bytes())?;
    if let Some(path) = &args.workload.out {
        let format = args.workload.format.unwrap_or(match path.extension() {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        });
        write_out(path, &render(&reports, format))?;
    }
    Ok(())
}

/// Result of compacting one owner's shards in a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactSummary {
    pub shards_before: usize,
    pub value: shardmap::PropertyValue,
    pub snapshot: Value,
}

/// Compacts `owner`'s dynamic shards in `snapshot` and checks the fold
/// survived unchanged.
pub fn compact_snapshot(snapshot: &Value, owner: &Key, spec: &ShardSpec) -> anyhow::Result<CompactSummary> {
    if spec.mode() != ShardMode::Dynamic {
        bail!("compaction applies to dynamic shards; the spec is {:?}", spec.mode());
    }
    let mut store = DocStore::from_snapshot(StoreConfig::default(), snapshot)?;
    let before = load_shards(&store, owner, spec)?;
    let expected = fold_all(&before, spec)?;
    compact(&mut store, owner, spec)?;
    let quiet = store
        .config()
        .query_staleness_window
        .max(store.config().commit_service_time);
    store.advance_time(quiet);
    let after = load_shards(&store, owner, spec)?;
    let value = fold_all(&after, spec)?;
    if value != expected || after.len() != 1 {
        bail!(
            "fold mismatch after compaction: {} shard(s) folding to {value}, expected one shard folding to {expected}",
            after.len()
        );
    }
    Ok(CompactSummary {
        shards_before: before.len(),
        value,
        snapshot: store.dump(),
    })
}

fn compact_cmd(args: &CompactArgs, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let read = |p: &Path| -> anyhow::Result<Value> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    };
    let snapshot = read(&args.store)?;
    let spec_config: ShardSpecConfig = serde_json::from_value(read(&args.spec_file)?).context("shard spec")?;
    let spec = ShardSpec::from_config(&spec_config, &FoldRegistry::default())?;
    let owner = Key::new(args.owner_kind.as_str(), args.owner.as_str());
    let summary = compact_snapshot(&snapshot, &owner, &spec)?;
    let text = serde_json::to_string_pretty(&summary.snapshot)? + "\n";
    match &args.out {
        Some(path) => {
            write_out(path, &text)?;
            writeln!(
                stdout,
                "compacted {} shard(s) of {owner} into one: {} = {}",
                summary.shards_before,
                spec.property(),
                summary.value
            )?;
        }
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}
