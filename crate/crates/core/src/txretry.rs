// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

//! Retry policies for transactions that fail with write contention.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::docstore::{DocStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetryMode {
    /// Exactly one attempt.
    None,
    /// Retry until the work succeeds; `None` means no attempt limit.
    UntilSuccess { max_attempts: Option<u32> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backoff {
    None,
    Fixed(Duration),
    Exponential { base: Duration, factor: f64, cap: Duration },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr", into = "PolicyRepr")]
pub struct RetryPolicy {
    pub mode: RetryMode,
    pub backoff: Backoff,
    /// Each delay is scaled by `1 + jitter * u` with `u` uniform in [-1, 1].
    pub jitter: f64,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum PolicyError {
    #[error("jitter must lie in [0, 1], got {0}")]
    Jitter(f64),
    #[error("max_attempts must be at least 1")]
    MaxAttempts,
    #[error("backoff durations must be finite and non-negative, factor at least 1")]
    Backoff,
    #[error("max_attempts only applies to until_success")]
    AttemptsWithoutRetry,
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            mode: RetryMode::None,
            backoff: Backoff::None,
            jitter: 0.0,
        }
    }

    /// Unbounded retries, fixed 50 ms backoff, jitter 0.5.
    pub fn until_success() -> Self {
        RetryPolicy {
            mode: RetryMode::UntilSuccess { max_attempts: None },
            backoff: Backoff::Fixed(Duration::from_millis(50)),
            jitter: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(PolicyError::Jitter(self.jitter));
        }
        if let RetryMode::UntilSuccess { max_attempts: Some(0) } = self.mode {
            return Err(PolicyError::MaxAttempts);
        }
        if let Backoff::Exponential { factor, .. } = self.backoff {
            if !factor.is_finite() || factor < 1.0 {
                return Err(PolicyError::Backoff);
            }
        }
        Ok(())
    }

    pub fn retries(&self) -> bool {
        matches!(self.mode, RetryMode::UntilSuccess { .. })
    }

    /// Attempt limit, `None` when unbounded.
    pub fn max_attempts(&self) -> Option<u32> {
        match self.mode {
            RetryMode::None => Some(1),
            RetryMode::UntilSuccess { max_attempts } => max_attempts,
        }
    }

    /// Delay before retry number `retry` (0 for the first retry), jitter
    /// included.
    pub fn backoff_delay<R: Rng + ?Sized>(&self, retry: u32, rng: &mut R) -> Duration {
        let base = match self.backoff {
            Backoff::None => return Duration::ZERO,
            Backoff::Fixed(d) => d.as_secs_f64(),
            Backoff::Exponential { base, factor, cap } => {
                let grown = base.as_secs_f64() * factor.powi(retry.min(i32::MAX as u32) as i32);
                grown.min(cap.as_secs_f64())
            }
        };
        let scale = if self.jitter > 0.0 {
            1.0 + self.jitter * rng.random_range(-1.0..=1.0)
        } else {
            1.0
        };
        Duration::from_secs_f64((base * scale).max(0.0))
    }

    /// After `failed` failed attempts: the wait before the next attempt, or
    /// `None` once the policy gives up.
    pub fn next_delay<R: Rng + ?Sized>(&self, failed: u32, rng: &mut R) -> Option<Duration> {
        match self.max_attempts() {
            Some(max) if failed >= max => None,
            _ => Some(self.backoff_delay(failed.saturating_sub(1), rng)),
        }
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self::until_success()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyRepr {
    mode: ModeRepr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_attempts: Option<u32>,
    #[serde(default)]
    backoff: BackoffRepr,
    #[serde(default)]
    jitter: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModeRepr {
    None,
    UntilSuccess,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
enum BackoffRepr {
    #[default]
    None,
    FixedMs(#[serde(serialize_with = "whole_ms")] f64),
    Exponential {
        #[serde(serialize_with = "whole_ms")]
        base_ms: f64,
        factor: f64,
        #[serde(serialize_with = "whole_ms")]
        cap_ms: f64,
    },
}

fn whole_ms<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.fract() == 0.0 && *v >= 0.0 && *v < 9.0e15 {
        s.serialize_u64(*v as u64)
    } else {
        s.serialize_f64(*v)
    }
}

fn ms(v: f64) -> Result<Duration, PolicyError> {
    Duration::try_from_secs_f64(v / 1000.0).map_err(|_| PolicyError::Backoff)
}

impl TryFrom<PolicyRepr> for RetryPolicy {
    type Error = PolicyError;

    fn try_from(r: PolicyRepr) -> Result<Self, PolicyError> {
        let mode = match r.mode {
            ModeRepr::None if r.max_attempts.is_some() => return Err(PolicyError::AttemptsWithoutRetry),
            ModeRepr::None => RetryMode::None,
            ModeRepr::UntilSuccess => RetryMode::UntilSuccess {
                max_attempts: r.max_attempts,
            },
        };
        let backoff = match r.backoff {
            BackoffRepr::None => Backoff::None,
            BackoffRepr::FixedMs(v) => Backoff::Fixed(ms(v)?),
            BackoffRepr::Exponential {
                base_ms,
                factor,
                cap_ms,
            } => Backoff::Exponential {
                base: ms(base_ms)?,
                factor,
                cap: ms(cap_ms)?,
            },
        };
        let policy = RetryPolicy {
            mode,
            backoff,
            jitter: r.jitter,
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl From<RetryPolicy> for PolicyRepr {
    fn from(p: RetryPolicy) -> Self {
        let to_ms = |d: Duration| d.as_secs_f64() * 1000.0;
        let (mode, max_attempts) = match p.mode {
            RetryMode::None => (ModeRepr::None, None),
            RetryMode::UntilSuccess { max_attempts } => (ModeRepr::UntilSuccess, max_attempts),
        };
        let backoff = match p.backoff {
            Backoff::None => BackoffRepr::None,
            Backoff::Fixed(d) => BackoffRepr::FixedMs(to_ms(d)),
            Backoff::Exponential { base, factor, cap } => BackoffRepr::Exponential {
                base_ms: to_ms(base),
                factor,
                cap_ms: to_ms(cap),
            },
        };
        PolicyRepr {
            mode,
            max_attempts,
            backoff,
            jitter: p.jitter,
        }
    }
}

/// Errors that can tell a retryable contention failure apart from the rest.
pub trait Retryable {
    fn is_contention(&self) -> bool;
}

impl Retryable for StoreError {
    fn is_contention(&self) -> bool {
        StoreError::is_contention(self)
    }
}

impl Retryable for crate::shardcore::ShardError {
    fn is_contention(&self) -> bool {
        crate::shardcore::ShardError::is_contention(self)
    }
}

/// A virtual clock that backoff waits are spent on.
pub trait VirtualClock {
    fn now(&self) -> Duration;
    fn sleep(&mut self, d: Duration);
}

impl VirtualClock for DocStore {
    fn now(&self) -> Duration {
        DocStore::now(self)
    }

    fn sleep(&mut self, d: Duration) {
        self.advance_time(d);
    }
}

/// Free-standing clock for work that does not involve a store.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ManualClock(pub Duration);

impl VirtualClock for ManualClock {
    fn now(&self) -> Duration {
        self.0
    }

    fn sleep(&mut self, d: Duration) {
        self.0 += d;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryOutcome<T> {
    pub value: Option<T>,
    pub success: bool,
    pub attempts: u32,
    /// Virtual time from the first attempt to the last one finishing,
    /// backoff waits included.
    pub total_time: Duration,
}

/// Runs `work` under `policy`. The closure advances the clock by its own
/// service time. Contention failures are retried as the policy allows and
/// reported through `success = false` once it gives up; any other error
/// returns immediately.
pub fn with_retry<C, R, T, E, F>(
    mut work: F,
    policy: &RetryPolicy,
    clock: &mut C,
    rng: &mut R,
) -> Result<RetryOutcome<T>, E>
where
    C: VirtualClock,
    R: Rng + ?Sized,
    E: Retryable,
    F: FnMut(&mut C) -> Result<T, E>,
{
    let start = clock.now();
    let mut attempts = 0u32;
    loop {
        attempts += 1;
        match work(clock) {
            Ok(value) => {
                return Ok(RetryOutcome {
                    value: Some(value),
                    success: true,
                    attempts,
                    total_time: clock.now() - start,
                })
            }
            Err(e) if !e.is_contention() => return Err(e),
            Err(_) => match policy.next_delay(attempts, rng) {
                Some(delay) => clock.sleep(delay),
                None => {
                    return Ok(RetryOutcome {
                        value: None,
                        success: false,
                        attempts,
                        total_time: clock.now() - start,
                    })
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::docstore::{Entity, Key, StoreConfig};

    #[derive(Debug, PartialEq)]
    enum Fail {
        Busy,
        Fatal,
    }

    impl Retryable for Fail {
        fn is_contention(&self) -> bool {
            *self == Fail::Busy
        }
    }

    const SERVICE: Duration = Duration::from_millis(150);

    /// A closure that fails `failures` times with contention, each attempt
    /// costing one service time.
    fn scripted(failures: u32) -> impl FnMut(&mut ManualClock) -> Result<u32, Fail> {
        let mut calls = 0;
        move |clock| {
            clock.sleep(SERVICE);
            calls += 1;
            if calls <= failures {
                Err(Fail::Busy)
            } else {
                Ok(calls)
            }
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn success_takes_one_attempt_under_any_policy() {
        for policy in [RetryPolicy::none(), RetryPolicy::until_success()] {
            let out = with_retry(scripted(0), &policy, &mut ManualClock::default(), &mut rng()).unwrap();
            assert!(out.success);
            assert_eq!(out.attempts, 1);
            assert_eq!(out.total_time, SERVICE);
        }
    }

    #[test]
    fn retries_until_success() {
        let out = with_retry(
            scripted(2),
            &RetryPolicy::until_success(),
            &mut ManualClock::default(),
            &mut rng(),
        )
        .unwrap();
        assert!(out.success);
        assert_eq!(out.attempts, 3);
        assert_eq!(out.value, Some(3));
        // three service times plus two jittered 50 ms waits in [25, 75] ms
        assert!(out.total_time >= 3 * SERVICE + Duration::from_millis(50));
        assert!(out.total_time <= 3 * SERVICE + Duration::from_millis(150));
    }

    #[test]
    fn no_retry_reports_single_failed_attempt() {
        let out = with_retry(
            scripted(1),
            &RetryPolicy::none(),
            &mut ManualClock::default(),
            &mut rng(),
        )
        .unwrap();
        assert!(!out.success);
        assert_eq!(out.attempts, 1);
        assert_eq!(out.value, None);
    }

    #[test]
    fn attempt_limit_is_honoured() {
        let policy = RetryPolicy {
            mode: RetryMode::UntilSuccess { max_attempts: Some(4) },
            ..RetryPolicy::until_success()
        };
        let out = with_retry(scripted(10), &policy, &mut ManualClock::default(), &mut rng()).unwrap();
        assert!(!out.success);
        assert_eq!(out.attempts, 4);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let mut calls = 0;
        let res: Result<RetryOutcome<()>, Fail> = with_retry(
            |_: &mut ManualClock| {
                calls += 1;
                Err(Fail::Fatal)
            },
            &RetryPolicy::until_success(),
            &mut ManualClock::default(),
            &mut rng(),
        );
        assert_eq!(res.unwrap_err(), Fail::Fatal);
        assert_eq!(calls, 1);
    }

    #[test]
    fn without_backoff_total_time_is_sum_of_attempts() {
        let policy = RetryPolicy {
            mode: RetryMode::UntilSuccess { max_attempts: None },
            backoff: Backoff::None,
            jitter: 0.0,
        };
        let mut prev = Duration::ZERO;
        for failures in 0..6 {
            let out = with_retry(scripted(failures), &policy, &mut ManualClock::default(), &mut rng()).unwrap();
            assert_eq!(out.total_time, SERVICE * out.attempts);
            assert!(out.total_time >= prev);
            prev = out.total_time;
        }
    }

    #[test]
    fn exponential_delays_grow_to_cap() {
        let policy = RetryPolicy {
            mode: RetryMode::UntilSuccess { max_attempts: None },
            backoff: Backoff::Exponential {
                base: Duration::from_millis(10),
                factor: 2.0,
                cap: Duration::from_millis(100),
            },
            jitter: 0.0,
        };
        let delays: Vec<u128> = (0..6)
            .map(|i| policy.backoff_delay(i, &mut rng()).as_millis())
            .collect();
        assert_eq!(delays, [10, 20, 40, 80, 100, 100]);
    }

    #[test]
    fn jitter_stays_in_band_and_is_seeded() {
        let policy = RetryPolicy::until_success();
        let mut a = rng();
        let mut b = rng();
        for i in 0..200 {
            let d = policy.backoff_delay(i, &mut a);
            assert!(d >= Duration::from_millis(25) && d <= Duration::from_millis(75));
            assert_eq!(d, policy.backoff_delay(i, &mut b));
        }
    }

    #[test]
    fn policy_json_format() {
        let p: RetryPolicy =
            serde_json::from_str(r#"{"mode":"until_success","backoff":{"fixed_ms":50},"jitter":0.5}"#).unwrap();
        assert_eq!(p, RetryPolicy::until_success());
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"mode":"until_success","backoff":{"fixed_ms":50},"jitter":0.5}"#
        );
        let none: RetryPolicy = serde_json::from_str(r#"{"mode":"none"}"#).unwrap();
        assert_eq!(none, RetryPolicy::none());
        assert!(serde_json::from_str::<RetryPolicy>(r#"{"mode":"none","jitter":2}"#).is_err());
        assert!(serde_json::from_str::<RetryPolicy>(r#"{"mode":"until_success","max_attempts":0}"#).is_err());
    }

    #[test]
    fn retries_store_contention_on_the_store_clock() {
        let mut store = DocStore::new(StoreConfig::default());
        let key = Key::new("Question", "42");
        store.put(Entity::new(key.clone()).with("votes", 0)).unwrap();
        let out = with_retry(
            |s: &mut DocStore| s.put(Entity::new(key.clone()).with("votes", 1)),
            &RetryPolicy::until_success(),
            &mut store,
            &mut rng(),
        )
        .unwrap();
        assert!(out.success);
        // the group stays busy for 150 ms; jittered 50 ms waits need 3 to 7 tries
        assert!(out.attempts >= 3, "{}", out.attempts);
        assert!(out.total_time >= Duration::from_millis(150));
        let busy = store
            .event_log()
            .iter()
            .filter(|r| r.outcome == crate::docstore::Outcome::Contention)
            .count();
        assert_eq!(busy as u32, out.attempts - 1);
    }
}
