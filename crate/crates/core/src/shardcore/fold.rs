// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;

use super::ShardError;
use crate::value::PropertyValue;

/// Value domain a fold operates over; drives probe generation for the law
/// checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldDomain {
    Int,
    Float,
}

type FoldOp = dyn Fn(&PropertyValue, &PropertyValue) -> Result<PropertyValue, ShardError> + Send + Sync;

/// A named binary aggregation over shard values. Must be commutative and
/// associative over its domain.
#[derive(Clone)]
pub struct FoldFn {
    name: Arc<str>,
    domain: FoldDomain,
    op: Arc<FoldOp>,
}

impl FoldFn {
    pub fn new<F>(name: &str, domain: FoldDomain, op: F) -> Self
    where
        F: Fn(&PropertyValue, &PropertyValue) -> Result<PropertyValue, ShardError> + Send + Sync + 'static,
    {
        FoldFn {
            name: name.into(),
            domain,
            op: Arc::new(op),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> FoldDomain {
        self.domain
    }

    pub fn apply(&self, a: &PropertyValue, b: &PropertyValue) -> Result<PropertyValue, ShardError> {
        (self.op)(a, b)
    }

    pub fn accepts(&self, v: &PropertyValue) -> bool {
        matches!(
            (self.domain, v),
            (FoldDomain::Int, PropertyValue::Int(_)) | (FoldDomain::Float, PropertyValue::Float(_))
        )
    }

    pub fn sum_int() -> Self {
        FoldFn::new("sum-int", FoldDomain::Int, |a, b| {
            let (x, y) = ints("sum-int", a, b)?;
            x.checked_add(y)
                .map(PropertyValue::Int)
                .ok_or(ShardError::Overflow { fold: "sum-int".into() })
        })
    }

    pub fn sum_float() -> Self {
        FoldFn::new("sum-float", FoldDomain::Float, |a, b| match (a, b) {
            (PropertyValue::Float(x), PropertyValue::Float(y)) => Ok(PropertyValue::Float(x + y)),
            _ => Err(type_error("sum-float", a, b)),
        })
    }

    pub fn max_int() -> Self {
        FoldFn::new("max-int", FoldDomain::Int, |a, b| {
            let (x, y) = ints("max-int", a, b)?;
            Ok(PropertyValue::Int(x.max(y)))
        })
    }

    pub fn min_int() -> Self {
        FoldFn::new("min-int", FoldDomain::Int, |a, b| {
            let (x, y) = ints("min-int", a, b)?;
            Ok(PropertyValue::Int(x.min(y)))
        })
    }
}

fn ints(fold: &str, a: &PropertyValue, b: &PropertyValue) -> Result<(i64, i64), ShardError> {
    match (a, b) {
        (PropertyValue::Int(x), PropertyValue::Int(y)) => Ok((*x, *y)),
        _ => Err(type_error(fold, a, b)),
    }
}

fn type_error(fold: &str, a: &PropertyValue, b: &PropertyValue) -> ShardError {
    let bad = if matches!(a, PropertyValue::Int(_) | PropertyValue::Float(_)) {
        b
    } else {
        a
    };
    ShardError::FoldType {
        fold: fold.to_owned(),
        found: bad.type_name(),
    }
}

impl fmt::Debug for FoldFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FoldFn")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .finish()
    }
}

impl PartialEq for FoldFn {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.domain == other.domain
    }
}

/// Folds addressable by name from configuration files.
#[derive(Debug, Clone)]
pub struct FoldRegistry {
    folds: BTreeMap<String, FoldFn>,
}

impl Default for FoldRegistry {
    fn default() -> Self {
        let mut folds = BTreeMap::new();
        for f in [
            FoldFn::sum_int(),
            FoldFn::sum_float(),
            FoldFn::max_int(),
            FoldFn::min_int(),
        ] {
            folds.insert(f.name().to_owned(), f);
        }
        FoldRegistry { folds }
    }
}

impl FoldRegistry {
    pub fn register(&mut self, fold: FoldFn) -> Result<(), ShardError> {
        if self.folds.contains_key(fold.name()) {
            return Err(ShardError::DuplicateFold(fold.name().to_owned()));
        }
        self.folds.insert(fold.name().to_owned(), fold);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&FoldFn, ShardError> {
        self.folds
            .get(name)
            .ok_or_else(|| ShardError::UnknownFold(name.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &FoldFn> {
        self.folds.values()
    }
}

/// Which algebraic law a probe broke.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldLawViolation {
    pub fold: String,
    pub law: &'static str,
    pub operands: Vec<PropertyValue>,
}

impl fmt::Display for FoldLawViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ops: Vec<String> = self.operands.iter().map(ToString::to_string).collect();
        write!(f, "`{}` is not {} on ({})", self.fold, self.law, ops.join(", "))
    }
}

/// Draws a probe value from the fold's domain. Floats are multiples of 1/8
/// below 2^40 so that sums stay exact.
pub fn probe_value<R: Rng + ?Sized>(domain: FoldDomain, rng: &mut R) -> PropertyValue {
    const BOUND: i64 = 1 << 40;
    match domain {
        FoldDomain::Int => PropertyValue::Int(rng.random_range(-BOUND..=BOUND)),
        FoldDomain::Float => PropertyValue::Float(rng.random_range(-BOUND..=BOUND) as f64 / 8.0),
    }
}

/// Checks commutativity, associativity and two-sided identity of `fold`
/// against `neutral` on `probes` random triples.
pub fn check_fold_laws<R: Rng + ?Sized>(
    fold: &FoldFn,
    neutral: &PropertyValue,
    probes: usize,
    rng: &mut R,
) -> Result<(), ShardError> {
    if !fold.accepts(neutral) {
        return Err(ShardError::FoldType {
            fold: fold.name().to_owned(),
            found: neutral.type_name(),
        });
    }
    let violation = |law, operands: Vec<PropertyValue>| {
        ShardError::FoldLaw(FoldLawViolation {
            fold: fold.name().to_owned(),
            law,
            operands,
        })
    };
    for _ in 0..probes {
        let a = probe_value(fold.domain(), rng);
        let b = probe_value(fold.domain(), rng);
        let c = probe_value(fold.domain(), rng);
        if fold.apply(neutral, &a)? != a || fold.apply(&a, neutral)? != a {
            return Err(violation(
                "an identity for the neutral element",
                vec![neutral.clone(), a],
            ));
        }
        if fold.apply(&a, &b)? != fold.apply(&b, &a)? {
            return Err(violation("commutative", vec![a, b]));
        }
        let left = fold.apply(&fold.apply(&a, &b)?, &c)?;
        let right = fold.apply(&a, &fold.apply(&b, &c)?)?;
        if left != right {
            return Err(violation("associative", vec![a, b, c]));
        }
    }
    Ok(())
}
