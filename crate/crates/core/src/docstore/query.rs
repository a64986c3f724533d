// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

use std::cmp::Ordering;
use std::fmt;

use super::entity::Entity;
use crate::value::PropertyValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Eq,
    Lt,
    Gt,
    Le,
    Ge,
}

impl Comparator {
    fn accepts(self, ord: Ordering) -> bool {
        match self {
            Comparator::Eq => ord == Ordering::Equal,
            Comparator::Lt => ord == Ordering::Less,
            Comparator::Gt => ord == Ordering::Greater,
            Comparator::Le => ord != Ordering::Greater,
            Comparator::Ge => ord != Ordering::Less,
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparator::Eq => "=",
            Comparator::Lt => "<",
            Comparator::Gt => ">",
            Comparator::Le => "<=",
            Comparator::Ge => ">=",
        })
    }
}

/// A single property filter, e.g. `votes > 50`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub property: String,
    pub op: Comparator,
    pub value: PropertyValue,
}

impl Filter {
    pub fn new(property: impl Into<String>, op: Comparator, value: impl Into<PropertyValue>) -> Self {
        Filter {
            property: property.into(),
            op,
            value: value.into(),
        }
    }

    pub fn eq(property: impl Into<String>, value: impl Into<PropertyValue>) -> Self {
        Self::new(property, Comparator::Eq, value)
    }

    /// Only top-level properties compared against atomic values are supported.
    pub(crate) fn is_supported(&self) -> bool {
        !self.property.is_empty() && !self.property.contains('.') && self.value.is_atomic()
    }

    pub(crate) fn matches(&self, entity: &Entity) -> bool {
        match entity.get(&self.property) {
            Some(v) if v.is_atomic() => v.compare(&self.value).is_some_and(|o| self.op.accepts(o)),
            _ => false,
        }
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.property, self.op, self.value)
    }
}
