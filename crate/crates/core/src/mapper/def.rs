// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MapperError;
use crate::shardcore::{probe_value, FoldDomain, FoldRegistry, ShardError, ShardSpec, ShardSpecConfig};
use crate::value::PropertyValue;

/// Update operations available as shard methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodOp {
    /// `x + 1`
    Increment,
    /// `x - 1`
    Decrement,
    /// `x + k`, with `k` passed at call time.
    Add,
}

impl MethodOp {
    pub fn arity(self) -> usize {
        match self {
            MethodOp::Increment | MethodOp::Decrement => 0,
            MethodOp::Add => 1,
        }
    }

    pub fn apply(self, value: &PropertyValue, args: &[PropertyValue]) -> Result<PropertyValue, MapperError> {
        let bad = |reason: String| MapperError::BadArguments { op: self, reason };
        if args.len() != self.arity() {
            return Err(bad(format!(
                "expected {} argument(s), got {}",
                self.arity(),
                args.len()
            )));
        }
        let overflow = || bad("integer overflow".into());
        match (self, value) {
            (MethodOp::Increment, PropertyValue::Int(x)) => {
                x.checked_add(1).map(PropertyValue::Int).ok_or_else(overflow)
            }
            (MethodOp::Decrement, PropertyValue::Int(x)) => {
                x.checked_sub(1).map(PropertyValue::Int).ok_or_else(overflow)
            }
            (MethodOp::Increment, PropertyValue::Float(x)) => Ok(PropertyValue::Float(x + 1.0)),
            (MethodOp::Decrement, PropertyValue::Float(x)) => Ok(PropertyValue::Float(x - 1.0)),
            (MethodOp::Add, PropertyValue::Int(x)) => match &args[0] {
                PropertyValue::Int(k) => x.checked_add(*k).map(PropertyValue::Int).ok_or_else(overflow),
                other => Err(bad(format!("cannot add a {} to an integer", other.type_name()))),
            },
            (MethodOp::Add, PropertyValue::Float(x)) => match &args[0] {
                PropertyValue::Float(k) => Ok(PropertyValue::Float(x + k)),
                other => Err(bad(format!("cannot add a {} to a float", other.type_name()))),
            },
            (_, other) => Err(bad(format!("cannot update a {}", other.type_name()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardMethodDef {
    pub name: String,
    pub property: String,
    pub op: MethodOp,
}

/// How one entity kind maps onto stored entities.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingDef {
    pub kind: String,
    /// Property whose value becomes the entity key's id on create.
    pub id_property: String,
    pub plain_properties: Vec<String>,
    pub shard_specs: Vec<ShardSpec>,
    pub shard_methods: Vec<ShardMethodDef>,
}

/// JSON form of a [`MappingDef`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingDefConfig {
    pub kind: String,
    #[serde(default = "default_id_property")]
    pub id_property: String,
    #[serde(default)]
    pub plain_properties: Vec<String>,
    #[serde(default)]
    pub shard_specs: Vec<ShardSpecConfig>,
    #[serde(default)]
    pub shard_methods: Vec<ShardMethodDef>,
}

fn default_id_property() -> String {
    "id".to_owned()
}

impl MappingDef {
    pub fn new(kind: impl Into<String>) -> Self {
        MappingDef {
            kind: kind.into(),
            id_property: default_id_property(),
            plain_properties: Vec::new(),
            shard_specs: Vec::new(),
            shard_methods: Vec::new(),
        }
    }

    pub fn plain(mut self, names: &[&str]) -> Self {
        self.plain_properties.extend(names.iter().map(|s| (*s).to_owned()));
        self
    }

    pub fn shard(mut self, spec: ShardSpec) -> Self {
        self.shard_specs.push(spec);
        self
    }

    pub fn method(mut self, name: &str, property: &str, op: MethodOp) -> Self {
        self.shard_methods.push(ShardMethodDef {
            name: name.to_owned(),
            property: property.to_owned(),
            op,
        });
        self
    }

    pub fn from_config(config: &MappingDefConfig, registry: &FoldRegistry) -> Result<Self, MapperError> {
        let shard_specs = config
            .shard_specs
            .iter()
            .map(|c| ShardSpec::from_config(c, registry))
            .collect::<Result<_, _>>()?;
        Ok(MappingDef {
            kind: config.kind.clone(),
            id_property: config.id_property.clone(),
            plain_properties: config.plain_properties.clone(),
            shard_specs,
            shard_methods: config.shard_methods.clone(),
        })
    }

    pub fn to_config(&self) -> MappingDefConfig {
        MappingDefConfig {
            kind: self.kind.clone(),
            id_property: self.id_property.clone(),
            plain_properties: self.plain_properties.clone(),
            shard_specs: self.shard_specs.iter().map(ShardSpec::to_config).collect(),
            shard_methods: self.shard_methods.clone(),
        }
    }

    pub fn spec(&self, property: &str) -> Option<&ShardSpec> {
        self.shard_specs.iter().find(|s| s.property() == property)
    }

    pub fn method_def(&self, name: &str) -> Option<&ShardMethodDef> {
        self.shard_methods.iter().find(|m| m.name == name)
    }

    /// Structural checks plus randomized fold-law and method probes.
    pub(crate) fn validate<R: Rng + ?Sized>(&self, probes: usize, rng: &mut R) -> Result<(), MapperError> {
        let invalid = |msg: String| Err(MapperError::InvalidDefinition(msg));
        if self.kind.is_empty() || self.id_property.is_empty() {
            return invalid("kind and id_property must be non-empty".into());
        }
        let mut seen = BTreeSet::new();
        let names = self
            .plain_properties
            .iter()
            .map(String::as_str)
            .chain(self.shard_specs.iter().map(ShardSpec::property));
        for name in names {
            if !seen.insert(name) || name == self.id_property {
                return invalid(format!("property `{name}` is mapped more than once"));
            }
        }
        let mut method_names = BTreeSet::new();
        for m in &self.shard_methods {
            if !method_names.insert(m.name.as_str()) {
                return invalid(format!("shard method `{}` is declared twice", m.name));
            }
            let Some(spec) = self.spec(&m.property) else {
                return invalid(format!(
                    "shard method `{}` targets unsharded property `{}`",
                    m.name, m.property
                ));
            };
            check_method(spec, m, probes, rng)?;
        }
        for spec in &self.shard_specs {
            crate::shardcore::check_fold_laws(spec.fold(), spec.neutral(), probes, rng)?;
        }
        Ok(())
    }
}

/// A shard method is sound when applying it to a shard and folding equals
/// folding and then applying it: `m(fold(x, y)) == fold(m(x), y)`.
fn check_method<R: Rng + ?Sized>(
    spec: &ShardSpec,
    m: &ShardMethodDef,
    probes: usize,
    rng: &mut R,
) -> Result<(), MapperError> {
    let domain = spec.fold().domain();
    let small = |rng: &mut R| match domain {
        FoldDomain::Int => PropertyValue::Int(rng.random_range(-1000..=1000)),
        FoldDomain::Float => PropertyValue::Float(f64::from(rng.random_range(-1000..=1000)) / 8.0),
    };
    for _ in 0..probes.max(1) {
        let x = probe_value(domain, rng);
        let y = probe_value(domain, rng);
        let args: Vec<PropertyValue> = (0..m.op.arity()).map(|_| small(rng)).collect();
        let fold = |a: &PropertyValue, b: &PropertyValue| spec.fold().apply(a, b);
        let lhs = m.op.apply(&fold(&x, &y)?, &args)?;
        let rhs = fold(&m.op.apply(&x, &args)?, &y)?;
        if lhs != rhs {
            return Err(MapperError::Shard(ShardError::InvalidSpec(format!(
                "shard method `{}` ({:?}) does not distribute over fold `{}`",
                m.name,
                m.op,
                spec.fold().name()
            ))));
        }
    }
    Ok(())
}
