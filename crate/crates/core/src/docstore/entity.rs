// Copyright (c) The shardmap Contributors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::{Map, Value};

use crate::value::{PropertyValue, ValueError};

/// Field names the JSON document format reserves for key and version data.
pub const RESERVED_FIELDS: [&str; 6] = ["kind", "id", "parent-id", "parent-kind", "ancestors", "version"];

/// Identifies an entity: its kind, an id unique within the kind, and an
/// optional parent that places it in an entity group.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key {
    kind: String,
    id: String,
    parent: Option<Arc<Key>>,
}

impl Key {
    pub fn new(kind: impl Into<String>, id: impl Into<String>) -> Self {
        Key {
            kind: kind.into(),
            id: id.into(),
            parent: None,
        }
    }

    pub fn with_parent(kind: impl Into<String>, id: impl Into<String>, parent: Key) -> Self {
        Key {
            kind: kind.into(),
            id: id.into(),
            parent: Some(Arc::new(parent)),
        }
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn parent(&self) -> Option<&Key> {
        self.parent.as_deref()
    }

    /// The root of the parent chain, which names the entity group.
    pub fn group_root(&self) -> &Key {
        let mut key = self;
        while let Some(parent) = key.parent() {
            key = parent;
        }
        key
    }

    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }

    pub(crate) fn is_well_formed(&self) -> bool {
        !self.kind.is_empty() && !self.id.is_empty() && self.parent().is_none_or(Key::is_well_formed)
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(parent) = self.parent() {
            write!(f, "{parent}/")?;
        }
        write!(f, "{}:{}", self.kind, self.id)
    }
}

/// A persisted document.
#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub key: Key,
    pub properties: BTreeMap<String, PropertyValue>,
    /// Zero for an entity that has never been committed.
    pub version: u64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EntityFormatError {
    #[error("entity document must be a JSON object")]
    NotAnObject,
    #[error("missing or malformed field `{0}`")]
    Field(&'static str),
    #[error("property `{0}` uses a reserved field name")]
    Reserved(String),
    #[error("property `{name}`: {source}")]
    Value { name: String, source: ValueError },
}

impl Entity {
    pub fn new(key: Key) -> Self {
        Entity {
            key,
            properties: BTreeMap::new(),
            version: 0,
        }
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<PropertyValue>) -> Self {
        self.properties.insert(name.into(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&PropertyValue> {
        self.properties.get(name)
    }

    /// Renders the document the way listings show it: `kind`, `id`, parent
    /// reference, then properties. Digit-only canonical ids are emitted as
    /// JSON numbers.
    pub fn to_json(&self, with_version: bool) -> Value {
        let mut obj = Map::new();
        obj.insert("kind".into(), Value::String(self.key.kind.clone()));
        obj.insert("id".into(), id_to_json(&self.key.id));
        if let Some(parent) = self.key.parent() {
            obj.insert("parent-id".into(), id_to_json(parent.id()));
            obj.insert("parent-kind".into(), Value::String(parent.kind().to_owned()));
            let ancestors: Vec<Value> = std::iter::successors(parent.parent(), |k| k.parent())
                .map(|k| {
                    let mut a = Map::new();
                    a.insert("kind".into(), Value::String(k.kind().to_owned()));
                    a.insert("id".into(), id_to_json(k.id()));
                    Value::Object(a)
                })
                .collect();
            if !ancestors.is_empty() {
                obj.insert("ancestors".into(), Value::Array(ancestors));
            }
        }
        for (name, value) in &self.properties {
            obj.insert(name.clone(), value.to_json());
        }
        if with_version {
            obj.insert("version".into(), Value::Number(self.version.into()));
        }
        Value::Object(obj)
    }

    pub fn from_json(value: &Value) -> Result<Self, EntityFormatError> {
        let obj = value.as_object().ok_or(EntityFormatError::NotAnObject)?;
        let kind = obj
            .get("kind")
            .and_then(Value::as_str)
            .ok_or(EntityFormatError::Field("kind"))?;
        let id = obj
            .get("id")
            .and_then(id_from_json)
            .ok_or(EntityFormatError::Field("id"))?;

        let parent = match obj.get("parent-id") {
            None => None,
            Some(pid) => {
                let pid = id_from_json(pid).ok_or(EntityFormatError::Field("parent-id"))?;
                let pkind = obj
                    .get("parent-kind")
                    .and_then(Value::as_str)
                    .ok_or(EntityFormatError::Field("parent-kind"))?;
                let mut chain = Vec::new();
                if let Some(ancestors) = obj.get("ancestors") {
                    let list = ancestors.as_array().ok_or(EntityFormatError::Field("ancestors"))?;
                    for a in list {
                        let k = a.get("kind").and_then(Value::as_str);
                        let i = a.get("id").and_then(id_from_json);
                        match (k, i) {
                            (Some(k), Some(i)) => chain.push((k.to_owned(), i)),
                            _ => return Err(EntityFormatError::Field("ancestors")),
                        }
                    }
                }
                // ancestors are listed nearest first, so build from the root down
                let mut above: Option<Key> = None;
                for (k, i) in chain.into_iter().rev() {
                    above = Some(match above {
                        None => Key::new(k, i),
                        Some(p) => Key::with_parent(k, i, p),
                    });
                }
                Some(match above {
                    None => Key::new(pkind, pid),
                    Some(p) => Key::with_parent(pkind, pid, p),
                })
            }
        };
        let key = match parent {
            None => Key::new(kind, id),
            Some(p) => Key::with_parent(kind, id, p),
        };

        let version = match obj.get("version") {
            None => 0,
            Some(v) => v.as_u64().ok_or(EntityFormatError::Field("version"))?,
        };

        let mut properties = BTreeMap::new();
        for (name, v) in obj {
            if RESERVED_FIELDS.contains(&name.as_str()) {
                continue;
            }
            let pv = PropertyValue::from_json(v).map_err(|source| EntityFormatError::Value {
                name: name.clone(),
                source,
            })?;
            properties.insert(name.clone(), pv);
        }
        Ok(Entity {
            key,
            properties,
            version,
        })
    }
}

fn id_to_json(id: &str) -> Value {
    let canonical = !id.is_empty() && (id == "0" || !id.starts_with('0')) && id.bytes().all(|b| b.is_ascii_digit());
    match id.parse::<u64>() {
        Ok(n) if canonical => Value::Number(n.into()),
        _ => Value::String(id.to_owned()),
    }
}

fn id_from_json(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) if n.is_u64() => Some(n.to_string()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_root_follows_parent_chain() {
        let q = Key::new("Question", "42");
        let r = Key::with_parent("Response", "47", q.clone());
        let c = Key::with_parent("Comment", "1", r.clone());
        assert_eq!(c.group_root(), &q);
        assert_eq!(q.group_root(), &q);
        assert_eq!(c.to_string(), "Question:42/Response:47/Comment:1");
    }

    #[test]
    fn parses_listing_with_numeric_ids() {
        let doc: Value = serde_json::from_str(
            r#"{"kind" : "Response", "id" : 47, "parent-id" : 42, "parent-kind": "Question",
                "response" : "Crucial for our future", "author" : "Stan S"}"#,
        )
        .unwrap();
        let e = Entity::from_json(&doc).unwrap();
        assert_eq!(e.key.id(), "47");
        assert_eq!(e.key.group_root(), &Key::new("Question", "42"));
        assert_eq!(e.get("author"), Some(&PropertyValue::from("Stan S")));
        assert_eq!(Entity::from_json(&e.to_json(false)).unwrap(), e);
    }

    #[test]
    fn shard_ids_stay_strings() {
        let e = Entity::new(Key::new("Shard", "42-1"))
            .with("question", "42")
            .with("shard_votes", 76);
        assert_eq!(
            e.to_json(false).to_string(),
            r#"{"kind":"Shard","id":"42-1","question":"42","shard_votes":76}"#
        );
        let leading_zero = Entity::new(Key::new("Shard", "007"));
        assert_eq!(leading_zero.to_json(false)["id"], Value::String("007".into()));
    }

    #[test]
    fn deep_parent_chains_round_trip() {
        let root = Key::new("A", "1");
        let mid = Key::with_parent("B", "x", root);
        let leaf = Key::with_parent("C", "2", Key::with_parent("D", "y", mid));
        let e = Entity {
            key: leaf,
            properties: BTreeMap::new(),
            version: 3,
        };
        assert_eq!(Entity::from_json(&e.to_json(true)).unwrap(), e);
    }

    #[test]
    fn missing_parent_kind_is_an_error() {
        let doc: Value = serde_json::from_str(r#"{"kind":"Response","id":1,"parent-id":42}"#).unwrap();
        assert_eq!(Entity::from_json(&doc), Err(EntityFormatError::Field("parent-kind")));
    }
}
