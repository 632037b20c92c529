//! Channel-group partitions: the explanatory units of an attribution.
//!
//! A group set is an ordered partition of the channel indices `0..C`. The
//! order fixes the group axis of attribution maps and the tie-break when
//! groups are ranked.

use std::collections::HashMap;

use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupError {
    #[error("channel {channel} appears in both {first} and {second}")]
    OverlappingGroups {
        channel: usize,
        first: String,
        second: String,
    },
    #[error("channels not covered by any group: {0:?}")]
    MissingChannels(Vec<usize>),
    #[error("channel index {0} out of range")]
    OutOfRangeChannel(usize),
    #[error("duplicate group name {0:?}")]
    DuplicateGroupName(String),
    #[error("group names must be nonempty")]
    EmptyGroupName,
    #[error("group {0:?} has no members")]
    EmptyGroup(String),
    #[error("a group set needs at least one group")]
    NoGroups,
    #[error("unknown band name {0:?}")]
    UnknownBand(String),
    #[error("schema error at {path}: {reason}")]
    SchemaError { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelGroup {
    pub name: String,
    /// Sorted, deduplicated channel indices.
    pub members: Vec<usize>,
}

impl ChannelGroup {
    pub fn new(name: impl Into<String>, members: impl IntoIterator<Item = usize>) -> Self {
        let mut members: Vec<usize> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        Self {
            name: name.into(),
            members,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelGroupSet {
    total_channels: usize,
    groups: Vec<ChannelGroup>,
    band_names: Option<Vec<String>>,
    owner: Vec<usize>,
}

/// Checks mutual exclusivity, completeness and naming of a candidate
/// partition of `0..total_channels`.
pub fn validate_partition(total_channels: usize, groups: &[ChannelGroup]) -> Result<(), GroupError> {
    partition_owner(total_channels, groups).map(|_| ())
}

fn partition_owner(total_channels: usize, groups: &[ChannelGroup]) -> Result<Vec<usize>, GroupError> {
    if groups.is_empty() {
        return Err(GroupError::NoGroups);
    }
    let mut seen_names: HashMap<&str, usize> = HashMap::new();
    for (i, g) in groups.iter().enumerate() {
        if g.name.is_empty() {
            return Err(GroupError::EmptyGroupName);
        }
        if seen_names.insert(g.name.as_str(), i).is_some() {
            return Err(GroupError::DuplicateGroupName(g.name.clone()));
        }
        if g.members.is_empty() {
            return Err(GroupError::EmptyGroup(g.name.clone()));
        }
    }

    let mut owner: Vec<Option<usize>> = vec![None; total_channels];
    for (gi, g) in groups.iter().enumerate() {
        for &c in &g.members {
            let slot = owner.get_mut(c).ok_or(GroupError::OutOfRangeChannel(c))?;
            if let Some(prev) = *slot {
                if prev != gi {
                    return Err(GroupError::OverlappingGroups {
                        channel: c,
                        first: groups[prev].name.clone(),
                        second: g.name.clone(),
                    });
                }
            }
            *slot = Some(gi);
        }
    }

    let missing: Vec<usize> = owner
        .iter()
        .enumerate()
        .filter_map(|(c, o)| o.is_none().then_some(c))
        .collect();
    if !missing.is_empty() {
        return Err(GroupError::MissingChannels(missing));
    }
    Ok(owner.into_iter().map(|o| o.unwrap()).collect())
}

impl ChannelGroupSet {
    pub fn new(total_channels: usize, groups: Vec<ChannelGroup>) -> Result<Self, GroupError> {
        let groups: Vec<ChannelGroup> = groups
            .into_iter()
            .map(|g| ChannelGroup::new(g.name, g.members))
            .collect();
        let owner = partition_owner(total_channels, &groups)?;
        Ok(Self {
            total_channels,
            groups,
            band_names: None,
            owner,
        })
    }

    pub fn with_band_names(mut self, names: Vec<String>) -> Result<Self, GroupError> {
        if names.len() != self.total_channels {
            return Err(GroupError::SchemaError {
                path: "$.band_names".into(),
                reason: format!("expected {} names, found {}", self.total_channels, names.len()),
            });
        }
        self.band_names = Some(names);
        Ok(self)
    }

    pub fn total_channels(&self) -> usize {
        self.total_channels
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[ChannelGroup] {
        &self.groups
    }

    pub fn names(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.name.as_str()).collect()
    }

    pub fn band_names(&self) -> Option<&[String]> {
        self.band_names.as_deref()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn group_of_channel(&self, channel: usize) -> Result<usize, GroupError> {
        self.owner
            .get(channel)
            .copied()
            .ok_or(GroupError::OutOfRangeChannel(channel))
    }

    /// Index form of the config, with band names kept if present.
    pub fn to_json(&self) -> Value {
        let mut doc = Map::new();
        doc.insert("total_channels".into(), json!(self.total_channels));
        if let Some(names) = &self.band_names {
            doc.insert("band_names".into(), json!(names));
        }
        let groups: Vec<Value> = self
            .groups
            .iter()
            .map(|g| json!({"name": g.name, "members": g.members}))
            .collect();
        doc.insert("groups".into(), Value::Array(groups));
        Value::Object(doc)
    }
}

pub(crate) fn schema_err(path: impl Into<String>, reason: impl Into<String>) -> GroupError {
    GroupError::SchemaError {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Parses `{"total_channels": int, "band_names": [str]?, "groups": [{"name": str, "members": [int|str]}]}`.
pub fn parse_groups_config(text: &str) -> Result<ChannelGroupSet, GroupError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| schema_err("$", e.to_string()))?;
    let obj = doc.as_object().ok_or_else(|| schema_err("$", "expected an object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "total_channels" | "band_names" | "groups") {
            return Err(schema_err(format!("$.{key}"), "unknown field"));
        }
    }

    let total = obj
        .get("total_channels")
        .ok_or_else(|| schema_err("$.total_channels", "missing"))?
        .as_u64()
        .filter(|&n| n >= 1 && n <= u32::MAX as u64)
        .ok_or_else(|| schema_err("$.total_channels", "expected a positive integer"))? as usize;

    let band_names: Option<Vec<String>> = match obj.get("band_names") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| schema_err(format!("$.band_names[{i}]"), "expected a string"))
                })
                .collect::<Result<_, _>>()?,
        ),
        Some(_) => return Err(schema_err("$.band_names", "expected an array")),
    };
    if let Some(names) = &band_names {
        if names.len() != total {
            return Err(schema_err(
                "$.band_names",
                format!("expected {total} names, found {}", names.len()),
            ));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(schema_err(format!("$.band_names[{i}]"), "duplicate band name"));
            }
        }
    }

    let items = obj
        .get("groups")
        .ok_or_else(|| schema_err("$.groups", "missing"))?
        .as_array()
        .ok_or_else(|| schema_err("$.groups", "expected an array"))?;

    let mut groups = Vec::with_capacity(items.len());
    for (gi, item) in items.iter().enumerate() {
        let path = format!("$.groups[{gi}]");
        let g = item
            .as_object()
            .ok_or_else(|| schema_err(&path, "expected an object"))?;
        for key in g.keys() {
            if !matches!(key.as_str(), "name" | "members") {
                return Err(schema_err(format!("{path}.{key}"), "unknown field"));
            }
        }
        let name = g
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| schema_err(format!("{path}.name"), "expected a string"))?;
        let members = g
            .get("members")
            .and_then(Value::as_array)
            .ok_or_else(|| schema_err(format!("{path}.members"), "expected an array"))?;
        let mut resolved = Vec::with_capacity(members.len());
        for (mi, m) in members.iter().enumerate() {
            let c = match m {
                Value::Number(n) => n
                    .as_u64()
                    .ok_or_else(|| schema_err(format!("{path}.members[{mi}]"), "expected a non-negative integer"))?
                    .try_into()
                    .unwrap_or(usize::MAX),
                Value::String(s) => band_names
                    .as_ref()
                    .and_then(|names| names.iter().position(|n| n == s))
                    .ok_or_else(|| GroupError::UnknownBand(s.clone()))?,
                _ => {
                    return Err(schema_err(
                        format!("{path}.members[{mi}]"),
                        "expected an integer or band name",
                    ))
                }
            };
            if c >= total {
                return Err(GroupError::OutOfRangeChannel(c));
            }
            resolved.push(c);
        }
        groups.push(ChannelGroup::new(name, resolved));
    }

    let set = ChannelGroupSet::new(total, groups)?;
    match band_names {
        Some(names) => set.with_band_names(names),
        None => Ok(set),
    }
}
