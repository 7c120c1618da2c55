//! Label vocabulary: concept groups of mutually exclusive labels, one schema
//! per scenario. Aligned latent axes map one-to-one onto groups, in order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Dab,
    Pour,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Dab => "dab",
            Scenario::Pour => "pour",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = LabelError;
    fn from_str(s: &str) -> Result<Self, LabelError> {
        match s {
            "dab" => Ok(Scenario::Dab),
            "pour" => Ok(Scenario::Pour),
            other => Err(LabelError::UnknownScenario(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("unknown scenario '{0}' (expected dab|pour)")]
    UnknownScenario(String),
    #[error("unknown label '{0}'")]
    UnknownLabel(String),
    #[error("label group index {0} out of range")]
    GroupOutOfRange(usize),
    #[error("label index {label} out of range for group '{group}'")]
    LabelOutOfRange { group: String, label: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelGroup {
    pub name: String,
    pub labels: Vec<String>,
}

/// Ordered concept groups; group `j` aligns with latent axis `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub scenario: Scenario,
    pub groups: Vec<LabelGroup>,
}

/// One weak annotation: a single label from a single group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakLabel {
    pub group: usize,
    pub label: usize,
}

fn group(name: &str, labels: &[&str]) -> LabelGroup {
    LabelGroup {
        name: name.to_string(),
        labels: labels.iter().map(|s| s.to_string()).collect(),
    }
}

impl LabelSchema {
    pub fn for_scenario(scenario: Scenario) -> Self {
        let groups = match scenario {
            Scenario::Dab => vec![
                group("side", &["left", "right"]),
                group("depth", &["front", "behind"]),
                group("effort", &["soft", "hard"]),
                group("length", &["short", "long"]),
                group("speed", &["slow", "fast"]),
            ],
            Scenario::Pour => vec![
                group("cup", &["red", "blue"]),
                group("approach", &["behind", "sideways"]),
                group("tilt", &["fully", "partially"]),
            ],
        };
        Self { scenario, groups }
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_size(&self, j: usize) -> Result<usize, LabelError> {
        self.groups
            .get(j)
            .map(|g| g.labels.len())
            .ok_or(LabelError::GroupOutOfRange(j))
    }

    pub fn label_count(&self) -> usize {
        self.groups.iter().map(|g| g.labels.len()).sum()
    }

    pub fn validate(&self, label: WeakLabel) -> Result<(), LabelError> {
        let size = self.group_size(label.group)?;
        if label.label >= size {
            return Err(LabelError::LabelOutOfRange {
                group: self.groups[label.group].name.clone(),
                label: label.label,
            });
        }
        Ok(())
    }

    pub fn label_name(&self, label: WeakLabel) -> String {
        self.groups[label.group].labels[label.label].clone()
    }

    pub fn group_name(&self, j: usize) -> &str {
        &self.groups[j].name
    }

    /// All (group, label) pairs in schema order.
    pub fn all_labels(&self) -> Vec<WeakLabel> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(j, g)| (0..g.labels.len()).map(move |l| WeakLabel { group: j, label: l }))
            .collect()
    }

    /// Resolve `"group=value"` or a bare unique `"value"` to a [`WeakLabel`].
    pub fn resolve(&self, text: &str) -> Result<WeakLabel, LabelError> {
        if let Some((gname, lname)) = text.split_once('=') {
            for (j, g) in self.groups.iter().enumerate() {
                if g.name == gname {
                    if let Some(l) = g.labels.iter().position(|x| x == lname) {
                        return Ok(WeakLabel { group: j, label: l });
                    }
                }
            }
            return Err(LabelError::UnknownLabel(text.to_string()));
        }
        let mut hits = Vec::new();
        for (j, g) in self.groups.iter().enumerate() {
            for (l, name) in g.labels.iter().enumerate() {
                if name == text {
                    hits.push(WeakLabel { group: j, label: l });
                }
            }
        }
        match hits.as_slice() {
            [one] => Ok(*one),
            _ => Err(LabelError::UnknownLabel(text.to_string())),
        }
    }

    /// Stable content hash used to tie serialized artifacts to a schema.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |s: &str| {
            for b in s.bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x1000_0000_01b3);
        };
        eat(self.scenario.name());
        for g in &self.groups {
            eat(&g.name);
            for l in &g.labels {
                eat(l);
            }
        }
        h
    }
}

/// Group/label indices for the dab schema, used by generators and oracles.
pub mod dab {
    pub const SIDE: usize = 0;
    pub const DEPTH: usize = 1;
    pub const EFFORT: usize = 2;
    pub const LENGTH: usize = 3;
    pub const SPEED: usize = 4;

    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;
    pub const FRONT: usize = 0;
    pub const BEHIND: usize = 1;
    pub const SOFT: usize = 0;
    pub const HARD: usize = 1;
    pub const SHORT: usize = 0;
    pub const LONG: usize = 1;
    pub const SLOW: usize = 0;
    pub const FAST: usize = 1;
}

/// Group/label indices for the pour schema.
pub mod pour {
    pub const CUP: usize = 0;
    pub const APPROACH: usize = 1;
    pub const TILT: usize = 2;

    pub const RED: usize = 0;
    pub const BLUE: usize = 1;
    pub const BEHIND: usize = 0;
    pub const SIDEWAYS: usize = 1;
    pub const FULLY: usize = 0;
    pub const PARTIALLY: usize = 1;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dab_schema_has_five_binary_groups() {
        let s = LabelSchema::for_scenario(Scenario::Dab);
        assert_eq!(s.group_count(), 5);
        assert_eq!(s.label_count(), 10);
        assert!(s.groups.iter().all(|g| g.labels.len() == 2));
    }

    #[test]
    fn pour_schema_has_three_binary_groups() {
        let s = LabelSchema::for_scenario(Scenario::Pour);
        assert_eq!(s.group_count(), 3);
        assert_eq!(s.label_count(), 6);
    }

    #[test]
    fn resolution_handles_qualified_and_bare_names() {
        let s = LabelSchema::for_scenario(Scenario::Dab);
        assert_eq!(s.resolve("soft").unwrap(), WeakLabel { group: 2, label: 0 });
        assert_eq!(
            s.resolve("effort=hard").unwrap(),
            WeakLabel { group: 2, label: 1 }
        );
        assert!(s.resolve("nope").is_err());
        // "behind" is unique in dab but appears in pour's approach group too
        let p = LabelSchema::for_scenario(Scenario::Pour);
        assert_eq!(
            p.resolve("approach=behind").unwrap(),
            WeakLabel { group: 1, label: 0 }
        );
    }

    #[test]
    fn schema_hash_distinguishes_scenarios() {
        let a = LabelSchema::for_scenario(Scenario::Dab).content_hash();
        let b = LabelSchema::for_scenario(Scenario::Pour).content_hash();
        assert_ne!(a, b);
    }
}
