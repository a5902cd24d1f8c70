use std::ops::Range;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_HEADER: &str = "# vfmdet-schema v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeGroup {
    pub name: String,
    pub tags: Vec<String>,
}

/// Ordered attribute groups; the flat tag order is group order, then tag order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSchema {
    pub groups: Vec<AttributeGroup>,
}

impl Default for AttributeSchema {
    fn default() -> Self {
        Self::vehicle()
    }
}

impl AttributeSchema {
    /// The 47-tag vehicle schema (11 colors, 12 body models, 4 displacement
    /// bins, 5 top-speed bins, 5 door counts, 10 seat counts).
    pub fn vehicle() -> Self {
        let g = |name: &str, tags: &[&str]| AttributeGroup {
            name: name.to_string(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
        };
        AttributeSchema {
            groups: vec![
                g(
                    "Color",
                    &["Black", "White", "Red", "Blue", "Green", "Brown", "Cyan", "Yellow", "Gold", "Silvery", "Grey"],
                ),
                g(
                    "Model",
                    &[
                        "MPV",
                        "SUV",
                        "Sedan",
                        "Hatchback",
                        "Minibus",
                        "Fastback",
                        "Estate",
                        "Pickup",
                        "Hardtop Convertible",
                        "Sports",
                        "Crossover",
                        "Convertible",
                    ],
                ),
                g("Displacement", &["Unknown", "Small", "Medium", "Large"]),
                g(
                    "Top speed",
                    &[
                        "Unknown",
                        "Less than 150",
                        "Greater than 150 and less than 200",
                        "Greater than 200 and less than 250",
                        "Greater than 250",
                    ],
                ),
                g("Number of doors", &["Unknown", "Two", "Three", "Four", "Five"]),
                g(
                    "Number of seats",
                    &["Unknown", "Two", "Three", "Four", "Five", "Six", "Seven", "Eight", "Nine", "Fifteen"],
                ),
            ],
        }
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_tags(&self) -> usize {
        self.groups.iter().map(|g| g.tags.len()).sum()
    }

    /// Flat index ranges of each group.
    pub fn group_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.groups
            .iter()
            .map(|g| {
                let r = start..start + g.tags.len();
                start = r.end;
                r
            })
            .collect()
    }

    /// Flat tag identifiers `"Group: Tag"`, unique across groups.
    pub fn flat_tags(&self) -> Vec<String> {
        self.groups
            .iter()
            .flat_map(|g| g.tags.iter().map(move |t| format!("{}: {}", g.name, t)))
            .collect()
    }

    pub fn group_of(&self, tag: usize) -> Option<usize> {
        self.group_ranges().iter().position(|r| r.contains(&tag))
    }

    /// Flat index of `tag` within group `group`.
    pub fn tag_index(&self, group: usize, tag: &str) -> Option<usize> {
        let r = self.group_ranges().get(group)?.clone();
        self.groups[group].tags.iter().position(|t| t == tag).map(|i| r.start + i)
    }

    pub fn tag_name(&self, flat: usize) -> Option<(&str, &str)> {
        let g = self.group_of(flat)?;
        let r = &self.group_ranges()[g];
        Some((&self.groups[g].name, &self.groups[g].tags[flat - r.start]))
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Schema("no attribute groups".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for g in &self.groups {
            if g.tags.is_empty() {
                return Err(Error::Schema(format!("group `{}` has no tags", g.name)));
            }
            if !seen.insert(g.name.as_str()) {
                return Err(Error::Schema(format!("duplicate group `{}`", g.name)));
            }
            let mut tags = std::collections::HashSet::new();
            for t in &g.tags {
                if t.is_empty() || t.contains(',') || !tags.insert(t.as_str()) {
                    return Err(Error::Schema(format!("bad or duplicate tag `{t}` in group `{}`", g.name)));
                }
            }
        }
        Ok(())
    }

    /// Checks that `labels` holds one in-group flat index per group.
    pub fn validate_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.num_groups() {
            return Err(Error::Schema(format!("expected {} labels, got {}", self.num_groups(), labels.len())));
        }
        for (g, (&l, r)) in labels.iter().zip(self.group_ranges()).enumerate() {
            if !r.contains(&l) {
                return Err(Error::Schema(format!("label {l} is outside group `{}`", self.groups[g].name)));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(SCHEMA_HEADER);
        s.push('\n');
        for g in &self.groups {
            s.push_str(&format!("{}: {}\n", g.name, g.tags.join(", ")));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(SCHEMA_HEADER) {
            return Err(Error::Schema(format!("missing `{SCHEMA_HEADER}` header")));
        }
        let mut groups = Vec::new();
        for line in lines.map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (name, tags) = line
                .split_once(':')
                .ok_or_else(|| Error::Schema(format!("expected `group: tag, ...`, got `{line}`")))?;
            groups.push(AttributeGroup {
                name: name.trim().to_string(),
                tags: tags.split(',').map(|t| t.trim().to_string()).collect(),
            });
        }
        let schema = AttributeSchema { groups };
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
