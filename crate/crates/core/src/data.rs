//! Dataset records shared by the generator, providers, engine and file formats.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Canonical onboarding order of the six scripts.
pub const CANONICAL_SCRIPTS: [&str; 6] = ["CS", "WSC", "SAC", "SS", "BI", "OBC"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Meaning,
    Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
    ZeroShot,
}

/// A script-aware class: the same character in two scripts is two classes.
/// `script` is the script's position in the onboarding order, so sorting
/// keys follows the order in which classes arrive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassKey {
    pub script: usize,
    #[serde(rename = "char")]
    pub character: String,
}

impl ClassKey {
    pub fn new(script: usize, character: impl Into<String>) -> Self {
        Self {
            script,
            character: character.into(),
        }
    }
}

impl fmt::Display for ClassKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.script, self.character)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub script: Option<String>,
    #[serde(rename = "char")]
    pub character: Option<String>,
    pub kind: Modality,
    pub split: Split,
}

pub fn meaning_id(character: &str) -> String {
    format!("meaning:{character}")
}

pub fn shape_id(image_id: &str) -> String {
    format!("{image_id}:shape")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn images(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| r.kind == Modality::Image)
    }

    pub fn images_in(&self, script: &str, split: Split) -> Vec<&Record> {
        self.images()
            .filter(|r| r.split == split && r.script.as_deref() == Some(script))
            .collect()
    }

    pub fn scripts(&self) -> BTreeSet<String> {
        self.images().filter_map(|r| r.script.clone()).collect()
    }

    pub fn characters_in(&self, split: Split) -> BTreeSet<String> {
        self.images()
            .filter(|r| r.split == split)
            .filter_map(|r| r.character.clone())
            .collect()
    }

    /// Meaning-text records of the given split, keyed by character.
    pub fn meanings(&self, split: Split) -> BTreeMap<String, &Record> {
        self.records
            .iter()
            .filter(|r| r.kind == Modality::Meaning && r.split == split)
            .filter_map(|r| r.character.clone().map(|c| (c, r)))
            .collect()
    }

    pub fn has_id(&self, id: &str) -> bool {
        self.records.iter().any(|r| r.id == id)
    }
}

/// Maps script names to onboarding positions.
pub fn script_order_index(order: &[String]) -> BTreeMap<String, usize> {
    order.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
}

/// Canonical scripts first in canonical order, any others after, sorted.
pub fn default_script_order<'a>(names: impl IntoIterator<Item = &'a String>) -> Vec<String> {
    let set: BTreeSet<&String> = names.into_iter().collect();
    let mut out: Vec<String> = CANONICAL_SCRIPTS
        .iter()
        .filter(|c| set.iter().any(|s| s.as_str() == **c))
        .map(|s| s.to_string())
        .collect();
    out.extend(
        set.into_iter()
            .filter(|s| !CANONICAL_SCRIPTS.contains(&s.as_str()))
            .cloned(),
    );
    out
}
