//! Dataset manifests, base/novel splitting, few-shot sampling and the synthetic
//! benchmark generator.
//!
//! A manifest is one JSON document:
//!
//! ```json
//! {
//!   "version": 1,
//!   "classes": [{"id": 0, "name": "Archery", "tier": "base", "parent": 3, "grandparent": 1}],
//!   "videos": [{"id": "v0", "class": 0, "split": "train", "duration_s": 12.0,
//!               "activity": [2.0, 9.5], "feature_file": "features/v0.vsf"}]
//! }
//! ```
//!
//! `class` may be the string `"__distractor__"` for gallery-only distractor clips.

mod split;
mod synth;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use split::{sample_novel_train, split_classes};
pub use synth::{generate_synthetic, synthesize, SynthConfig, SyntheticDataset};

pub const MANIFEST_VERSION: u32 = 1;
pub const DISTRACTOR_TAG: &str = "__distractor__";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Base,
    Novel,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Base => "base",
            Tier::Novel => "novel",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Class label of a video, or the distractor sentinel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassRef {
    Class(usize),
    Distractor,
}

impl ClassRef {
    pub fn class(self) -> Option<usize> {
        match self {
            ClassRef::Class(c) => Some(c),
            ClassRef::Distractor => None,
        }
    }

    pub fn is_distractor(self) -> bool {
        self == ClassRef::Distractor
    }
}

impl Serialize for ClassRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ClassRef::Class(c) => s.serialize_u64(*c as u64),
            ClassRef::Distractor => s.serialize_str(DISTRACTOR_TAG),
        }
    }
}

impl<'de> Deserialize<'de> for ClassRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(usize),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(c) => Ok(ClassRef::Class(c)),
            Raw::Tag(t) if t == DISTRACTOR_TAG => Ok(ClassRef::Distractor),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!(
                "class must be an integer id or \"{DISTRACTOR_TAG}\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassInfo {
    pub id: usize,
    pub name: String,
    pub tier: Tier,
    /// Level-2 taxonomy node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
    /// Level-1 taxonomy node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grandparent: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub id: String,
    pub class: ClassRef,
    pub split: Split,
    pub duration_s: f64,
    /// `[start_s, end_s]` of the activity inside the video.
    pub activity: [f64; 2],
    pub feature_file: String,
}

impl VideoRecord {
    pub fn activity_len(&self) -> f64 {
        self.activity[1] - self.activity[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub classes: Vec<ClassInfo>,
    #[serde(default)]
    pub videos: Vec<VideoRecord>,
}

fn validate_classes(classes: &[ClassInfo]) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::Validation("classes: list is empty".into()));
    }
    let mut seen = vec![false; classes.len()];
    let mut names = HashSet::new();
    for c in classes {
        if c.id >= classes.len() || seen[c.id] {
            return Err(Error::Validation(format!(
                "classes[id={}]: ids must be unique and dense in 0..{}",
                c.id,
                classes.len()
            )));
        }
        seen[c.id] = true;
        if c.name.trim().is_empty() {
            return Err(Error::Validation(format!("classes[id={}].name: empty", c.id)));
        }
        if !names.insert(c.name.as_str()) {
            return Err(Error::Validation(format!(
                "classes[id={}].name: duplicate name \"{}\"",
                c.id, c.name
            )));
        }
    }
    Ok(())
}

/// Loads a class list (a manifest whose `videos` may be empty), such as the
/// shipped VR-ActivityNet label split.
pub fn load_class_list(path: impl AsRef<Path>) -> Result<Vec<ClassInfo>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    validate_classes(&m.classes)?;
    let mut classes = m.classes;
    classes.sort_by_key(|c| c.id);
    Ok(classes)
}

/// Loads and fully validates a manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Manifest::from_json(&text).map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut m: Manifest = serde_json::from_str(text).map_err(|e| Error::Validation(e.to_string()))?;
        m.validate()?;
        m.classes.sort_by_key(|c| c.id);
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Validation(format!(
                "version: expected {MANIFEST_VERSION}, got {}",
                self.version
            )));
        }
        validate_classes(&self.classes)?;
        let k = self.classes.len();
        let mut ids = HashSet::new();
        let (mut train, mut test) = (0usize, 0usize);
        for v in &self.videos {
            let at = |field: &str| format!("videos[id={}].{field}", v.id);
            if v.id.is_empty() {
                return Err(Error::Validation("videos[].id: empty id".into()));
            }
            if !ids.insert(v.id.as_str()) {
                return Err(Error::Validation(format!("{}: duplicate video id", at("id"))));
            }
            if let ClassRef::Class(c) = v.class {
                if c >= k {
                    return Err(Error::Validation(format!(
                        "{}: class {c} does not resolve (K={k})",
                        at("class")
                    )));
                }
            }
            if !(v.duration_s > 0.0) || !v.duration_s.is_finite() {
                return Err(Error::Validation(format!(
                    "{}: must be positive, got {}",
                    at("duration_s"),
                    v.duration_s
                )));
            }
            let [s, e] = v.activity;
            if !v.class.is_distractor() && !(0.0 <= s && s < e && e <= v.duration_s) {
                return Err(Error::Validation(format!(
                    "{}: [{s}, {e}] must satisfy 0 <= start < end <= duration_s ({})",
                    at("activity"),
                    v.duration_s
                )));
            }
            if v.class.is_distractor() && v.split == Split::Train {
                return Err(Error::Validation(format!(
                    "{}: distractors are gallery-only and cannot be in the train split",
                    at("split")
                )));
            }
            if v.feature_file.is_empty() {
                return Err(Error::Validation(format!("{}: empty path", at("feature_file"))));
            }
            match v.split {
                Split::Train => train += 1,
                Split::Test => test += 1,
                Split::Validation => {}
            }
        }
        if train == 0 || test == 0 {
            return Err(Error::Validation(format!(
                "videos: train and test splits must be non-empty (train={train}, test={test})"
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn tier(&self, class: usize) -> Tier {
        self.classes[class].tier
    }

    pub fn class_ids(&self, tier: Tier) -> Vec<usize> {
        self.classes.iter().filter(|c| c.tier == tier).map(|c| c.id).collect()
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name.as_str()).collect()
    }

    /// Indices into `videos` of the given split, in manifest order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.videos.len())
            .filter(|&i| self.videos[i].split == split)
            .collect()
    }

    pub fn video_index(&self) -> HashMap<&str, usize> {
        self.videos
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.as_str(), i))
            .collect()
    }

    pub fn has_taxonomy(&self) -> bool {
        self.classes
            .iter()
            .all(|c| c.parent.is_some() && c.grandparent.is_some())
    }

    /// Copy of this manifest with tiers reassigned so that exactly `base` are base classes.
    pub fn with_base_classes(&self, base: &[usize]) -> Result<Manifest> {
        let set: HashSet<usize> = base.iter().copied().collect();
        if set.iter().any(|&c| c >= self.num_classes()) {
            return Err(Error::Validation("base class id out of range".into()));
        }
        let mut m = self.clone();
        for c in &mut m.classes {
            c.tier = if set.contains(&c.id) { Tier::Base } else { Tier::Novel };
        }
        Ok(m)
    }
}
