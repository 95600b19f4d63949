//! Avatar video catalog: identities, soft-biometrics, generators and the
//! self/cross reenactment structure of the database.
//!
//! A [`Catalog`] is immutable once built. Construction goes through
//! [`Catalog::new`], which checks every structural invariant, so any
//! `Catalog` value handed around the crate is known to be consistent.

mod counts;
mod cross;
mod manifest;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use counts::{validate_counts, CellResult, CountCell, CountTable, ReenactKind, ValidationReport};
pub use cross::{build_cross_assignments, cross_video_id};
pub use manifest::{load_manifest, save_manifest, IDENTITIES_HEADER, VIDEOS_HEADER};

/// Upper bound on the number of cross targets assigned to one driver.
pub const TARGETS_PER_DRIVER: usize = 8;

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown {} value {:?} (expected one of: {})",
                        stringify!($name),
                        other,
                        [$($text),+].join(", ")
                    )),
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

#[allow(unused_imports)]
pub(crate) use string_enum;

string_enum!(
    /// Source corpus of the driving videos.
    Dataset { CremaD => "CREMA-D", Ravdess => "RAVDESS" }
);

string_enum!(
    /// Avatar synthesis pipeline.
    Generator { Gaga => "GAGA", Live => "LIVE", Huny => "HUNY" }
);

string_enum!(Gender { Female => "female", Male => "male", Unknown => "unknown" });

string_enum!(Ethnicity {
    AfricanAmerican => "african_american",
    Asian => "asian",
    Caucasian => "caucasian",
    Hispanic => "hispanic",
    Unknown => "unknown",
});

string_enum!(AgeRange {
    From20To30 => "20-30",
    From31To45 => "31-45",
    From46To60 => "46-60",
    Unknown => "unknown",
});

macro_rules! key_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(s: impl AsRef<str>) -> Self {
                Self(Arc::from(s.as_ref()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self::new(s)
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(Arc::from(s))
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

key_type!(
    /// Opaque identity key (one human subject).
    IdentityId
);
key_type!(
    /// Opaque avatar video key.
    VideoId
);

/// One human subject with its soft-biometric annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub id: IdentityId,
    pub dataset: Dataset,
    pub gender: Gender,
    pub ethnicity: Ethnicity,
    pub age_range: AgeRange,
}

/// Soft-biometric attribute used for stratification and fairness breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Gender,
    Ethnicity,
    AgeRange,
}

impl Attribute {
    pub const ALL: &'static [Attribute] = &[Attribute::Gender, Attribute::Ethnicity, Attribute::AgeRange];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::Ethnicity => "ethnicity",
            Attribute::AgeRange => "age_range",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "gender" => Ok(Attribute::Gender),
            "ethnicity" => Ok(Attribute::Ethnicity),
            "age_range" | "age" => Ok(Attribute::AgeRange),
            other => Err(format!("unknown attribute {other:?}")),
        }
    }
}

impl IdentityRecord {
    /// Attribute value as its manifest string, or `None` when unknown.
    pub fn attribute(&self, attr: Attribute) -> Option<&'static str> {
        match attr {
            Attribute::Gender => (self.gender != Gender::Unknown).then(|| self.gender.as_str()),
            Attribute::Ethnicity => (self.ethnicity != Ethnicity::Unknown).then(|| self.ethnicity.as_str()),
            Attribute::AgeRange => (self.age_range != AgeRange::Unknown).then(|| self.age_range.as_str()),
        }
    }
}

/// One synthetic video: the appearance of `target` driven by clip
/// `source_clip` of `driver`, rendered by `generator`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvatarVideo {
    pub video_id: VideoId,
    pub dataset: Dataset,
    pub generator: Generator,
    pub target: IdentityId,
    pub driver: IdentityId,
    pub source_clip: u32,
}

impl AvatarVideo {
    pub fn is_self(&self) -> bool {
        self.target == self.driver
    }

    pub fn kind(&self) -> ReenactKind {
        if self.is_self() {
            ReenactKind::SelfReenactment
        } else {
            ReenactKind::CrossReenactment
        }
    }
}

/// The fixed set of appearance targets a driver impersonates, and the
/// driving clips sampled for cross-reenactment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossTargetAssignment {
    pub driver: IdentityId,
    pub targets: Vec<IdentityId>,
    pub sampled_clips: Vec<u32>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid record {record}: {reason}")]
    Invariant { record: String, reason: String },
    #[error("insufficient data: {0}")]
    Insufficient(String),
}

fn invariant(record: impl fmt::Display, reason: impl Into<String>) -> CatalogError {
    CatalogError::Invariant { record: record.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone)]
pub struct Catalog {
    identities: BTreeMap<IdentityId, IdentityRecord>,
    videos: Vec<AvatarVideo>,
    video_index: HashMap<VideoId, usize>,
    assignments: BTreeMap<IdentityId, CrossTargetAssignment>,
}

impl PartialEq for Catalog {
    fn eq(&self, other: &Self) -> bool {
        self.identities == other.identities && self.videos == other.videos && self.assignments == other.assignments
    }
}

impl Catalog {
    /// Builds a catalog and checks every invariant.
    pub fn new(
        identities: Vec<IdentityRecord>,
        videos: Vec<AvatarVideo>,
        assignments: Vec<CrossTargetAssignment>,
    ) -> Result<Self, CatalogError> {
        let mut id_map = BTreeMap::new();
        for rec in identities {
            if id_map.contains_key(&rec.id) {
                return Err(invariant(&rec.id, "duplicate identity id"));
            }
            id_map.insert(rec.id.clone(), rec);
        }

        let mut assign_map: BTreeMap<IdentityId, CrossTargetAssignment> = BTreeMap::new();
        for a in assignments {
            if !id_map.contains_key(&a.driver) {
                return Err(invariant(&a.driver, "assignment driver is not a known identity"));
            }
            if a.targets.is_empty() || a.targets.len() > TARGETS_PER_DRIVER {
                return Err(invariant(
                    &a.driver,
                    format!("assignment has {} targets (allowed 1..={TARGETS_PER_DRIVER})", a.targets.len()),
                ));
            }
            let distinct: BTreeSet<_> = a.targets.iter().collect();
            if distinct.len() != a.targets.len() {
                return Err(invariant(&a.driver, "assignment targets are not distinct"));
            }
            if a.targets.contains(&a.driver) {
                return Err(invariant(&a.driver, "driver listed among its own cross targets"));
            }
            if let Some(t) = a.targets.iter().find(|t| !id_map.contains_key(*t)) {
                return Err(invariant(&a.driver, format!("assignment target {t} is not a known identity")));
            }
            let clips: BTreeSet<_> = a.sampled_clips.iter().collect();
            if clips.len() != a.sampled_clips.len() {
                return Err(invariant(&a.driver, "sampled clips repeat (must be drawn without replacement)"));
            }
            if assign_map.insert(a.driver.clone(), a.clone()).is_some() {
                return Err(invariant(&a.driver, "driver has more than one assignment"));
            }
        }

        let mut video_index = HashMap::with_capacity(videos.len());
        let mut tuples = HashMap::with_capacity(videos.len());
        for (i, v) in videos.iter().enumerate() {
            if video_index.insert(v.video_id.clone(), i).is_some() {
                return Err(invariant(&v.video_id, "duplicate video_id"));
            }
            let driver = id_map
                .get(&v.driver)
                .ok_or_else(|| invariant(&v.video_id, format!("unknown driver identity {}", v.driver)))?;
            if !id_map.contains_key(&v.target) {
                return Err(invariant(&v.video_id, format!("unknown target identity {}", v.target)));
            }
            if driver.dataset != v.dataset {
                return Err(invariant(
                    &v.video_id,
                    format!("dataset {} differs from driver dataset {}", v.dataset, driver.dataset),
                ));
            }
            let key = (v.target.clone(), v.driver.clone(), v.generator, v.source_clip);
            if let Some(prev) = tuples.insert(key, i) {
                return Err(invariant(
                    &v.video_id,
                    format!("same (target, driver, generator, clip) as {}", videos[prev].video_id),
                ));
            }
            if !v.is_self() {
                let a = assign_map.get(&v.driver).ok_or_else(|| {
                    invariant(&v.video_id, format!("cross video but driver {} has no target assignment", v.driver))
                })?;
                if !a.targets.contains(&v.target) {
                    return Err(invariant(
                        &v.video_id,
                        format!("target {} not among the assigned targets of driver {}", v.target, v.driver),
                    ));
                }
                if !a.sampled_clips.contains(&v.source_clip) {
                    return Err(invariant(
                        &v.video_id,
                        format!("clip {} not among the sampled clips of driver {}", v.source_clip, v.driver),
                    ));
                }
            }
        }

        Ok(Self { identities: id_map, videos, video_index, assignments: assign_map })
    }

    /// Builds a catalog whose cross assignments are reconstructed from the
    /// cross videos themselves (targets in order of first appearance, clips
    /// sorted). This is how flat manifests are loaded.
    pub fn from_videos(identities: Vec<IdentityRecord>, videos: Vec<AvatarVideo>) -> Result<Self, CatalogError> {
        let assignments = derive_assignments(&videos);
        Self::new(identities, videos, assignments)
    }

    pub fn empty() -> Self {
        Self {
            identities: BTreeMap::new(),
            videos: Vec::new(),
            video_index: HashMap::new(),
            assignments: BTreeMap::new(),
        }
    }

    pub fn identities(&self) -> impl ExactSizeIterator<Item = &IdentityRecord> + '_ {
        self.identities.values()
    }

    pub fn identity(&self, id: &IdentityId) -> Option<&IdentityRecord> {
        self.identities.get(id)
    }

    pub fn videos(&self) -> &[AvatarVideo] {
        &self.videos
    }

    pub fn video(&self, id: &VideoId) -> Option<&AvatarVideo> {
        self.video_index.get(id).map(|&i| &self.videos[i])
    }

    pub fn assignments(&self) -> impl ExactSizeIterator<Item = &CrossTargetAssignment> + '_ {
        self.assignments.values()
    }

    pub fn assignment(&self, driver: &IdentityId) -> Option<&CrossTargetAssignment> {
        self.assignments.get(driver)
    }

    pub fn datasets(&self) -> BTreeSet<Dataset> {
        self.identities.values().map(|r| r.dataset).collect()
    }

    pub fn generators(&self) -> BTreeSet<Generator> {
        self.videos.iter().map(|v| v.generator).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty() && self.identities.is_empty()
    }

    /// Keeps the videos accepted by `keep`; identities and assignments are
    /// retained unchanged.
    pub fn filter_videos(&self, mut keep: impl FnMut(&AvatarVideo) -> bool) -> Catalog {
        let videos: Vec<_> = self.videos.iter().filter(|v| keep(v)).cloned().collect();
        let video_index = videos.iter().enumerate().map(|(i, v)| (v.video_id.clone(), i)).collect();
        Catalog { identities: self.identities.clone(), videos, video_index, assignments: self.assignments.clone() }
    }

    pub(crate) fn into_parts(self) -> (Vec<IdentityRecord>, Vec<AvatarVideo>, Vec<CrossTargetAssignment>) {
        (self.identities.into_values().collect(), self.videos, self.assignments.into_values().collect())
    }
}

fn derive_assignments(videos: &[AvatarVideo]) -> Vec<CrossTargetAssignment> {
    let mut by_driver: BTreeMap<IdentityId, (Vec<IdentityId>, BTreeSet<u32>)> = BTreeMap::new();
    for v in videos.iter().filter(|v| !v.is_self()) {
        let entry = by_driver.entry(v.driver.clone()).or_default();
        if !entry.0.contains(&v.target) {
            entry.0.push(v.target.clone());
        }
        entry.1.insert(v.source_clip);
    }
    by_driver
        .into_iter()
        .map(|(driver, (targets, clips))| CrossTargetAssignment {
            driver,
            targets,
            sampled_clips: clips.into_iter().collect(),
        })
        .collect()
}
