use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ProtocolError, Side, Split};
use crate::catalog::{AvatarVideo, Catalog, Dataset, Generator, IdentityId, VideoId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Impostor,
    Genuine,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Impostor => 0,
            Label::Genuine => 1,
        }
    }

    pub fn is_genuine(self) -> bool {
        self == Label::Genuine
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(Label::Impostor),
            1 => Ok(Label::Genuine),
            other => Err(serde::de::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

/// Whether genuine trials may pair a video with itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    ExcludeIdentical,
    IncludeIdentical,
}

impl std::str::FromStr for Convention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exclude_identical" => Ok(Convention::ExcludeIdentical),
            "include_identical" => Ok(Convention::IncludeIdentical),
            other => Err(format!("unknown convention {other:?} (exclude_identical or include_identical)")),
        }
    }
}

/// An ordered (enrollment, test) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: u64,
    pub dataset: Dataset,
    pub generator: Generator,
    #[serde(rename = "enroll_video")]
    pub enroll: VideoId,
    #[serde(rename = "test_video")]
    pub test: VideoId,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialCounts {
    pub genuine: u64,
    pub impostor: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
    pub counts: BTreeMap<(Dataset, Generator), TrialCounts>,
}

impl TrialList {
    /// Keeps trials matching the predicate; ids are preserved.
    pub fn filter(&self, mut keep: impl FnMut(&Trial) -> bool) -> TrialList {
        let trials: Vec<Trial> = self.trials.iter().filter(|t| keep(t)).cloned().collect();
        TrialList { counts: count(&trials), trials }
    }

    pub fn totals(&self) -> TrialCounts {
        self.counts.values().fold(TrialCounts::default(), |a, c| TrialCounts {
            genuine: a.genuine + c.genuine,
            impostor: a.impostor + c.impostor,
        })
    }
}

fn count(trials: &[Trial]) -> BTreeMap<(Dataset, Generator), TrialCounts> {
    let mut m: BTreeMap<_, TrialCounts> = BTreeMap::new();
    for t in trials {
        let c = m.entry((t.dataset, t.generator)).or_default();
        match t.label {
            Label::Genuine => c.genuine += 1,
            Label::Impostor => c.impostor += 1,
        }
    }
    m
}

/// Label of an (enrollment, test) pair, or `None` when the pair is not a
/// valid trial (enrollment not a self-reenactment, or different targets).
pub fn label_for(enroll: &AvatarVideo, test: &AvatarVideo) -> Option<Label> {
    if !enroll.is_self() || enroll.target != test.target {
        return None;
    }
    Some(if test.driver == enroll.driver { Label::Genuine } else { Label::Impostor })
}

/// Every genuine and impostor pair among evaluation-side videos, per
/// (dataset, generator), sorted by (dataset, generator, enrollment, test).
pub fn generate_trials(catalog: &Catalog, split: &Split, convention: Convention) -> Result<TrialList, ProtocolError> {
    if split.evaluation.is_empty() {
        return Err(ProtocolError::Split("evaluation side is empty".into()));
    }
    type Groups<'a> = BTreeMap<(Dataset, Generator, &'a IdentityId), Vec<&'a AvatarVideo>>;
    let mut selfs: Groups<'_> = BTreeMap::new();
    let mut cross: Groups<'_> = BTreeMap::new();
    for v in catalog.videos() {
        if split.video_side(v) != Some(Side::Evaluation) {
            continue;
        }
        let key = (v.dataset, v.generator, &v.target);
        if v.is_self() {
            selfs.entry(key).or_default().push(v);
        } else {
            cross.entry(key).or_default().push(v);
        }
    }
    let mut trials = Vec::new();
    let mut push = |e: &AvatarVideo, t: &AvatarVideo, label: Label| {
        trials.push(Trial {
            trial_id: 0,
            dataset: e.dataset,
            generator: e.generator,
            enroll: e.video_id.clone(),
            test: t.video_id.clone(),
            label,
        })
    };
    for (key, enrolls) in &selfs {
        for e in enrolls {
            for t in enrolls {
                if convention == Convention::ExcludeIdentical && e.video_id == t.video_id {
                    continue;
                }
                push(e, t, Label::Genuine);
            }
            for t in cross.get(key).into_iter().flatten() {
                push(e, t, Label::Impostor);
            }
        }
    }
    trials.sort_unstable_by(|a, b| {
        (a.dataset, a.generator, a.enroll.as_str(), a.test.as_str()).cmp(&(
            b.dataset,
            b.generator,
            b.enroll.as_str(),
            b.test.as_str(),
        ))
    });
    for (i, t) in trials.iter_mut().enumerate() {
        t.trial_id = i as u64;
    }
    Ok(TrialList { counts: count(&trials), trials })
}

/// Recomputes each label from the catalog; returns the ids that disagree
/// or reference unknown videos.
pub fn verify_labels(trials: &[Trial], catalog: &Catalog) -> Vec<u64> {
    trials
        .iter()
        .filter(|t| {
            let (Some(e), Some(v)) = (catalog.video(&t.enroll), catalog.video(&t.test)) else {
                return true;
            };
            label_for(e, v) != Some(t.label)
        })
        .map(|t| t.trial_id)
        .collect()
}

pub const TRIALS_HEADER: [&str; 6] = ["trial_id", "dataset", "generator", "enroll_video", "test_video", "label"];

pub fn write_trials(trials: &[Trial], path: &Path) -> Result<(), ProtocolError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ProtocolError::csv(path, e))?;
    for t in trials {
        w.serialize(t).map_err(|e| ProtocolError::csv(path, e))?;
    }
    if trials.is_empty() {
        w.write_record(TRIALS_HEADER).map_err(|e| ProtocolError::csv(path, e))?;
    }
    w.flush().map_err(|e| ProtocolError::io(path, e))
}

pub fn read_trials(path: &Path) -> Result<TrialList, ProtocolError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ProtocolError::csv(path, e))?;
    let header = r.headers().map_err(|e| ProtocolError::csv(path, e))?;
    if header.iter().ne(TRIALS_HEADER) {
        return Err(ProtocolError::Format {
            path: path.display().to_string(),
            reason: format!("header must be {}", TRIALS_HEADER.join(",")),
        });
    }
    let trials: Vec<Trial> = r.deserialize().collect::<Result<_, _>>().map_err(|e| ProtocolError::csv(path, e))?;
    Ok(TrialList { counts: count(&trials), trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{AgeRange, Ethnicity, Gender, IdentityRecord};

    fn rec(id: &str) -> IdentityRecord {
        IdentityRecord {
            id: id.into(),
            dataset: Dataset::CremaD,
            gender: Gender::Female,
            ethnicity: Ethnicity::Asian,
            age_range: AgeRange::From20To30,
        }
    }

    fn video(id: &str, target: &str, driver: &str, clip: u32) -> AvatarVideo {
        AvatarVideo {
            video_id: id.into(),
            dataset: Dataset::CremaD,
            generator: Generator::Gaga,
            target: target.into(),
            driver: driver.into(),
            source_clip: clip,
        }
    }

    #[test]
    fn one_identity_two_selfs() {
        let c = Catalog::from_videos(vec![rec("a")], vec![video("v1", "a", "a", 0), video("v2", "a", "a", 1)]).unwrap();
        let split = Split { development: Default::default(), evaluation: ["a".into()].into() };
        let ex = generate_trials(&c, &split, Convention::ExcludeIdentical).unwrap();
        assert_eq!(ex.totals(), TrialCounts { genuine: 2, impostor: 0 });
        let inc = generate_trials(&c, &split, Convention::IncludeIdentical).unwrap();
        assert_eq!(inc.totals().genuine, 4);
        assert!(verify_labels(&inc.trials, &c).is_empty());
    }

    #[test]
    fn impostors_and_straddling_videos() {
        let ids = vec![rec("a"), rec("b"), rec("c")];
        let videos = vec![
            video("a1", "a", "a", 0),
            video("b1", "b", "b", 0),
            video("c1", "c", "c", 0),
            video("a-by-b", "a", "b", 0),
            video("a-by-c", "a", "c", 0),
        ];
        let c = Catalog::from_videos(ids, videos).unwrap();
        // c is on the development side, so a-by-c straddles and is dropped.
        let split = Split { development: ["c".into()].into(), evaluation: ["a".into(), "b".into()].into() };
        let t = generate_trials(&c, &split, Convention::ExcludeIdentical).unwrap();
        assert_eq!(t.totals(), TrialCounts { genuine: 0, impostor: 1 });
        assert_eq!(t.trials[0].enroll.as_str(), "a1");
        assert_eq!(t.trials[0].test.as_str(), "a-by-b");
    }

    #[test]
    fn csv_round_trip() {
        let c = Catalog::from_videos(
            vec![rec("a"), rec("b")],
            vec![
                video("a1", "a", "a", 0),
                video("a2", "a", "a", 1),
                video("a-by-b", "a", "b", 0),
                video("b1", "b", "b", 0),
            ],
        )
        .unwrap();
        let split = Split { development: Default::default(), evaluation: ["a".into(), "b".into()].into() };
        let t = generate_trials(&c, &split, Convention::IncludeIdentical).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trials.csv");
        write_trials(&t.trials, &p).unwrap();
        let back = read_trials(&p).unwrap();
        assert_eq!(back, t);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("trial_id,dataset,generator,enroll_video,test_video,label\n0,CREMA-D,GAGA,a1,a-by-b,0\n1,CREMA-D,GAGA,a1,a1,1\n"));
    }

    #[test]
    fn tampered_label_detected() {
        let c = Catalog::from_videos(vec![rec("a")], vec![video("v1", "a", "a", 0), video("v2", "a", "a", 1)]).unwrap();
        let split = Split { development: Default::default(), evaluation: ["a".into()].into() };
        let mut t = generate_trials(&c, &split, Convention::ExcludeIdentical).unwrap();
        t.trials[1].label = Label::Impostor;
        assert_eq!(verify_labels(&t.trials, &c), vec![1]);
    }
}
