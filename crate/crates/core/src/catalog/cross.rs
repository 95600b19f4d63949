//! Seeded construction of cross-reenactment assignments for synthetic
//! corpora.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AvatarVideo, Catalog, CatalogError, CrossTargetAssignment, Dataset, Generator, IdentityId};

/// Canonical id of a generated cross video.
pub fn cross_video_id(generator: Generator, target: &IdentityId, driver: &IdentityId, clip: u32) -> String {
    format!("{generator}-{target}-by-{driver}-{clip:03}")
}

/// Adds cross reenactments to a self-only catalog.
///
/// For every driver, `targets_per_driver` distinct targets are drawn
/// uniformly from the other identities of the same dataset, and
/// `clips_per_driver` of the driver's clips are drawn without replacement.
/// Every (target, clip) combination is then emitted once per generator the
/// driver appears with, so each driver contributes
/// `targets_per_driver * clips_per_driver` cross videos per generator.
pub fn build_cross_assignments(
    catalog: &Catalog,
    targets_per_driver: usize,
    clips_per_driver: usize,
    seed: u64,
) -> Result<Catalog, CatalogError> {
    if let Some(v) = catalog.videos().iter().find(|v| !v.is_self()) {
        return Err(CatalogError::Invariant {
            record: v.video_id.to_string(),
            reason: "input catalog already contains cross reenactments".into(),
        });
    }
    if targets_per_driver == 0 || targets_per_driver > super::TARGETS_PER_DRIVER {
        return Err(CatalogError::Insufficient(format!(
            "targets_per_driver must be in 1..={}",
            super::TARGETS_PER_DRIVER
        )));
    }

    let mut by_dataset: BTreeMap<Dataset, Vec<IdentityId>> = BTreeMap::new();
    for rec in catalog.identities() {
        by_dataset.entry(rec.dataset).or_default().push(rec.id.clone());
    }
    let mut clips: BTreeMap<&IdentityId, BTreeSet<u32>> = BTreeMap::new();
    let mut generators: BTreeMap<&IdentityId, BTreeSet<Generator>> = BTreeMap::new();
    for v in catalog.videos() {
        clips.entry(&v.driver).or_default().insert(v.source_clip);
        generators.entry(&v.driver).or_default().insert(v.generator);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (identities, mut videos, _) = catalog.clone().into_parts();
    let mut assignments = Vec::new();

    if clips_per_driver > 0 {
        for rec in &identities {
            let pool: Vec<&IdentityId> = by_dataset[&rec.dataset].iter().filter(|id| **id != rec.id).collect();
            if pool.len() < targets_per_driver {
                return Err(CatalogError::Insufficient(format!(
                    "dataset {} has {} identities; {} needed for {} targets per driver",
                    rec.dataset,
                    pool.len() + 1,
                    targets_per_driver + 1,
                    targets_per_driver
                )));
            }
            let own: Vec<u32> = clips.get(&rec.id).map(|c| c.iter().copied().collect()).unwrap_or_default();
            if own.len() < clips_per_driver {
                return Err(CatalogError::Insufficient(format!(
                    "driver {} has {} clips, {} requested",
                    rec.id,
                    own.len(),
                    clips_per_driver
                )));
            }

            let targets: Vec<IdentityId> =
                sample(&mut rng, pool.len(), targets_per_driver).into_iter().map(|i| pool[i].clone()).collect();
            let mut sampled: Vec<u32> =
                sample(&mut rng, own.len(), clips_per_driver).into_iter().map(|i| own[i]).collect();
            sampled.sort_unstable();

            for &generator in generators.get(&rec.id).into_iter().flatten() {
                for target in &targets {
                    for &clip in &sampled {
                        videos.push(AvatarVideo {
                            video_id: cross_video_id(generator, target, &rec.id, clip).into(),
                            dataset: rec.dataset,
                            generator,
                            target: target.clone(),
                            driver: rec.id.clone(),
                            source_clip: clip,
                        });
                    }
                }
            }
            assignments.push(CrossTargetAssignment { driver: rec.id.clone(), targets, sampled_clips: sampled });
        }
    }

    Catalog::new(identities, videos, assignments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{AgeRange, Ethnicity, Gender, IdentityRecord};

    fn self_catalog(n_ids: usize, clips: u32) -> Catalog {
        let ids: Vec<_> = (0..n_ids)
            .map(|i| IdentityRecord {
                id: format!("id{i:02}").as_str().into(),
                dataset: Dataset::CremaD,
                gender: Gender::Unknown,
                ethnicity: Ethnicity::Unknown,
                age_range: AgeRange::Unknown,
            })
            .collect();
        let mut videos = Vec::new();
        for rec in &ids {
            for g in [Generator::Gaga, Generator::Live] {
                for k in 0..clips {
                    videos.push(AvatarVideo {
                        video_id: format!("{g}-{}-{k}", rec.id).as_str().into(),
                        dataset: rec.dataset,
                        generator: g,
                        target: rec.id.clone(),
                        driver: rec.id.clone(),
                        source_clip: k,
                    });
                }
            }
        }
        Catalog::new(ids, videos, vec![]).unwrap()
    }

    #[test]
    fn eight_times_n_per_driver_per_generator() {
        let cat = build_cross_assignments(&self_catalog(10, 10), 8, 2, 1).unwrap();
        for a in cat.assignments() {
            assert_eq!(a.targets.len(), 8);
            assert!(!a.targets.contains(&a.driver));
            assert_eq!(a.sampled_clips.len(), 2);
            for g in [Generator::Gaga, Generator::Live] {
                let n =
                    cat.videos().iter().filter(|v| !v.is_self() && v.driver == a.driver && v.generator == g).count();
                assert_eq!(n, 16);
            }
        }
        assert_eq!(cat.videos().iter().filter(|v| !v.is_self()).count(), 10 * 16 * 2);
    }

    #[test]
    fn zero_clips_means_no_cross() {
        let base = self_catalog(10, 3);
        let cat = build_cross_assignments(&base, 8, 0, 1).unwrap();
        assert_eq!(cat, base);
    }

    #[test]
    fn deterministic_given_seed() {
        let base = self_catalog(12, 6);
        let a = build_cross_assignments(&base, 8, 3, 42).unwrap();
        let b = build_cross_assignments(&base, 8, 3, 42).unwrap();
        assert_eq!(a, b);
        let c = build_cross_assignments(&base, 8, 3, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn insufficient_identities_or_clips() {
        assert!(matches!(build_cross_assignments(&self_catalog(8, 4), 8, 1, 0), Err(CatalogError::Insufficient(_))));
        assert!(matches!(build_cross_assignments(&self_catalog(10, 2), 8, 3, 0), Err(CatalogError::Insufficient(_))));
    }
}
