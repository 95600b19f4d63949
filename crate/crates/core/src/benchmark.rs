//! A reconstruction of the published database layout: identity counts,
//! clips per identity, cross-reenactment plans and evaluation-side
//! soft-biometrics chosen so that every published count is reproduced.
//!
//! Only marginal counts are published, so the per-identity details here
//! (which identity carries which attributes, which targets and clips a
//! driver uses) are one consistent choice among many.

use crate::catalog::{
    cross_video_id, AgeRange, AvatarVideo, Catalog, CrossTargetAssignment, Dataset, Ethnicity, Gender, Generator,
    IdentityId, IdentityRecord,
};
use crate::protocol::Split;

use AgeRange::{From20To30 as A20, From31To45 as A31, From46To60 as A46};
use Ethnicity::{AfricanAmerican as AA, Asian as AS, Caucasian as CA, Hispanic as HI};
use Gender::{Female as F, Male as M};

type Bio = (Gender, Ethnicity, AgeRange);

#[rustfmt::skip]
const CREMAD_EVAL: [Bio; 24] = [
    (F, AA, A20), (F, AA, A20), (F, AA, A31), (F, AA, A31), (M, AA, A20), (M, AA, A31), (M, AA, A31), (M, AA, A46),
    (F, AS, A20), (F, AS, A31), (M, AS, A20), (M, AS, A31),
    (F, CA, A20), (F, CA, A31), (F, CA, A31), (F, CA, A46), (M, CA, A20), (M, CA, A20), (M, CA, A31), (M, CA, A31),
    (F, HI, A20), (F, HI, A31), (M, HI, A31), (M, HI, A31),
];

#[rustfmt::skip]
const RAVDESS_EVAL: [Bio; 8] =
    [(F, AS, A20), (M, AS, A20), (F, CA, A20), (F, CA, A20), (F, CA, A20), (M, CA, A20), (M, CA, A20), (M, CA, A31)];

/// One side of one dataset.
struct Block {
    dataset: Dataset,
    ids: Vec<IdentityId>,
    clips_per_id: u32,
    /// (targets, clips) per driver, in `ids` order.
    plans: Vec<(usize, u32)>,
    bios: Vec<Bio>,
}

impl Block {
    fn new(dataset: Dataset, ids: Vec<IdentityId>, clips_per_id: u32, default_plan: (usize, u32)) -> Self {
        let n = ids.len();
        Self { dataset, ids, clips_per_id, plans: vec![default_plan; n], bios: Vec::new() }
    }
}

pub struct CanonicalLayout {
    pub catalog: Catalog,
    pub split: Split,
}

fn identity_ids(prefix: &str, range: std::ops::Range<usize>, width: usize) -> Vec<IdentityId> {
    range.map(|i| format!("{prefix}{i:0width$}").into()).collect()
}

/// Evenly spread clip indices.
fn spread(count: u32, of: u32) -> Vec<u32> {
    (0..count).map(|j| j * of / count).collect()
}

fn blocks() -> (Vec<Block>, Vec<Block>) {
    let cremad = identity_ids("C", 1001..1086, 4);
    let ravdess = identity_ids("R", 1..25, 2);

    // Every evaluation driver of CREMA-D has 8 targets x 18 clips except one
    // (Asian, female, 20-30) with 7 targets, giving 3,438 cross videos.
    let mut c_eval = Block::new(Dataset::CremaD, cremad[..24].to_vec(), 72, (8, 18));
    c_eval.bios = CREMAD_EVAL.to_vec();
    c_eval.plans[8] = (7, 18);
    // Development: 8 targets each, 17 clips except two drivers with 16.
    let mut c_dev = Block::new(Dataset::CremaD, cremad[24..].to_vec(), 72, (8, 17));
    c_dev.plans[59] = (8, 16);
    c_dev.plans[60] = (8, 16);

    // RAVDESS evaluation: all 7 other identities x 15 clips.
    let mut r_eval = Block::new(Dataset::Ravdess, ravdess[..8].to_vec(), 60, (7, 15));
    r_eval.bios = RAVDESS_EVAL.to_vec();
    // Development: 8 targets x 15 clips except one driver with 7 targets.
    let mut r_dev = Block::new(Dataset::Ravdess, ravdess[8..].to_vec(), 60, (8, 15));
    r_dev.plans[15] = (7, 15);

    (vec![c_eval, r_eval], vec![c_dev, r_dev])
}

/// The full three-generator database (66,069 videos) and its published
/// development / evaluation partition.
pub fn canonical_layout() -> CanonicalLayout {
    let (eval, dev) = blocks();
    let mut identities = Vec::new();
    let mut videos = Vec::new();
    let mut assignments = Vec::new();
    for block in eval.iter().chain(&dev) {
        let n = block.ids.len();
        for (i, id) in block.ids.iter().enumerate() {
            let (gender, ethnicity, age_range) =
                block.bios.get(i).copied().unwrap_or((Gender::Unknown, Ethnicity::Unknown, AgeRange::Unknown));
            identities.push(IdentityRecord { id: id.clone(), dataset: block.dataset, gender, ethnicity, age_range });
            let (n_targets, n_clips) = block.plans[i];
            // Targets are the next identities of the same block, cyclically.
            let targets: Vec<IdentityId> = (1..=n_targets).map(|k| block.ids[(i + k) % n].clone()).collect();
            let clips = spread(n_clips, block.clips_per_id);
            for &generator in Generator::ALL {
                for clip in 0..block.clips_per_id {
                    videos.push(AvatarVideo {
                        video_id: format!("{generator}-{id}-{clip:03}").into(),
                        dataset: block.dataset,
                        generator,
                        target: id.clone(),
                        driver: id.clone(),
                        source_clip: clip,
                    });
                }
                for t in &targets {
                    for &clip in &clips {
                        videos.push(AvatarVideo {
                            video_id: cross_video_id(generator, t, id, clip).into(),
                            dataset: block.dataset,
                            generator,
                            target: t.clone(),
                            driver: id.clone(),
                            source_clip: clip,
                        });
                    }
                }
            }
            assignments.push(CrossTargetAssignment { driver: id.clone(), targets, sampled_clips: clips });
        }
    }
    let catalog = Catalog::new(identities, videos, assignments).expect("canonical layout is consistent");
    let split = Split {
        evaluation: eval.iter().flat_map(|b| b.ids.iter().cloned()).collect(),
        development: dev.iter().flat_map(|b| b.ids.iter().cloned()).collect(),
    };
    CanonicalLayout { catalog, split }
}
