use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, SplitInfo, Subset};
use crate::error::{Error, Result};

/// Number of TRAIN frames for `n` labeled frames.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    (train_fraction * n as f64).round() as usize
}

/// Frame-level random TRAIN/VAL split of the labeled frames. Unlabeled frames
/// are left out of the assignment. The permutation depends only on the
/// labeled frame ids (in manifest order) and `seed`.
pub fn split_dataset(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut ids: Vec<&str> = manifest.labeled().map(|f| f.frame_id.as_str()).collect();
    let n = ids.len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 labeled frames, found {n}")));
    }
    let n_train = train_count(n, train_fraction);
    if n_train < 1 || n_train > n - 1 {
        return Err(Error::Split(format!(
            "fraction {train_fraction} of {n} frames leaves an empty side ({n_train} train)"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let assignment: BTreeMap<String, Subset> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let side = if i < n_train { Subset::Train } else { Subset::Val };
            (id.to_string(), side)
        })
        .collect();

    let mut out = manifest.clone();
    out.split = Some(SplitInfo {
        seed,
        train_fraction,
        assignment,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::manifest::FrameRecord;
    use crate::labels::LabelVector;

    pub(crate) fn labeled_manifest(n: usize) -> DatasetManifest {
        DatasetManifest::new(
            (0..n)
                .map(|i| FrameRecord {
                    frame_id: format!("f{i:04}"),
                    source_video_id: format!("v{}", i / 20),
                    timestamp_s: (i % 20) as f64 * 0.5,
                    image_path: format!("f{i:04}.png"),
                    labels: Some(LabelVector::EMPTY),
                    annotator_id: None,
                    human_regions: vec![],
                })
                .collect(),
        )
    }

    #[test]
    fn eighty_twenty_on_three_hundred() {
        let m = split_dataset(&labeled_manifest(300), 0.8, 11).unwrap();
        assert_eq!(m.subset(Subset::Train).unwrap().len(), 240);
        assert_eq!(m.subset(Subset::Val).unwrap().len(), 60);
    }

    #[test]
    fn two_frames_halve() {
        let m = split_dataset(&labeled_manifest(2), 0.5, 0).unwrap();
        assert_eq!(m.subset(Subset::Train).unwrap().len(), 1);
        assert_eq!(m.subset(Subset::Val).unwrap().len(), 1);
    }

    #[test]
    fn rejects_empty_sides_and_bad_fractions() {
        assert!(matches!(split_dataset(&labeled_manifest(3), 0.1, 0), Err(Error::Split(_))));
        assert!(matches!(split_dataset(&labeled_manifest(3), 0.9, 0), Err(Error::Split(_))));
        assert!(matches!(split_dataset(&labeled_manifest(1), 0.5, 0), Err(Error::Split(_))));
        assert!(split_dataset(&labeled_manifest(10), 1.0, 0).is_err());
        assert!(split_dataset(&labeled_manifest(10), 0.0, 0).is_err());
    }

    #[test]
    fn unlabeled_frames_are_not_assigned() {
        let mut m = labeled_manifest(10);
        m.frames[3].labels = None;
        let s = split_dataset(&m, 0.5, 5).unwrap();
        let a = s.split_assignment().unwrap();
        assert_eq!(a.len(), 9);
        assert!(!a.contains_key("f0003"));
        s.validate().unwrap();
    }

    #[test]
    fn deterministic_in_seed() {
        let m = labeled_manifest(50);
        let a = split_dataset(&m, 0.8, 42).unwrap();
        let b = split_dataset(&m, 0.8, 42).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let c = split_dataset(&m, 0.8, 43).unwrap();
        assert_ne!(a.split_assignment(), c.split_assignment());
    }
}
