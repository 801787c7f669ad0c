use std::fs;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::inject::inject;
use super::mask::RegionMask;
use super::scene::{check_size, generate_base_frame, SceneKind};
use crate::dataset::{save_manifest, DatasetManifest, FrameRecord, RegionRef};
use crate::error::{Error, Result};
use crate::labels::{ArtifactLabel, LabelVector, NUM_LABELS};

pub const SYNTHETIC_ANNOTATOR: &str = "synthetic-injector";

/// Structural corruptions go first so the pixel-level ones are not painted over.
const INJECTION_ORDER: [ArtifactLabel; NUM_LABELS] = [
    ArtifactLabel::ObjectMismatch,
    ArtifactLabel::MovementJoint,
    ArtifactLabel::BoundaryEdge,
    ArtifactLabel::TextureNoise,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub seed: u64,
    pub artifact_probabilities: [f64; NUM_LABELS],
    pub intensity: [f32; NUM_LABELS],
    pub scene_kind: SceneKind,
    /// Square frame side in pixels.
    pub size: u32,
}

impl Default for InjectionSpec {
    fn default() -> Self {
        InjectionSpec {
            seed: 0,
            artifact_probabilities: [0.45, 0.25, 0.26, 0.80],
            intensity: [1.0; NUM_LABELS],
            scene_kind: SceneKind::Striped,
            size: 64,
        }
    }
}

impl InjectionSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self
            .artifact_probabilities
            .iter()
            .find(|p| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::Parameter(format!("probability {p} outside [0, 1]")));
        }
        if let Some(i) = self
            .intensity
            .iter()
            .find(|i| !(i.is_finite() && **i > 0.0 && **i <= 1.0))
        {
            return Err(Error::Parameter(format!("intensity {i} outside (0, 1]")));
        }
        check_size(self.size, self.size)
    }
}

/// Everything produced for one synthetic frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub image: RgbImage,
    pub labels: LabelVector,
    pub masks: Vec<RegionMask>,
}

/// Per-frame seed; frames are independent so any generation order agrees.
pub fn frame_seed(seed: u64, index: u64) -> u64 {
    seed ^ index
}

pub fn generate_sample(spec: &InjectionSpec, index: u64) -> Result<SyntheticSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(spec.seed, index));
    let mut labels = LabelVector::EMPTY;
    for label in ArtifactLabel::ALL {
        let p = spec.artifact_probabilities[label.position()];
        labels.set(label, rng.random::<f64>() < p);
    }
    let scene_seed: u64 = rng.random();
    let injector_seeds: [u64; NUM_LABELS] = rng.random();

    let mut frame = generate_base_frame(spec.scene_kind, scene_seed, spec.size, spec.size)?;
    let mut masks = Vec::new();
    for label in INJECTION_ORDER {
        if labels.get(label) {
            let pos = label.position();
            let (next, mask) = inject(label, &frame, spec.intensity[pos], injector_seeds[pos])?;
            frame = next;
            masks.push(mask);
        }
    }
    masks.sort_by_key(|m| m.label);
    Ok(SyntheticSample {
        image: frame.image,
        labels,
        masks,
    })
}

fn write_sample(out_dir: &Path, index: u64, sample: &SyntheticSample) -> Result<FrameRecord> {
    let frame_id = format!("synth_{index:05}");
    let image_path = format!("frames/{frame_id}.png");
    let full = out_dir.join(&image_path);
    sample.image.save(&full).map_err(|e| Error::image(&full, e))?;
    let mut human_regions = Vec::new();
    for mask in &sample.masks {
        let mask_path = format!("masks/{frame_id}_l{}.png", mask.label.index());
        mask.save(&out_dir.join(&mask_path))?;
        human_regions.push(RegionRef {
            label: mask.label.index(),
            mask_path,
        });
    }
    Ok(FrameRecord {
        frame_id: frame_id.clone(),
        source_video_id: frame_id,
        timestamp_s: 0.0,
        image_path,
        labels: Some(sample.labels),
        annotator_id: Some(SYNTHETIC_ANNOTATOR.into()),
        human_regions,
    })
}

/// Generates `n_frames` labeled frames with ground-truth masks under `out_dir`
/// (`frames/`, `masks/`, `manifest.jsonl`) and returns the manifest.
pub fn generate_synthetic_dataset(spec: &InjectionSpec, n_frames: usize, out_dir: &Path) -> Result<DatasetManifest> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    generate_synthetic_dataset_with(spec, n_frames, out_dir, workers)
}

/// As [`generate_synthetic_dataset`] with an explicit worker count.
pub fn generate_synthetic_dataset_with(
    spec: &InjectionSpec,
    n_frames: usize,
    out_dir: &Path,
    workers: usize,
) -> Result<DatasetManifest> {
    if n_frames == 0 {
        return Err(Error::Parameter("n_frames must be at least 1".into()));
    }
    spec.validate()?;
    for sub in ["frames", "masks"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let workers = workers.clamp(1, n_frames);
    let chunk = n_frames.div_ceil(workers);
    let results: Vec<Result<Vec<FrameRecord>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let range = (w * chunk)..((w + 1) * chunk).min(n_frames);
                scope.spawn(move || {
                    range
                        .map(|i| {
                            let sample = generate_sample(spec, i as u64)?;
                            write_sample(out_dir, i as u64, &sample)
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generation thread panicked"))
            .collect()
    });
    let mut frames = Vec::with_capacity(n_frames);
    for r in results {
        frames.extend(r?);
    }

    let manifest = DatasetManifest::new(frames).with_resolution(spec.size, spec.size);
    save_manifest(&manifest, &out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
