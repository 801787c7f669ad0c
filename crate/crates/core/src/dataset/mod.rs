//! Frame corpora: extraction from clips, manifests, splits and label statistics.

mod extract;
mod manifest;
mod split;
mod stats;

pub use extract::{
    expected_sample_count, extract_frames, extract_many, probe_clip, video_id, ClipInfo, FrameRate,
};
pub use manifest::{
    load_manifest, manifest_dir, save_manifest, DatasetManifest, FrameRecord, RegionRef, SplitInfo,
    Subset, MANIFEST_VERSION,
};
pub(crate) use manifest::write_atomic;
pub use split::{split_dataset, train_count};
pub use stats::{label_frequency, FrequencyTable, PercentRounding};
