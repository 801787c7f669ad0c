//! Procedural scenes with injected artifacts and exact ground truth, so the
//! whole pipeline can be exercised without a private corpus.

mod generate;
mod inject;
mod mask;
mod scene;

pub use generate::{
    frame_seed, generate_sample, generate_synthetic_dataset, generate_synthetic_dataset_with,
    InjectionSpec, SyntheticSample, SYNTHETIC_ANNOTATOR,
};
pub use inject::{
    inject, inject_boundary_defect, inject_joint_anomaly, inject_object_mismatch,
    inject_texture_noise,
};
pub use mask::RegionMask;
pub use scene::{
    generate_base_frame, generate_base_scene, Background, Blob, Limb, SceneKind, SceneLayout,
    StickFigure, SynthFrame, MIN_SCENE_SIZE,
};
