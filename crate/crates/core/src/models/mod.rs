//! Multi-label classifiers: a pluggable backbone feeding four independent
//! binary heads, plus preprocessing, loss and checkpoints.

mod backbone;
mod checkpoint;
mod classifier;
mod efficientnet;
mod layers;
mod loss;
mod params;
mod preprocess;
mod resnet;
mod tiny;
mod vit;
mod weights;

pub use backbone::Backbone;
pub use checkpoint::{
    load_checkpoint, read_checkpoint_meta, save_checkpoint, CheckpointMeta, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use classifier::{
    build_classifier, build_classifier_with, logistic, predict, Architecture, BackboneSpec, ClassifierModel,
    Prediction, WeightRegistry, DEFAULT_THRESHOLD, PROB_EPS, WEIGHTS_ENV,
};
pub use loss::multilabel_loss;
pub use params::ParamStore;
pub use preprocess::{Preprocessing, IMAGENET_MEAN, IMAGENET_STD};
