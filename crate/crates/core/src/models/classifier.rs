use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use candle_core::{Module, Tensor};
use candle_nn::{Init, Linear};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::backbone::Backbone;
use super::efficientnet::{efficientnet, B3, B4};
use super::params::ParamStore;
use super::preprocess::Preprocessing;
use super::resnet::resnet50;
use super::tiny::tiny_cnn;
use super::vit::vit_base;
use super::weights::load_pretrained;
use crate::error::{Error, Result};
use crate::labels::{LabelVector, NUM_LABELS, TAXONOMY_VERSION};

/// Emitted probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-6;
pub const DEFAULT_THRESHOLD: f32 = 0.5;
/// Environment variable naming the directory searched for `{architecture}.safetensors`.
pub const WEIGHTS_ENV: &str = "ARTIFACT_WEIGHTS_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Resnet50,
    EfficientnetB3,
    EfficientnetB4,
    VitBase,
    TinyCnn,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Resnet50,
        Architecture::EfficientnetB3,
        Architecture::EfficientnetB4,
        Architecture::VitBase,
        Architecture::TinyCnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Resnet50 => "resnet50",
            Architecture::EfficientnetB3 => "efficientnet_b3",
            Architecture::EfficientnetB4 => "efficientnet_b4",
            Architecture::VitBase => "vit_base",
            Architecture::TinyCnn => "tiny_cnn",
        }
    }

    /// Resolution the architecture is usually run at.
    pub fn default_resolution(self) -> u32 {
        match self {
            Architecture::Resnet50 | Architecture::VitBase => 224,
            Architecture::EfficientnetB3 => 300,
            Architecture::EfficientnetB4 => 380,
            Architecture::TinyCnn => 64,
        }
    }

    fn min_resolution(self) -> u32 {
        match self {
            Architecture::TinyCnn => 8,
            Architecture::VitBase => 16,
            _ => 32,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Architecture::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!("unknown architecture {s:?}; expected one of {}", known.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub architecture: Architecture,
    pub pretrained: bool,
    pub input_resolution: u32,
}

impl BackboneSpec {
    pub fn new(architecture: Architecture, pretrained: bool, input_resolution: u32) -> Self {
        BackboneSpec {
            architecture,
            pretrained,
            input_resolution,
        }
    }

    pub fn tiny(input_resolution: u32) -> Self {
        Self::new(Architecture::TinyCnn, false, input_resolution)
    }

    pub fn validate(&self) -> Result<()> {
        let min = self.architecture.min_resolution();
        if self.input_resolution < min {
            return Err(Error::Config(format!(
                "{} needs input_resolution >= {min}, got {}",
                self.architecture, self.input_resolution
            )));
        }
        Ok(())
    }
}

/// Where pretrained backbone weights come from. Weights are looked up as
/// `{dir}/{architecture}.safetensors`; nothing is downloaded.
#[derive(Clone, Debug, Default)]
pub struct WeightRegistry {
    dir: Option<PathBuf>,
}

impl WeightRegistry {
    pub fn from_env() -> Self {
        WeightRegistry {
            dir: std::env::var_os(WEIGHTS_ENV).map(PathBuf::from),
        }
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        WeightRegistry { dir: Some(dir.into()) }
    }

    pub fn offline() -> Self {
        WeightRegistry { dir: None }
    }

    pub fn resolve(&self, arch: Architecture) -> Result<PathBuf> {
        let dir = self.dir.as_ref().ok_or_else(|| {
            Error::Fetch(format!("no weights directory configured for {arch} (set {WEIGHTS_ENV})"))
        })?;
        let path = dir.join(format!("{arch}.safetensors"));
        if !path.is_file() {
            return Err(Error::Fetch(format!("{} not found", path.display())));
        }
        Ok(path)
    }
}

/// Backbone plus four independent single-logit heads.
pub struct ClassifierModel {
    spec: BackboneSpec,
    taxonomy_version: String,
    preprocessing: Preprocessing,
    init_seed: u64,
    params: ParamStore,
    backbone: Backbone,
    heads: Vec<Linear>,
}

impl fmt::Debug for ClassifierModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassifierModel")
            .field("spec", &self.spec)
            .field("taxonomy_version", &self.taxonomy_version)
            .field("init_seed", &self.init_seed)
            .finish_non_exhaustive()
    }
}

/// Builds a model, resolving pretrained weights through `ARTIFACT_WEIGHTS_DIR`.
pub fn build_classifier(spec: &BackboneSpec, init_seed: u64) -> Result<ClassifierModel> {
    build_classifier_with(spec, init_seed, &WeightRegistry::from_env())
}

pub fn build_classifier_with(spec: &BackboneSpec, init_seed: u64, registry: &WeightRegistry) -> Result<ClassifierModel> {
    spec.validate()?;
    // Resolve first so a missing file fails before any allocation.
    let weights = if spec.pretrained {
        Some(registry.resolve(spec.architecture)?)
    } else {
        None
    };
    let params = ParamStore::new(init_seed);
    let vb = params.var_builder();
    let bb = vb.pp("backbone");
    let res = spec.input_resolution as usize;
    let backbone = match spec.architecture {
        Architecture::TinyCnn => tiny_cnn(bb)?,
        Architecture::Resnet50 => resnet50(bb)?,
        Architecture::EfficientnetB3 => efficientnet(B3, bb)?,
        Architecture::EfficientnetB4 => efficientnet(B4, bb)?,
        Architecture::VitBase => vit_base(res, bb)?,
    };
    let f = backbone.feature_dim();
    let heads = (0..NUM_LABELS)
        .map(|i| {
            let vb = vb.pp("heads").pp(i.to_string());
            // Small weights keep untrained probabilities near 0.5.
            let w = vb.get_with_hints((1, f), "weight", Init::Randn { mean: 0.0, stdev: 0.01 })?;
            let b = vb.get_with_hints(1, "bias", Init::Const(0.0))?;
            Ok(Linear::new(w, Some(b)))
        })
        .collect::<Result<Vec<_>>>()?;
    let model = ClassifierModel {
        spec: spec.clone(),
        taxonomy_version: TAXONOMY_VERSION.to_string(),
        preprocessing: Preprocessing::imagenet(spec.input_resolution),
        init_seed,
        params,
        backbone,
        heads,
    };
    if let Some(path) = weights {
        load_pretrained(&model.params, "backbone.", &path)?;
    }
    Ok(model)
}

impl ClassifierModel {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn taxonomy_version(&self) -> &str {
        &self.taxonomy_version
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub(crate) fn set_spec(&mut self, spec: BackboneSpec) {
        self.spec = spec;
    }

    /// B×4 logits from pooled B×F features.
    pub fn head_logits(&self, features: &Tensor) -> Result<Tensor> {
        let cols = self
            .heads
            .iter()
            .map(|h| h.forward(features))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Tensor::cat(&cols, 1)?)
    }

    /// B×4 logits from a preprocessed B×3×R×R batch.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let features = self.backbone.forward_t(x, train)?;
        self.head_logits(&features)
    }

    /// Logits from a raw activation of `layer`.
    pub fn forward_from_layer(&self, activation: &Tensor, layer: &str) -> Result<Tensor> {
        let features = self.backbone.forward_after(activation, layer, false)?;
        self.head_logits(&features)
    }

    /// Preprocesses and scores images in inference mode.
    pub fn logits(&self, images: &[RgbImage]) -> Result<Tensor> {
        self.forward_t(&self.preprocessing.batch(images)?, false)
    }

    pub fn predict_batch(&self, images: &[RgbImage], threshold: f32) -> Result<Vec<Prediction>> {
        check_threshold(threshold)?;
        let logits = self.logits(images)?.to_dtype(candle_core::DType::F64)?.to_vec2::<f64>()?;
        logits
            .iter()
            .map(|row| {
                let mut p = [0f32; NUM_LABELS];
                for (dst, z) in p.iter_mut().zip(row) {
                    *dst = logistic(*z) as f32;
                }
                Prediction::new(p, threshold)
            })
            .collect()
    }

    pub fn predict(&self, image: &RgbImage, threshold: f32) -> Result<Prediction> {
        Ok(self.predict_batch(std::slice::from_ref(image), threshold)?.remove(0))
    }
}

pub fn predict(model: &ClassifierModel, image: &RgbImage, threshold: f32) -> Result<Prediction> {
    model.predict(image, threshold)
}

/// Clamped logistic function.
pub fn logistic(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn check_threshold(threshold: f32) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("threshold {threshold} outside (0, 1)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: [f32; NUM_LABELS],
    pub labels: LabelVector,
    pub threshold: f32,
}

impl Prediction {
    /// `labels[i]` is set exactly when `probabilities[i] >= threshold`.
    pub fn new(probabilities: [f32; NUM_LABELS], threshold: f32) -> Result<Self> {
        check_threshold(threshold)?;
        if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Contract(format!("probability {p} outside [0, 1]")));
        }
        Ok(Prediction {
            probabilities,
            labels: LabelVector::new(probabilities.map(|p| p >= threshold)),
            threshold,
        })
    }
}
