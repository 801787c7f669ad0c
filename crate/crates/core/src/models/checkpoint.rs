//! Versioned model checkpoints: one safetensors file holding every parameter,
//! with the backbone spec, taxonomy and preprocessing in its metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Serialize;

use super::classifier::{build_classifier_with, BackboneSpec, ClassifierModel, WeightRegistry};
use super::preprocess::Preprocessing;
use super::weights::{read_tensor_file, write_tensor_file};
use crate::error::{Error, Result};
use crate::labels::TAXONOMY_VERSION;

pub const CHECKPOINT_FORMAT: &str = "artifact-classifier";
pub const CHECKPOINT_VERSION: u32 = 1;
const EXTRA_PREFIX: &str = "extra.";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub spec: BackboneSpec,
    pub taxonomy_version: String,
    pub preprocessing: Preprocessing,
    pub init_seed: u64,
    /// Free-form annotations such as the epoch and validation loss.
    pub extra: BTreeMap<String, String>,
}

pub fn save_checkpoint(model: &ClassifierModel, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
    let mut meta = HashMap::new();
    meta.insert("format".to_string(), CHECKPOINT_FORMAT.to_string());
    meta.insert("format_version".to_string(), CHECKPOINT_VERSION.to_string());
    meta.insert("backbone_spec".to_string(), to_json(model.spec())?);
    meta.insert("taxonomy_version".to_string(), model.taxonomy_version().to_string());
    meta.insert("preprocessing".to_string(), to_json(model.preprocessing())?);
    meta.insert("init_seed".to_string(), model.init_seed().to_string());
    for (k, v) in extra {
        meta.insert(format!("{EXTRA_PREFIX}{k}"), v.clone());
    }
    write_tensor_file(model.params(), meta, path)
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn field<'a>(meta: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Checkpoint(format!("metadata lacks {key}")))
}

fn parse_meta(meta: &HashMap<String, String>) -> Result<CheckpointMeta> {
    let bad = |key: &str, e: &dyn std::fmt::Display| Error::Checkpoint(format!("bad {key}: {e}"));
    if field(meta, "format")? != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("not an {CHECKPOINT_FORMAT} checkpoint")));
    }
    let format_version: u32 = field(meta, "format_version")?
        .parse()
        .map_err(|e| bad("format_version", &e))?;
    if format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {format_version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let spec = serde_json::from_str(field(meta, "backbone_spec")?).map_err(|e| bad("backbone_spec", &e))?;
    let preprocessing = serde_json::from_str(field(meta, "preprocessing")?).map_err(|e| bad("preprocessing", &e))?;
    let init_seed = field(meta, "init_seed")?.parse().map_err(|e| bad("init_seed", &e))?;
    let extra = meta
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(EXTRA_PREFIX).map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok(CheckpointMeta {
        format_version,
        spec,
        taxonomy_version: field(meta, "taxonomy_version")?.to_string(),
        preprocessing,
        init_seed,
        extra,
    })
}

/// Reads only the metadata (cheap; no model is built).
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    parse_meta(&read_tensor_file(path)?.metadata)
}

/// Rebuilds the model and restores every parameter. Checkpoints from another
/// taxonomy version are refused.
pub fn load_checkpoint(path: &Path) -> Result<(ClassifierModel, CheckpointMeta)> {
    let file = read_tensor_file(path)?;
    let meta = parse_meta(&file.metadata)?;
    if meta.taxonomy_version != TAXONOMY_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint taxonomy {:?} does not match {TAXONOMY_VERSION:?}",
            meta.taxonomy_version
        )));
    }
    let local = BackboneSpec {
        pretrained: false,
        ..meta.spec.clone()
    };
    let mut model = build_classifier_with(&local, meta.init_seed, &WeightRegistry::offline())?;
    if model.preprocessing() != &meta.preprocessing {
        return Err(Error::Checkpoint("preprocessing constants differ from this build".into()));
    }
    let vars = model.params().named_vars();
    if vars.len() != file.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, model has {}",
            file.tensors.len(),
            vars.len()
        )));
    }
    for (name, var) in vars {
        let t = file
            .tensors
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.dims() != var.dims() {
            return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}, expected {:?}", t.dims(), var.dims())));
        }
        var.set(t)?;
    }
    model.set_spec(meta.spec.clone());
    Ok((model, meta))
}
