//! Safetensors reading and writing for parameter stores.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::params::ParamStore;
use crate::dataset::write_atomic;
use crate::error::{Error, Result};

pub(crate) struct TensorFile {
    pub metadata: HashMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

fn to_candle(view: &TensorView, name: &str) -> Result<Tensor> {
    let dtype = match view.dtype() {
        Dtype::F32 => DType::F32,
        Dtype::F16 => DType::F16,
        Dtype::BF16 => DType::BF16,
        Dtype::F64 => DType::F64,
        other => return Err(Error::Checkpoint(format!("tensor {name} has unsupported dtype {other:?}"))),
    };
    let t = Tensor::from_raw_buffer(view.data(), dtype, view.shape(), &Device::Cpu)?;
    Ok(t.to_dtype(DType::F32)?)
}

pub(crate) fn read_tensor_file(path: &Path) -> Result<TensorFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |e: safetensors::SafeTensorError| Error::Checkpoint(format!("{}: {e}", path.display()));
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(bad)?;
    let st = SafeTensors::deserialize(&bytes).map_err(bad)?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        let t = to_candle(&view, &name)?;
        tensors.insert(name, t);
    }
    Ok(TensorFile {
        metadata: meta.metadata().clone().unwrap_or_default(),
        tensors,
    })
}

/// Writes every variable of `params` (as little-endian f32) plus `metadata`.
pub(crate) fn write_tensor_file(params: &ParamStore, metadata: HashMap<String, String>, path: &Path) -> Result<()> {
    let vars = params.named_vars();
    let mut buffers = Vec::with_capacity(vars.len());
    for (name, var) in &vars {
        let values = var.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        buffers.push((name.clone(), var.dims().to_vec(), bytes));
    }
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let blob = safetensors::serialize(views, Some(metadata)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    write_atomic(path, &sorted_header(&blob)?)
}

/// Re-emits the JSON header with sorted keys; the library writes metadata in
/// hash order, which would make identical checkpoints differ byte-wise.
fn sorted_header(blob: &[u8]) -> Result<Vec<u8>> {
    let bad = |m: String| Error::Checkpoint(format!("serialized header: {m}"));
    let len = u64::from_le_bytes(blob[..8].try_into().expect("8 bytes")) as usize;
    let header: serde_json::Value = serde_json::from_slice(&blob[8..8 + len]).map_err(|e| bad(e.to_string()))?;
    let mut json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    // The data section must start on an 8-byte boundary.
    json.resize(json.len().div_ceil(8) * 8, b' ');
    let mut out = Vec::with_capacity(8 + json.len() + blob.len() - 8 - len);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob[8 + len..]);
    Ok(out)
}

/// Copies every variable under `prefix` from the file (names without prefix).
pub(crate) fn load_pretrained(params: &ParamStore, prefix: &str, path: &Path) -> Result<()> {
    let file = read_tensor_file(path).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Fetch(m),
        other => other,
    })?;
    for (name, var) in params.named_vars() {
        let Some(key) = name.strip_prefix(prefix) else { continue };
        let t = file
            .tensors
            .get(key)
            .ok_or_else(|| Error::Fetch(format!("{} lacks tensor {key}", path.display())))?;
        if t.dims() != var.dims() {
            return Err(Error::Fetch(format!(
                "{key}: shape {:?} in {}, model expects {:?}",
                t.dims(),
                path.display(),
                var.dims()
            )));
        }
        var.set(t)?;
    }
    Ok(())
}
