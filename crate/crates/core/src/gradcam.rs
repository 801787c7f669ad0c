//! Grad-CAM heatmaps per label, overlays and attention agreement with
//! human-drawn regions.

use std::path::Path;

use candle_core::{DType, Tensor, Var};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::ArtifactLabel;
use crate::models::ClassifierModel;
use crate::synthetic::RegionMask;

/// Blend weight of the colormap in overlays.
pub const OVERLAY_ALPHA: f32 = 0.4;
pub const DEFAULT_PERCENTILE: f64 = 80.0;

/// Channel-major C×H×W values of one image's layer output (or its gradient).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMaps {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMaps {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Contract(format!(
                "{} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        Ok(FeatureMaps {
            channels,
            height,
            width,
            data,
        })
    }

    /// From a 1×C×H×W tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (b, c, h, w) = t.dims4()?;
        if b != 1 {
            return Err(Error::Contract(format!("expected a single image, got batch {b}")));
        }
        let data = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        Self::new(c, h, w, data)
    }

    fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Rectified, unnormalized map and its maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCam {
    pub values: Vec<f64>,
    pub max: f64,
}

/// Weights each activation channel by the spatial mean of its gradient, sums
/// over channels and clips negatives to zero.
pub fn gradcam_raw(activations: &FeatureMaps, gradients: &FeatureMaps) -> Result<RawCam> {
    if (activations.channels, activations.height, activations.width)
        != (gradients.channels, gradients.height, gradients.width)
    {
        return Err(Error::Contract("activation and gradient shapes differ".into()));
    }
    let n = activations.height * activations.width;
    let mut values = vec![0f64; n];
    for c in 0..activations.channels {
        let weight = gradients.channel(c).iter().sum::<f64>() / n as f64;
        if weight == 0.0 {
            continue;
        }
        for (v, a) in values.iter_mut().zip(activations.channel(c)) {
            *v += weight * a;
        }
    }
    for v in &mut values {
        *v = v.max(0.0);
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    Ok(RawCam { values, max })
}

/// Divides by the maximum; a zero maximum gives the all-zero map.
pub fn normalize(raw: &RawCam) -> Vec<f32> {
    if raw.max > 0.0 {
        raw.values.iter().map(|v| (v / raw.max) as f32).collect()
    } else {
        vec![0.0; raw.values.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// Row-major values in [0, 1].
    pub values: Vec<f32>,
    /// 1-based label index.
    pub label_index: usize,
    pub layer_id: String,
    pub pre_norm_max: f64,
}

impl Heatmap {
    pub fn from_raw(raw: &RawCam, width: usize, height: usize, label: ArtifactLabel, layer_id: &str) -> Self {
        Heatmap {
            width,
            height,
            values: normalize(raw),
            label_index: label.index(),
            layer_id: layer_id.to_string(),
            pre_norm_max: raw.max,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Bilinear resampling to `w`×`h` with pixel-center alignment.
    pub fn upsample(&self, w: u32, h: u32) -> Vec<f32> {
        let sample = |pos: f64, n: usize| -> (usize, usize, f64) {
            let p = (pos.max(0.0)).min((n - 1) as f64);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, p - i0 as f64)
        };
        let mut out = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            let sy = (y as f64 + 0.5) * self.height as f64 / h as f64 - 0.5;
            let (y0, y1, fy) = sample(sy, self.height);
            for x in 0..w {
                let sx = (x as f64 + 0.5) * self.width as f64 / w as f64 - 0.5;
                let (x0, x1, fx) = sample(sx, self.width);
                let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
                let bottom = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
        out
    }

    /// Pixel of the maximum of the upsampled map (first in raster order).
    pub fn argmax_pixel(&self, w: u32, h: u32) -> (u32, u32) {
        let up = self.upsample(w, h);
        let mut best = 0;
        for (i, v) in up.iter().enumerate() {
            if *v > up[best] {
                best = i;
            }
        }
        ((best as u32) % w, (best as u32) / w)
    }
}

/// Gradient of `score(activation)` with respect to `activation`; a score
/// that ignores the activation yields zeros.
pub fn activation_gradient(activation: &Tensor, score: impl Fn(&Tensor) -> Result<Tensor>) -> Result<(Tensor, Tensor)> {
    let var = Var::from_tensor(&activation.detach())?;
    let s = score(var.as_tensor())?.sum_all()?;
    let grads = s.backward()?;
    let g = match grads.get(var.as_tensor()) {
        Some(g) => g.clone(),
        None => var.as_tensor().zeros_like()?,
    };
    Ok((var.as_tensor().clone(), g))
}

/// Grad-CAM of one label's logit at `layer_id` (the backbone's default
/// layer when `None`).
pub fn compute_gradcam(
    model: &ClassifierModel,
    image: &RgbImage,
    label_index: usize,
    layer_id: Option<&str>,
) -> Result<Heatmap> {
    let label = ArtifactLabel::from_index(label_index)?;
    let backbone = model.backbone();
    let layer = layer_id.unwrap_or(backbone.default_layer()).to_string();
    let x = model.preprocessing().batch(std::slice::from_ref(image))?;
    let activation = backbone.forward_until(&x, &layer, false)?;
    let (act, grad) = activation_gradient(&activation, |a| {
        Ok(model.forward_from_layer(a, &layer)?.narrow(1, label.position(), 1)?)
    })?;
    let act = FeatureMaps::from_tensor(&backbone.spatial_view(&act)?)?;
    let grad = FeatureMaps::from_tensor(&backbone.spatial_view(&grad)?)?;
    let raw = gradcam_raw(&act, &grad)?;
    Ok(Heatmap::from_raw(&raw, act.width, act.height, label, &layer))
}

/// Jet colormap: 0 is dark blue, 1 is dark red.
pub fn jet(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let f = |c: f32| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [f(3.0), f(2.0), f(1.0)]
}

/// Blends the colormapped, upsampled heatmap over the image.
pub fn overlay_image(heatmap: &Heatmap, image: &RgbImage) -> RgbImage {
    let (w, h) = image.dimensions();
    let up = heatmap.upsample(w, h);
    RgbImage::from_fn(w, h, |x, y| {
        let color = jet(up[(y * w + x) as usize]);
        let p = image.get_pixel(x, y);
        Rgb(std::array::from_fn(|c| {
            let v = (1.0 - OVERLAY_ALPHA) * p[c] as f32 + OVERLAY_ALPHA * 255.0 * color[c];
            v.round().clamp(0.0, 255.0) as u8
        }))
    })
}

pub fn overlay(heatmap: &Heatmap, image: &RgbImage, path: &Path) -> Result<()> {
    overlay_image(heatmap, image)
        .save(path)
        .map_err(|e| Error::image(path, e))
}

/// Nearest-rank percentile of `values` (0 < p < 100).
pub fn percentile(values: &[f32], p: f64) -> Result<f32> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::Parameter(format!("percentile {p} outside (0, 100)")));
    }
    if values.is_empty() {
        return Err(Error::Agreement("no values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Pixels strictly above the `p`-th percentile of the values.
pub fn binarize(values: &[f32], p: f64) -> Result<Vec<bool>> {
    let t = percentile(values, p)?;
    Ok(values.iter().map(|v| *v > t).collect())
}

/// Intersection over union of the binarized (upsampled) heatmap and a mask.
pub fn attention_agreement(heatmap: &Heatmap, human_region: &RegionMask, percentile: f64) -> Result<f64> {
    if human_region.is_empty() {
        return Err(Error::Agreement("human region is empty".into()));
    }
    let (w, h) = human_region.dimensions();
    let binary = binarize(&heatmap.upsample(w, h), percentile)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (b, m) in binary.iter().zip(human_region.bits()) {
        inter += usize::from(*b && *m);
        union += usize::from(*b || *m);
    }
    Ok(inter as f64 / union as f64)
}

/// Whether the heatmap's peak falls inside the mask.
pub fn argmax_in_mask(heatmap: &Heatmap, mask: &RegionMask) -> bool {
    let (w, h) = mask.dimensions();
    let (x, y) = heatmap.argmax_pixel(w, h);
    mask.get(x, y)
}
