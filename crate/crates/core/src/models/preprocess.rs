use image::imageops::FilterType;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Input pipeline recorded with every model: square resize to `resolution`,
/// scale to [0, 1], then per-channel `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    pub resolution: u32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Preprocessing {
    pub fn imagenet(resolution: u32) -> Self {
        Preprocessing {
            resolution,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }

    /// Square images are resized to the model resolution; anything else is
    /// rejected rather than silently distorted or cropped.
    pub fn resize(&self, image: &RgbImage) -> Result<RgbImage> {
        let (w, h) = image.dimensions();
        let r = self.resolution;
        if (w, h) == (r, r) {
            return Ok(image.clone());
        }
        if w != h || w == 0 {
            return Err(Error::Preprocess(format!(
                "image is {w}x{h}; the model expects square input ({r}x{r})"
            )));
        }
        Ok(image::imageops::resize(image, r, r, FilterType::Triangle))
    }

    /// Channel-major normalized values of one image.
    pub fn image_values(&self, image: &RgbImage) -> Result<Vec<f32>> {
        let image = self.resize(image)?;
        let n = (self.resolution * self.resolution) as usize;
        let mut out = vec![0f32; 3 * n];
        for (i, p) in image.pixels().enumerate() {
            for c in 0..3 {
                out[c * n + i] = (p[c] as f32 / 255.0 - self.mean[c]) / self.std[c];
            }
        }
        Ok(out)
    }

    /// B×3×R×R batch tensor.
    pub fn batch(&self, images: &[RgbImage]) -> Result<Tensor> {
        let r = self.resolution as usize;
        let mut data = Vec::with_capacity(images.len() * 3 * r * r);
        for img in images {
            data.extend(self.image_values(img)?);
        }
        Ok(Tensor::from_vec(data, (images.len(), 3, r, r), &Device::Cpu)?)
    }
}
