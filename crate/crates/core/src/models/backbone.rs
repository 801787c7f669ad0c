use candle_core::{ModuleT, Tensor};
use candle_nn::LayerNorm;

use super::layers::global_avg_pool;
use crate::error::{Error, Result};

pub(crate) type Stage = Box<dyn ModuleT + Send + Sync>;

pub(crate) enum Pool {
    /// Spatial mean of a B×C×H×W map.
    GlobalAvg,
    /// Spatial maximum of a B×C×H×W map.
    GlobalMax,
    /// Final layer norm, then the class token of a B×(1+N)×D sequence.
    ClassToken(LayerNorm),
}

/// Feature extractor split into named stages. Each stage id is a valid
/// Grad-CAM layer; the pooled output is the feature vector fed to the heads.
pub struct Backbone {
    stages: Vec<(String, Stage)>,
    pool: Pool,
    feature_dim: usize,
    default_layer: String,
    /// Patch grid for token sequences (class token first); `None` for CNNs.
    token_grid: Option<(usize, usize)>,
}

impl Backbone {
    pub(crate) fn new(
        stages: Vec<(String, Stage)>,
        pool: Pool,
        feature_dim: usize,
        default_layer: &str,
        token_grid: Option<(usize, usize)>,
    ) -> Self {
        Backbone {
            stages,
            pool,
            feature_dim,
            default_layer: default_layer.to_string(),
            token_grid,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn default_layer(&self) -> &str {
        &self.default_layer
    }

    pub fn layer_ids(&self) -> Vec<&str> {
        self.stages.iter().map(|(n, _)| n.as_str()).collect()
    }

    fn layer_index(&self, layer: &str) -> Result<usize> {
        self.stages.iter().position(|(n, _)| n == layer).ok_or_else(|| {
            Error::Config(format!(
                "unknown layer {layer:?}; expected one of {}",
                self.layer_ids().join(", ")
            ))
        })
    }

    fn pool(&self, x: &Tensor) -> Result<Tensor> {
        Ok(match &self.pool {
            Pool::GlobalAvg => global_avg_pool(x)?,
            Pool::GlobalMax => x.flatten_from(2)?.max(2)?,
            Pool::ClassToken(norm) => x.apply(norm)?.narrow(1, 0, 1)?.squeeze(1)?,
        })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut x = x.clone();
        for (_, stage) in &self.stages {
            x = stage.forward_t(&x, train)?;
        }
        self.pool(&x)
    }

    /// Raw output of `layer` (inclusive).
    pub fn forward_until(&self, x: &Tensor, layer: &str, train: bool) -> Result<Tensor> {
        let idx = self.layer_index(layer)?;
        let mut x = x.clone();
        for (_, stage) in &self.stages[..=idx] {
            x = stage.forward_t(&x, train)?;
        }
        Ok(x)
    }

    /// Continues from the raw output of `layer` to the pooled features.
    pub fn forward_after(&self, activation: &Tensor, layer: &str, train: bool) -> Result<Tensor> {
        let idx = self.layer_index(layer)?;
        let mut x = activation.clone();
        for (_, stage) in &self.stages[idx + 1..] {
            x = stage.forward_t(&x, train)?;
        }
        self.pool(&x)
    }

    /// Converts a raw layer output (or its gradient) to B×C×H×W. Token
    /// sequences drop the class token and fold patches back onto the grid.
    pub fn spatial_view(&self, raw: &Tensor) -> Result<Tensor> {
        match self.token_grid {
            None => {
                if raw.rank() != 4 {
                    return Err(Error::Config(format!("layer output of rank {} is not spatial", raw.rank())));
                }
                Ok(raw.clone())
            }
            Some((gh, gw)) => {
                let (b, n, d) = raw.dims3()?;
                if n != gh * gw + 1 {
                    return Err(Error::Contract(format!("{n} tokens do not form a {gh}x{gw} grid plus class token")));
                }
                Ok(raw
                    .narrow(1, 1, gh * gw)?
                    .reshape((b, gh, gw, d))?
                    .permute((0, 3, 1, 2))?
                    .contiguous()?)
            }
        }
    }
}
