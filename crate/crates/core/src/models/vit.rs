//! ViT-Base/16 with timm parameter names and class-token pooling.

use candle_core::{Module, Tensor, D};
use candle_nn::{func_t, Init, LayerNorm, Linear, VarBuilder};

use super::backbone::{Backbone, Pool, Stage};
use super::layers::Conv;
use crate::error::{Error, Result};

pub(crate) const PATCH: usize = 16;
const DIM: usize = 768;
const DEPTH: usize = 12;
const HEADS: usize = 12;
const MLP: usize = 3072;
const LN_EPS: f64 = 1e-6;

struct Block {
    norm1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl Block {
    fn new(vb: VarBuilder) -> candle_core::Result<Self> {
        Ok(Block {
            norm1: candle_nn::layer_norm(DIM, LN_EPS, vb.pp("norm1"))?,
            qkv: candle_nn::linear(DIM, 3 * DIM, vb.pp("attn").pp("qkv"))?,
            proj: candle_nn::linear(DIM, DIM, vb.pp("attn").pp("proj"))?,
            norm2: candle_nn::layer_norm(DIM, LN_EPS, vb.pp("norm2"))?,
            fc1: candle_nn::linear(DIM, MLP, vb.pp("mlp").pp("fc1"))?,
            fc2: candle_nn::linear(MLP, DIM, vb.pp("mlp").pp("fc2"))?,
        })
    }

    fn attention(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let hd = DIM / HEADS;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((b, t, 3, HEADS, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let att = (q.matmul(&k.t()?)? / (hd as f64).sqrt())?;
        let att = candle_nn::ops::softmax(&att, D::Minus1)?;
        let y = att.matmul(&v)?.transpose(1, 2)?.reshape((b, t, DIM))?;
        self.proj.forward(&y)
    }
}

impl Module for Block {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let x = (x + self.attention(&x.apply(&self.norm1)?)?)?;
        let h = self.fc1.forward(&x.apply(&self.norm2)?)?.gelu_erf()?;
        x + self.fc2.forward(&h)?
    }
}

pub(crate) fn vit_base(resolution: usize, vb: VarBuilder) -> Result<Backbone> {
    if resolution % PATCH != 0 {
        return Err(Error::Config(format!(
            "vit_base needs an input resolution divisible by {PATCH}, got {resolution}"
        )));
    }
    let grid = resolution / PATCH;
    let n_tokens = grid * grid + 1;
    let proj = Conv::new(3, DIM, PATCH, PATCH, 0, true, vb.pp("patch_embed").pp("proj"))?;
    let trunc = Init::Randn { mean: 0.0, stdev: 0.02 };
    let cls = vb.get_with_hints((1, 1, DIM), "cls_token", trunc)?;
    let pos = vb.get_with_hints((1, n_tokens, DIM), "pos_embed", trunc)?;

    let mut stages: Vec<(String, Stage)> = Vec::new();
    stages.push((
        "patch_embed".into(),
        Box::new(func_t(move |x, _| {
            let b = x.dim(0)?;
            let patches = proj.forward(x)?.flatten_from(2)?.transpose(1, 2)?;
            let cls = cls.broadcast_as((b, 1, DIM))?;
            Tensor::cat(&[&cls, &patches], 1)?.broadcast_add(&pos)
        })),
    ));
    for i in 0..DEPTH {
        let block = Block::new(vb.pp("blocks").pp(i.to_string()))?;
        stages.push((format!("block{i}"), Box::new(func_t(move |x, _| block.forward(x)))));
    }
    let norm = candle_nn::layer_norm(DIM, LN_EPS, vb.pp("norm"))?;
    // Under class-token pooling the last block's patch outputs never reach the
    // score, so the default Grad-CAM layer is the input to that block.
    let default = format!("block{}", DEPTH - 2);
    Ok(Backbone::new(stages, Pool::ClassToken(norm), DIM, &default, Some((grid, grid))))
}
