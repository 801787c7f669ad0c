//! ResNet-50 with torchvision parameter names (stride on the 3×3 conv).

use candle_core::{ModuleT, Tensor};
use candle_nn::{func_t, VarBuilder};

use super::backbone::{Backbone, Pool, Stage};
use super::layers::{max_pool_padded, ConvBn};
use crate::error::Result;

const EPS: f64 = 1e-5;
const BLOCKS: [usize; 4] = [3, 4, 6, 3];
const WIDTHS: [usize; 4] = [64, 128, 256, 512];
const EXPANSION: usize = 4;

struct Bottleneck {
    a: ConvBn,
    b: ConvBn,
    c: ConvBn,
    downsample: Option<ConvBn>,
}

impl Bottleneck {
    fn new(c_in: usize, width: usize, stride: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        let c_out = width * EXPANSION;
        let downsample = if stride != 1 || c_in != c_out {
            let d = vb.pp("downsample");
            Some(ConvBn::new(c_in, c_out, 1, stride, EPS, d.pp("0"), d.pp("1"))?)
        } else {
            None
        };
        Ok(Bottleneck {
            a: ConvBn::new(c_in, width, 1, 1, EPS, vb.pp("conv1"), vb.pp("bn1"))?,
            b: ConvBn::new(width, width, 3, stride, EPS, vb.pp("conv2"), vb.pp("bn2"))?,
            c: ConvBn::new(width, c_out, 1, 1, EPS, vb.pp("conv3"), vb.pp("bn3"))?,
            downsample,
        })
    }
}

impl ModuleT for Bottleneck {
    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let y = self.a.forward_t(x, train)?.relu()?;
        let y = self.b.forward_t(&y, train)?.relu()?;
        let y = self.c.forward_t(&y, train)?;
        let shortcut = match &self.downsample {
            Some(d) => d.forward_t(x, train)?,
            None => x.clone(),
        };
        (y + shortcut)?.relu()
    }
}

pub(crate) fn resnet50(vb: VarBuilder) -> Result<Backbone> {
    let mut stages: Vec<(String, Stage)> = Vec::new();
    let stem = ConvBn::new(3, 64, 7, 2, EPS, vb.pp("conv1"), vb.pp("bn1"))?;
    stages.push((
        "stem".into(),
        Box::new(func_t(move |x, train| {
            max_pool_padded(&stem.forward_t(x, train)?.relu()?, 3, 2, 1)
        })),
    ));
    let mut c_in = 64;
    for (i, (&n, &width)) in BLOCKS.iter().zip(&WIDTHS).enumerate() {
        let name = format!("layer{}", i + 1);
        let vb = vb.pp(&name);
        let mut blocks = Vec::with_capacity(n);
        for j in 0..n {
            let stride = if i > 0 && j == 0 { 2 } else { 1 };
            blocks.push(Bottleneck::new(c_in, width, stride, vb.pp(j.to_string()))?);
            c_in = width * EXPANSION;
        }
        stages.push((
            name,
            Box::new(func_t(move |x, train| {
                let mut x = x.clone();
                for b in &blocks {
                    x = b.forward_t(&x, train)?;
                }
                Ok(x)
            })),
        ));
    }
    Ok(Backbone::new(stages, Pool::GlobalAvg, c_in, "layer4", None))
}
