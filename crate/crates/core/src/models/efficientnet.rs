//! EfficientNet-B3/B4 with torchvision parameter names.

use candle_core::{Module, ModuleT, Tensor};
use candle_nn::{func_t, VarBuilder};

use super::backbone::{Backbone, Pool, Stage};
use super::layers::{global_avg_pool, Conv, ConvBn, DepthwiseConv};
use crate::error::Result;

const EPS: f64 = 1e-5;

/// (expand ratio, kernel, stride, input channels, output channels, repeats)
/// of the B0 baseline, scaled per variant.
const BASE: [(usize, usize, usize, usize, usize, usize); 7] = [
    (1, 3, 1, 32, 16, 1),
    (6, 3, 2, 16, 24, 2),
    (6, 5, 2, 24, 40, 2),
    (6, 3, 2, 40, 80, 3),
    (6, 5, 1, 80, 112, 3),
    (6, 5, 2, 112, 192, 4),
    (6, 3, 1, 192, 320, 1),
];

#[derive(Clone, Copy, Debug)]
pub(crate) struct Scaling {
    pub width: f64,
    pub depth: f64,
}

pub(crate) const B3: Scaling = Scaling { width: 1.2, depth: 1.4 };
pub(crate) const B4: Scaling = Scaling { width: 1.4, depth: 1.8 };

pub(crate) fn round_filters(channels: usize, width: f64) -> usize {
    let v = channels as f64 * width;
    let mut r = (((v + 4.0) as usize) / 8 * 8).max(8);
    if (r as f64) < 0.9 * v {
        r += 8;
    }
    r
}

pub(crate) fn round_repeats(repeats: usize, depth: f64) -> usize {
    (repeats as f64 * depth).ceil() as usize
}

struct SqueezeExcite {
    fc1: Conv,
    fc2: Conv,
}

impl Module for SqueezeExcite {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, c, _, _) = x.dims4()?;
        let s = global_avg_pool(x)?.reshape((b, c, 1, 1))?;
        let s = self.fc1.forward(&s)?.silu()?;
        let gate = candle_nn::ops::sigmoid(&self.fc2.forward(&s)?)?;
        x.broadcast_mul(&gate)
    }
}

struct MbConv {
    expand: Option<ConvBn>,
    depthwise: DepthwiseConv,
    dw_bn: candle_nn::BatchNorm,
    se: SqueezeExcite,
    project: ConvBn,
    residual: bool,
}

impl MbConv {
    fn new(expand: usize, k: usize, stride: usize, c_in: usize, c_out: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        let hidden = c_in * expand;
        let vb = vb.pp("block");
        let mut idx = 0;
        let mut next = || {
            let p = vb.pp(idx.to_string());
            idx += 1;
            p
        };
        let expand = if expand != 1 {
            let p = next();
            Some(ConvBn::new(c_in, hidden, 1, 1, EPS, p.pp("0"), p.pp("1"))?)
        } else {
            None
        };
        let p = next();
        let depthwise = DepthwiseConv::new(hidden, k, stride, p.pp("0"))?;
        let dw_bn = candle_nn::batch_norm(hidden, EPS, p.pp("1"))?;
        let p = next();
        let squeeze = (c_in / 4).max(1);
        let se = SqueezeExcite {
            fc1: Conv::new(hidden, squeeze, 1, 1, 0, true, p.pp("fc1"))?,
            fc2: Conv::new(squeeze, hidden, 1, 1, 0, true, p.pp("fc2"))?,
        };
        let p = next();
        let project = ConvBn::new(hidden, c_out, 1, 1, EPS, p.pp("0"), p.pp("1"))?;
        Ok(MbConv {
            expand,
            depthwise,
            dw_bn,
            se,
            project,
            residual: stride == 1 && c_in == c_out,
        })
    }
}

impl ModuleT for MbConv {
    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let mut y = x.clone();
        if let Some(e) = &self.expand {
            y = e.forward_t(&y, train)?.silu()?;
        }
        let y = self.depthwise.forward(&y)?.apply_t(&self.dw_bn, train)?.silu()?;
        let y = self.se.forward(&y)?;
        let y = self.project.forward_t(&y, train)?;
        if self.residual {
            y + x
        } else {
            Ok(y)
        }
    }
}

pub(crate) fn efficientnet(scaling: Scaling, vb: VarBuilder) -> Result<Backbone> {
    let vb = vb.pp("features");
    let mut stages: Vec<(String, Stage)> = Vec::new();
    let stem_out = round_filters(32, scaling.width);
    let stem = ConvBn::new(3, stem_out, 3, 2, EPS, vb.pp("0").pp("0"), vb.pp("0").pp("1"))?;
    stages.push((
        "stem".into(),
        Box::new(func_t(move |x, train| stem.forward_t(x, train)?.silu())),
    ));

    let mut c_in = stem_out;
    for (s, &(expand, k, stride, _, out, repeats)) in BASE.iter().enumerate() {
        let c_out = round_filters(out, scaling.width);
        let vb = vb.pp((s + 1).to_string());
        let blocks = (0..round_repeats(repeats, scaling.depth))
            .map(|j| {
                let (bin, bstride) = if j == 0 { (c_in, stride) } else { (c_out, 1) };
                MbConv::new(expand, k, bstride, bin, c_out, vb.pp(j.to_string()))
            })
            .collect::<candle_core::Result<Vec<_>>>()?;
        stages.push((
            format!("stage{}", s + 1),
            Box::new(func_t(move |x, train| {
                let mut x = x.clone();
                for b in &blocks {
                    x = b.forward_t(&x, train)?;
                }
                Ok(x)
            })),
        ));
        c_in = c_out;
    }

    let head_out = 4 * c_in;
    let head = ConvBn::new(c_in, head_out, 1, 1, EPS, vb.pp("8").pp("0"), vb.pp("8").pp("1"))?;
    stages.push((
        "head_conv".into(),
        Box::new(func_t(move |x, train| head.forward_t(x, train)?.silu())),
    ));
    Ok(Backbone::new(stages, Pool::GlobalAvg, head_out, "head_conv", None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_widths_match_published_variants() {
        let widths = |s: Scaling| -> Vec<usize> { BASE.iter().map(|b| round_filters(b.4, s.width)).collect() };
        assert_eq!(round_filters(32, B3.width), 40);
        assert_eq!(widths(B3), vec![24, 32, 48, 96, 136, 232, 384]);
        assert_eq!(round_filters(32, B4.width), 48);
        assert_eq!(widths(B4), vec![24, 32, 56, 112, 160, 272, 448]);
        let depths = |s: Scaling| -> Vec<usize> { BASE.iter().map(|b| round_repeats(b.5, s.depth)).collect() };
        assert_eq!(depths(B3), vec![2, 3, 3, 5, 5, 6, 2]);
        assert_eq!(depths(B4), vec![2, 4, 4, 6, 6, 8, 2]);
    }
}
