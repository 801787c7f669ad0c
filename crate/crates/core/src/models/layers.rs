//! Building blocks shared by the backbones.

use candle_core::{Module, ModuleT, Result, Tensor, D};
use candle_nn::{BatchNorm, BatchNormConfig, VarBuilder};

/// Keeps every `stride`-th row and column, starting at 0.
fn subsample(x: &Tensor, stride: usize, out_h: usize, out_w: usize) -> Result<Tensor> {
    if stride == 1 {
        return Ok(x.clone());
    }
    let dev = x.device();
    let rows = Tensor::arange_step(0u32, (out_h * stride) as u32, stride as u32, dev)?;
    let cols = Tensor::arange_step(0u32, (out_w * stride) as u32, stride as u32, dev)?;
    x.contiguous()?.index_select(&rows, 2)?.index_select(&cols, 3)
}

fn out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// k×k max pooling with padding, built from shifted views so it has a
/// gradient for any stride. Inputs must be non-negative (post-ReLU) because
/// the border is zero-padded.
pub fn max_pool_padded(x: &Tensor, k: usize, stride: usize, pad: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let xp = x.pad_with_zeros(2, pad, pad)?.pad_with_zeros(3, pad, pad)?;
    let (fh, fw) = (h + 2 * pad - k + 1, w + 2 * pad - k + 1);
    let mut acc: Option<Tensor> = None;
    for dy in 0..k {
        for dx in 0..k {
            let view = xp.narrow(2, dy, fh)?.narrow(3, dx, fw)?;
            acc = Some(match acc {
                None => view,
                Some(a) => a.maximum(&view)?,
            });
        }
    }
    let full = acc.expect("kernel size is positive");
    subsample(&full, stride, out_size(h, k, stride, pad), out_size(w, k, stride, pad))
}

/// Depthwise convolution (one k×k filter per channel, no bias).
#[derive(Clone, Debug)]
pub struct DepthwiseConv {
    weight: Tensor,
    k: usize,
    stride: usize,
    pad: usize,
}

impl DepthwiseConv {
    pub fn new(channels: usize, k: usize, stride: usize, vb: VarBuilder) -> Result<Self> {
        let weight = vb.get_with_hints((channels, 1, k, k), "weight", candle_nn::init::DEFAULT_KAIMING_NORMAL)?;
        Ok(DepthwiseConv {
            weight,
            k,
            stride,
            pad: (k - 1) / 2,
        })
    }
}

impl Module for DepthwiseConv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let (k, pad) = (self.k, self.pad);
        let xp = x.pad_with_zeros(2, pad, pad)?.pad_with_zeros(3, pad, pad)?;
        let (fh, fw) = (h + 2 * pad - k + 1, w + 2 * pad - k + 1);
        let kernel = self.weight.reshape((c, k * k))?;
        let mut acc: Option<Tensor> = None;
        for dy in 0..k {
            for dx in 0..k {
                let tap = kernel.narrow(1, dy * k + dx, 1)?.reshape((1, c, 1, 1))?;
                let term = xp.narrow(2, dy, fh)?.narrow(3, dx, fw)?.broadcast_mul(&tap)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => (a + term)?,
                });
            }
        }
        let full = acc.expect("kernel size is positive");
        subsample(
            &full,
            self.stride,
            out_size(h, k, self.stride, pad),
            out_size(w, k, self.stride, pad),
        )
    }
}

/// Dense 2-D convolution written as matrix products, whose backward pass is
/// matrix products too. Parameters are laid out as in `candle_nn::Conv2d`
/// (`weight` C_out×C_in×k×k, optional `bias`).
#[derive(Clone, Debug)]
pub struct Conv {
    weight: Tensor,
    bias: Option<Tensor>,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Conv {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, bias: bool, vb: VarBuilder) -> Result<Self> {
        let weight = vb.get_with_hints((c_out, c_in, k, k), "weight", candle_nn::init::DEFAULT_KAIMING_NORMAL)?;
        let bias = if bias {
            let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
            Some(vb.get_with_hints(c_out, "bias", candle_nn::Init::Uniform { lo: -bound, up: bound })?)
        } else {
            None
        };
        Ok(Conv {
            weight,
            bias,
            k,
            stride,
            pad,
        })
    }

    /// B×(C·k·k)×L patch matrix, channel-major then kernel row, column.
    fn patches(&self, x: &Tensor) -> Result<(Tensor, usize, usize)> {
        let (b, c, h, w) = x.dims4()?;
        let (k, s, pad) = (self.k, self.stride, self.pad);
        let (oh, ow) = (out_size(h, k, s, pad), out_size(w, k, s, pad));
        if k == 1 && pad == 0 {
            let x = subsample(x, s, oh, ow)?;
            return Ok((x.reshape((b, c, oh * ow))?, oh, ow));
        }
        if k == s && pad == 0 && h % k == 0 && w % k == 0 {
            let cols = x
                .reshape((b, c, oh, k, ow, k))?
                .permute((0, 1, 3, 5, 2, 4))?
                .reshape((b, c * k * k, oh * ow))?;
            return Ok((cols, oh, ow));
        }
        let xp = x.pad_with_zeros(2, pad, pad)?.pad_with_zeros(3, pad, pad)?;
        let (fh, fw) = ((oh - 1) * s + 1, (ow - 1) * s + 1);
        let mut views = Vec::with_capacity(k * k);
        for dy in 0..k {
            for dx in 0..k {
                let v = xp.narrow(2, dy, fh)?.narrow(3, dx, fw)?;
                views.push(subsample(&v, s, oh, ow)?);
            }
        }
        Ok((Tensor::stack(&views, 2)?.reshape((b, c * k * k, oh * ow))?, oh, ow))
    }
}

impl Module for Conv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let b = x.dim(0)?;
        let c_out = self.weight.dim(0)?;
        let (cols, oh, ow) = self.patches(x)?;
        let w = self.weight.reshape((c_out, ()))?;
        let y = w.broadcast_matmul(&cols)?.reshape((b, c_out, oh, ow))?;
        match &self.bias {
            Some(bias) => y.broadcast_add(&bias.reshape((1, c_out, 1, 1))?),
            None => Ok(y),
        }
    }
}

/// Convolution (no bias, padding `(k-1)/2`) followed by batch normalization.
#[derive(Clone, Debug)]
pub struct ConvBn {
    conv: Conv,
    bn: BatchNorm,
}

impl ConvBn {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        bn_eps: f64,
        conv_vb: VarBuilder,
        bn_vb: VarBuilder,
    ) -> Result<Self> {
        Ok(ConvBn {
            conv: Conv::new(c_in, c_out, k, stride, (k - 1) / 2, false, conv_vb)?,
            bn: candle_nn::batch_norm(c_out, BatchNormConfig::from(bn_eps), bn_vb)?,
        })
    }
}

impl ModuleT for ConvBn {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.conv.forward(x)?.apply_t(&self.bn, train)
    }
}

/// Mean over the two spatial axes of a B×C×H×W tensor.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    x.mean(D::Minus1)?.mean(D::Minus1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn ramp(shape: (usize, usize, usize, usize)) -> Tensor {
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        let v: Vec<f32> = (0..n).map(|i| ((i * 37) % 17) as f32).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn max_pool_matches_direct_loop() {
        let x = ramp((1, 2, 7, 6));
        let y = max_pool_padded(&x, 3, 2, 1).unwrap();
        assert_eq!(y.dims4().unwrap(), (1, 2, 4, 3));
        let xs: Vec<f32> = x.flatten_all().unwrap().to_vec1().unwrap();
        let ys: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        let at = |c: usize, i: i64, j: i64| -> f32 {
            if i < 0 || j < 0 || i >= 7 || j >= 6 {
                0.0
            } else {
                xs[c * 42 + i as usize * 6 + j as usize]
            }
        };
        for c in 0..2 {
            for oy in 0..4 {
                for ox in 0..3 {
                    let mut m = f32::MIN;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            m = m.max(at(c, oy as i64 * 2 - 1 + dy, ox as i64 * 2 - 1 + dx));
                        }
                    }
                    assert_eq!(ys[c * 12 + oy * 3 + ox], m);
                }
            }
        }
    }

    #[test]
    fn depthwise_matches_grouped_conv() {
        let store = super::super::params::ParamStore::new(1);
        let dw = DepthwiseConv::new(3, 5, 2, store.var_builder().pp("dw")).unwrap();
        let x = ramp((2, 3, 9, 8));
        let ours = dw.forward(&x).unwrap();
        let reference = x.conv2d(&dw.weight, 2, 2, 1, 3).unwrap();
        assert_eq!(ours.dims(), reference.dims());
        let diff = (ours - reference).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn strided_ops_have_gradients() {
        let x = Var::from_tensor(&ramp((1, 2, 6, 6))).unwrap();
        let y = max_pool_padded(x.as_tensor(), 3, 2, 1).unwrap().sum_all().unwrap();
        let g = y.backward().unwrap();
        let gx = g.get(x.as_tensor()).unwrap();
        assert!(gx.sum_all().unwrap().to_scalar::<f32>().unwrap() > 0.0);
        assert_eq!(gx.dtype(), DType::F32);
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
        assert_eq!(a.dims(), b.dims());
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap()
    }

    #[test]
    fn conv_matches_candle_conv_and_its_gradients() {
        // (c_in, c_out, k, stride, pad, bias, h, w); strided cases tile the padded
        // input exactly because candle's conv2d backward mis-sizes the rest.
        for (c_in, c_out, k, s, pad, bias, h, w) in [
            (3, 4, 3, 1, 1, false, 7, 6),
            (2, 5, 3, 2, 1, true, 9, 7),
            (3, 2, 7, 2, 3, false, 11, 9),
            (4, 3, 1, 2, 0, true, 7, 5),
            (3, 6, 4, 4, 0, true, 8, 12),
        ] {
            let store = super::super::params::ParamStore::new(3);
            let conv = Conv::new(c_in, c_out, k, s, pad, bias, store.var_builder().pp("c")).unwrap();
            let x = Var::from_tensor(&(ramp((2, c_in, h, w)) / 17.0).unwrap()).unwrap();
            let ours = conv.forward(x.as_tensor()).unwrap();
            let mut reference = x.as_tensor().conv2d(&conv.weight, pad, s, 1, 1).unwrap();
            if let Some(b) = &conv.bias {
                reference = reference.broadcast_add(&b.reshape((1, c_out, 1, 1)).unwrap()).unwrap();
            }
            assert!(max_diff(&ours, &reference) < 1e-4, "forward k={k} s={s}");
            let probe = ramp(ours.dims4().unwrap());
            let g1 = (ours * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            let g2 = (reference * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            for t in [x.as_tensor(), &conv.weight] {
                let (a, b) = (g1.get(t).unwrap(), g2.get(t).unwrap());
                let scale = b.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap().max(1.0);
                assert!(max_diff(a, b) / scale < 1e-4, "gradient k={k} s={s}");
            }
        }
    }
}
