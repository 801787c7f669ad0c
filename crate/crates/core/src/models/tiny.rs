//! Three conv blocks and a max-pooled head; small enough for CPU training.

use candle_core::ModuleT;
use candle_nn::{func_t, VarBuilder};

use super::backbone::{Backbone, Pool, Stage};
use super::layers::ConvBn;
use crate::error::Result;

const WIDTHS: [usize; 3] = [16, 32, 64];

pub(crate) fn tiny_cnn(vb: VarBuilder) -> Result<Backbone> {
    let mut stages: Vec<(String, Stage)> = Vec::new();
    let mut c_in = 3;
    for (i, &c_out) in WIDTHS.iter().enumerate() {
        let name = format!("block{}", i + 1);
        let vb = vb.pp(&name);
        let a = ConvBn::new(c_in, c_out, 3, 1, 1e-5, vb.pp("conv1"), vb.pp("bn1"))?;
        let b = ConvBn::new(c_out, c_out, 3, 1, 1e-5, vb.pp("conv2"), vb.pp("bn2"))?;
        // The last block keeps its resolution so Grad-CAM has a finer grid.
        let pool = i + 1 < WIDTHS.len();
        let stage = func_t(move |x, train| {
            let y = a.forward_t(x, train)?.relu()?;
            let y = b.forward_t(&y, train)?.relu()?;
            if pool {
                y.max_pool2d(2)
            } else {
                Ok(y)
            }
        });
        stages.push((name, Box::new(stage)));
        c_in = c_out;
    }
    // Artifacts are local, so a single strong response should decide a label.
    Ok(Backbone::new(stages, Pool::GlobalMax, c_in, "block3", None))
}
