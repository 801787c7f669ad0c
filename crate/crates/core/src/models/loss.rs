use candle_core::Tensor;

use super::classifier::PROB_EPS;
use crate::error::{Error, Result};
use crate::labels::NUM_LABELS;

/// Mean binary cross-entropy over batch and labels between the clamped
/// logistic of `logits` and `targets` (both B×4, any float dtype).
///
/// With `weights`, each label's column is scaled by its weight before the
/// mean, so uniform weights of 1 give the unweighted loss.
pub fn multilabel_loss(logits: &Tensor, targets: &Tensor, weights: Option<&[f64; NUM_LABELS]>) -> Result<Tensor> {
    if logits.rank() != 2 || logits.dim(1)? != NUM_LABELS {
        return Err(Error::Contract(format!("logits must be Bx{NUM_LABELS}, got {:?}", logits.dims())));
    }
    if logits.dims() != targets.dims() {
        return Err(Error::Contract(format!(
            "targets {:?} do not match logits {:?}",
            targets.dims(),
            logits.dims()
        )));
    }
    if logits.dim(0)? == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    let t = targets.to_dtype(logits.dtype())?;
    let p = candle_nn::ops::sigmoid(logits)?.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let pos = (&t * p.log()?)?;
    let neg = (t.affine(-1.0, 1.0)? * p.affine(-1.0, 1.0)?.log()?)?;
    let mut per = (pos + neg)?.neg()?;
    if let Some(w) = weights {
        if let Some(bad) = w.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Parameter(format!("loss weight {bad} must be positive")));
        }
        let w = Tensor::new(w.as_slice(), logits.device())?
            .to_dtype(logits.dtype())?
            .reshape((1, NUM_LABELS))?;
        per = per.broadcast_mul(&w)?;
    }
    Ok(per.mean_all()?)
}
