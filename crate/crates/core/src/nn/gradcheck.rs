//! Central finite-difference check of analytic gradients.

use super::{BinaryModel, ClassWeights};
use crate::error::Result;
use crate::features::FeatureBundle;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-6)`, and zero when both are zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic == 0.0 && numeric == 0.0 {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between the batch-loss gradient and central
/// differences with step `h`, over every parameter.
pub fn gradient_check<M: BinaryModel>(model: &M, batch: &[&FeatureBundle], weights: ClassWeights, h: f64) -> Result<f64> {
    let analytic = model.batch_loss_grad(batch, weights)?.grad;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let original = probe.params()[i];
        probe.params_mut()[i] = original + h;
        let up = probe.batch_loss(batch, weights)?;
        probe.params_mut()[i] = original - h;
        let down = probe.batch_loss(batch, weights)?;
        probe.params_mut()[i] = original;
        worst = worst.max(relative_error(a, (up - down) / (2.0 * h)));
    }
    Ok(worst)
}
