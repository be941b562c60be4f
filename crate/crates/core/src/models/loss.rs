//! L1 and adversarial losses with their gradients, accumulated in f64.

use super::ModelError;
use crate::nn::Tensor;

/// Floor applied to discriminator probabilities before taking logs.
const PROB_FLOOR: f64 = 1e-12;

fn same_shape(a: &Tensor, b: &Tensor) -> Result<(), ModelError> {
    if a.shape() != b.shape() {
        return Err(ModelError::ShapeMismatch {
            expected: a.shape(),
            actual: b.shape(),
        });
    }
    Ok(())
}

/// Mean absolute error.
pub fn loss_feedforward(pred: &Tensor, target: &Tensor) -> Result<f64, ModelError> {
    same_shape(pred, target)?;
    let sum: f64 = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&p, &t)| (p as f64 - t as f64).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Mean absolute error and its gradient with respect to `pred`
/// (subgradient 0 where `pred == target`).
pub fn loss_feedforward_grad(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), ModelError> {
    let loss = loss_feedforward(pred, target)?;
    let scale = 1.0 / pred.len() as f32;
    let g = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&p, &t)| {
            if p > t {
                scale
            } else if p < t {
                -scale
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss, Tensor::from_vec(pred.c, pred.h, pred.w, g)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLossParts {
    /// Mean binary cross-entropy of the fake scores against the real label.
    pub adversarial: f64,
    pub l1: f64,
    pub total: f64,
}

/// Generator objective split into its terms; `scores_fake` are
/// discriminator probabilities for the generated pair.
pub fn gan_loss_parts(
    pred: &Tensor,
    target: &Tensor,
    scores_fake: &Tensor,
    lambda: f64,
) -> Result<GanLossParts, ModelError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ModelError::InvalidLambda(lambda));
    }
    let l1 = loss_feedforward(pred, target)?;
    let adversarial = scores_fake
        .data
        .iter()
        .map(|&s| -(s as f64).max(PROB_FLOOR).ln())
        .sum::<f64>()
        / scores_fake.len() as f64;
    Ok(GanLossParts {
        adversarial,
        l1,
        total: adversarial + lambda * l1,
    })
}

/// `BCE(scores_fake, real) + lambda * L1(pred, target)`.
pub fn loss_gan(
    pred: &Tensor,
    target: &Tensor,
    scores_fake: &Tensor,
    lambda: f64,
) -> Result<f64, ModelError> {
    Ok(gan_loss_parts(pred, target, scores_fake, lambda)?.total)
}

/// [`loss_gan`] with its gradients with respect to `pred` and `scores_fake`.
pub fn loss_gan_grad(
    pred: &Tensor,
    target: &Tensor,
    scores_fake: &Tensor,
    lambda: f64,
) -> Result<(f64, Tensor, Tensor), ModelError> {
    let parts = gan_loss_parts(pred, target, scores_fake, lambda)?;
    let (_, mut dpred) = loss_feedforward_grad(pred, target)?;
    dpred.data.iter_mut().for_each(|g| *g *= lambda as f32);
    let n = scores_fake.len() as f64;
    let dscores = scores_fake
        .data
        .iter()
        .map(|&s| (-1.0 / ((s as f64).max(PROB_FLOOR) * n)) as f32)
        .collect();
    Ok((
        parts.total,
        dpred,
        Tensor::from_vec(scores_fake.c, scores_fake.h, scores_fake.w, dscores),
    ))
}

/// Mean binary cross-entropy of `sigmoid(logits)` against a constant
/// `label`, and its gradient with respect to the logits. Numerically
/// stable for large |logit|.
pub fn bce_with_logits(logits: &Tensor, label: f32) -> (f64, Tensor) {
    let n = logits.len() as f64;
    let y = label as f64;
    let mut loss = 0.0;
    let g = logits
        .data
        .iter()
        .map(|&z| {
            let z = z as f64;
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            let s = 1.0 / (1.0 + (-z).exp());
            ((s - y) / n) as f32
        })
        .collect();
    (loss / n, Tensor::from_vec(logits.c, logits.h, logits.w, g))
}
