use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Reconstruction loss: squared error summed over every non-batch element,
/// averaged over the batch.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check(pred, target)?;
    let sum: f64 = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.rows().max(1) as f64)
}

/// Gradient of [`mse_loss`] w.r.t. `pred`.
pub fn mse_loss_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check(pred, target)?;
    let scale = 2.0 / pred.rows().max(1) as f64;
    let values = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, t)| scale * (p - t))
        .collect();
    Tensor::new(pred.shape().to_vec(), values)
}

fn check(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.len() != target.len() || pred.rows() != target.rows() {
        return Err(Error::shape("loss", target.shape(), pred.shape()));
    }
    Ok(())
}
