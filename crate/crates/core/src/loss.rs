use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean squared error over all elements and its gradient with respect to `y`.
pub fn mse_loss(y: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    y.expect_same_shape("mse_loss", target)?;
    let count = y.len() as f64;
    let diff = y.zip_map(target, |a, b| a - b)?;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / count;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "mse_loss".into(),
        });
    }
    Ok((loss, diff.scale(2.0 / count)))
}

/// Mean squared error without the gradient.
pub fn mse(y: &Tensor, target: &Tensor) -> Result<f64> {
    y.expect_same_shape("mse", target)?;
    let sum: f64 = y
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / y.len() as f64)
}

/// Per-batch-item mean squared error.
pub fn mse_per_item(y: &Tensor, target: &Tensor) -> Result<Vec<f64>> {
    y.expect_same_shape("mse_per_item", target)?;
    let item = y.item_len();
    Ok(y.data()
        .chunks(item)
        .zip(target.data().chunks(item))
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / item as f64)
        .collect())
}
