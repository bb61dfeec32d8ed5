use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

fn same(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(shape_err!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        ));
    }
    Ok(())
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    same(pred, target)?;
    let n = pred.len() as f64;
    let diff = pred.sub(target)?;
    let loss = diff.norm_sq() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

fn per_sample(pred: &Tensor, target: &Tensor) -> Result<Vec<(f64, f64)>> {
    same(pred, target)?;
    let b = pred.shape()[0];
    let inner = pred.len() / b;
    pred.data()
        .chunks_exact(inner)
        .zip(target.data().chunks_exact(inner))
        .enumerate()
        .map(|(i, (p, t))| {
            let err: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
            let norm: f64 = t.iter().map(|v| v * v).sum();
            if norm == 0.0 {
                return Err(Error::Data(format!(
                    "sample {i} has a zero-norm target; relative error undefined"
                )));
            }
            Ok((err.sqrt(), norm.sqrt()))
        })
        .collect()
}

/// Batch mean of `||pred_b - target_b|| / ||target_b||`.
pub fn relative_l2(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let parts = per_sample(pred, target)?;
    Ok(parts.iter().map(|(e, n)| e / n).sum::<f64>() / parts.len() as f64)
}

/// [`relative_l2`] together with its gradient with respect to `pred`.
pub fn relative_l2_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let parts = per_sample(pred, target)?;
    let b = parts.len();
    let inner = pred.len() / b;
    let mut grad = pred.sub(target)?;
    for (chunk, (err, norm)) in grad.data_mut().chunks_exact_mut(inner).zip(&parts) {
        let s = if *err > 0.0 {
            1.0 / (err * norm * b as f64)
        } else {
            0.0
        };
        chunk.iter_mut().for_each(|g| *g *= s);
    }
    let loss = parts.iter().map(|(e, n)| e / n).sum::<f64>() / b as f64;
    Ok((loss, grad))
}
