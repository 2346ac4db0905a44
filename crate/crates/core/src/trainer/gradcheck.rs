use serde::Serialize;

use super::backprop::{batch_loss, loss_and_grad, PackedBatch};
use crate::error::Result;
use crate::model::{Model, Weights};
use crate::tasks::Supervised;

#[derive(Debug, Clone, Serialize)]
pub struct TensorError {
    pub name: String,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub max_rel_error: f64,
    pub per_tensor: Vec<TensorError>,
}

/// Compares the manual gradient with central differences for every
/// parameter. A tensor's error is `max|analytic - numeric|` divided by the
/// larger of the two gradients' max-abs (floored at `1e-6` times the
/// largest gradient anywhere, so all-zero tensors do not divide by zero).
pub fn grad_check(model: &Model<f64>, items: &[Supervised], epsilon: f64) -> Result<GradCheckReport> {
    let batch = PackedBatch::new(items);
    let (_, analytic) = loss_and_grad(model, &batch)?;
    let names = Weights::<f64>::tensor_names(model.config().n_layers);
    let mut weights = model.weights().clone();
    let n_tensors = names.len();

    let mut numeric: Vec<Vec<f64>> = Vec::with_capacity(n_tensors);
    for ti in 0..n_tensors {
        let len = weights.tensors()[ti].len();
        let mut grads = Vec::with_capacity(len);
        for k in 0..len {
            let orig = weights.tensors()[ti].as_slice()[k];
            weights.tensors_mut()[ti].as_mut_slice()[k] = orig + epsilon;
            let plus = batch_loss(&Model::new(*model.config(), weights.clone())?, &batch)?;
            weights.tensors_mut()[ti].as_mut_slice()[k] = orig - epsilon;
            let minus = batch_loss(&Model::new(*model.config(), weights.clone())?, &batch)?;
            weights.tensors_mut()[ti].as_mut_slice()[k] = orig;
            grads.push((plus - minus) / (2.0 * epsilon));
        }
        numeric.push(grads);
    }

    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let global = analytic.tensors().iter().map(|t| max_abs(t.as_slice())).fold(0.0, f64::max);
    let floor = (1e-6 * global).max(f64::MIN_POSITIVE);
    let mut per_tensor = Vec::with_capacity(n_tensors);
    for ((a, n), name) in analytic.tensors().iter().zip(&numeric).zip(names) {
        let a = a.as_slice();
        let diff = a.iter().zip(n).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let denom = max_abs(a).max(max_abs(n)).max(floor);
        per_tensor.push(TensorError {
            name,
            rel_error: diff / denom,
        });
    }
    let max_rel_error = per_tensor.iter().map(|t| t.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        epsilon,
        max_rel_error,
        per_tensor,
    })
}
