use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Guard added inside both logarithms of the binary cross entropy.
pub const BCE_EPS: f64 = 1e-7;

impl Graph {
    /// Mean binary cross entropy of probabilities `pred` against `target`.
    pub fn bce(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(shape_err("bce", format!("{:?}", self.shape(pred)), target.shape()));
        }
        let n = target.len().max(1) as f64;
        let total: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| -(y * (p + BCE_EPS).ln() + (1.0 - y) * (1.0 - p + BCE_EPS).ln()))
            .sum();
        let value = Tensor::scalar(total / n);
        Ok(self.push(
            value,
            Op::Bce {
                pred,
                target: target.clone(),
            },
            &[pred],
        ))
    }
}

pub(crate) fn bce_backward(pred: &Tensor, target: &Tensor, g: f64) -> Tensor {
    let n = target.len().max(1) as f64;
    pred.zip_map(target, |p, y| {
        -g * (y / (p + BCE_EPS) - (1.0 - y) / (1.0 - p + BCE_EPS)) / n
    })
}
