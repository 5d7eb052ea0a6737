use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Batch-mean losses over network outputs of shape `(N, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Softmax followed by negative log-likelihood of integer labels.
    SoftmaxCrossEntropy,
    /// `0.5 * ||output - target||^2` per example.
    HalfSquared,
}

pub enum Target<'a> {
    Labels(&'a [usize]),
    Values(&'a Tensor),
}

impl Loss {
    /// Mean loss over the batch and its gradient with respect to `output`.
    pub fn evaluate(&self, output: &Tensor, target: &Target<'_>) -> Result<(f64, Tensor)> {
        let n = output.rows();
        let k = output.row_len();
        if n == 0 {
            return Err(Error::Precondition("empty batch".into()));
        }
        let inv_n = 1.0 / n as f64;
        match (self, target) {
            (Loss::SoftmaxCrossEntropy, Target::Labels(labels)) => {
                if labels.len() != n {
                    return Err(Error::Shape(format!("{} labels for {n} outputs", labels.len())));
                }
                let mut grad = Tensor::zeros(output.shape());
                let mut total = 0.0;
                for ((row, g), &label) in output
                    .data()
                    .chunks_exact(k)
                    .zip(grad.data_mut().chunks_exact_mut(k))
                    .zip(labels.iter())
                {
                    if label >= k {
                        return Err(Error::InvalidArgument(format!("label {label} >= {k} classes")));
                    }
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    let log_z = max + sum.ln();
                    total += log_z - row[label];
                    for (gi, v) in g.iter_mut().zip(row) {
                        *gi = (v - log_z).exp() * inv_n;
                    }
                    g[label] -= inv_n;
                }
                Ok((total * inv_n, grad))
            }
            (Loss::HalfSquared, Target::Values(values)) => {
                if values.shape() != output.shape() {
                    return Err(Error::Shape(format!(
                        "target {:?} vs output {:?}",
                        values.shape(),
                        output.shape()
                    )));
                }
                let mut grad = Tensor::zeros(output.shape());
                let mut total = 0.0;
                for ((g, o), t) in grad.data_mut().iter_mut().zip(output.data()).zip(values.data()) {
                    let r = o - t;
                    total += 0.5 * r * r;
                    *g = r * inv_n;
                }
                Ok((total * inv_n, grad))
            }
            _ => Err(Error::InvalidArgument("loss and target kinds do not match".into())),
        }
    }
}

/// Index of the largest entry of each row.
pub fn argmax_rows(output: &Tensor) -> Vec<usize> {
    let k = output.row_len();
    output
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
