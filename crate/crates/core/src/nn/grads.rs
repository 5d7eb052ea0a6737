use super::network::Network;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One tensor per trainable parameter, laid out like [`Network::params`]:
/// `layers[i][j]` pairs with the `j`-th parameter of layer `i`.
///
/// Also used for optimizer buffers, so the pruning code can shrink both with
/// the same removal plan.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Vec<Tensor>>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| l.params().iter().map(|p| Tensor::zeros(p.shape())).collect())
            .collect();
        Self { layers }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flatten()
    }

    /// True when every tensor has the shape of the matching network parameter.
    pub fn matches(&self, net: &Network) -> bool {
        self.layers.len() == net.layers().len()
            && self.layers.iter().zip(net.layers()).all(|(g, l)| {
                let params = l.params();
                g.len() == params.len()
                    && g.iter().zip(params).all(|(a, b)| a.shape() == b.shape())
            })
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient sets have different layer counts".into()));
        }
        for (a, b) in self.iter_mut().zip(other.iter()) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "gradient shapes {:?} and {:?} differ",
                    a.shape(),
                    b.shape()
                )));
            }
            a.data_mut()
                .iter_mut()
                .zip(b.data())
                .for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut()
            .for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= factor));
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            for (j, t) in layer.iter().enumerate() {
                t.ensure_finite(&format!("gradient of layer {i} param {j}"))?;
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, t| m.max(t.max_abs()))
    }

    pub fn scalar_count(&self) -> usize {
        self.iter().map(|t| t.len()).sum()
    }
}
