use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{NoiseMode, Regularizer};
use crate::error::{Error, Result};
use crate::nn::{GradientSet, Layer, Network};

/// Live flags per parametric layer, in [`Network::parametric_layers`] order
/// (the prunable layers followed by the output layer).
pub type LiveMask = [Vec<bool>];

/// Gradient of the regularizer at strength `lambda`. Batch-norm offsets are
/// never regularized; the `*All` variants also cover dense/conv weights but
/// not biases.
pub fn reg_gradient(net: &Network, lambda: f64, regularizer: Regularizer) -> Result<GradientSet> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be >= 0")));
    }
    let mut grads = GradientSet::zeros_like(net);
    if lambda == 0.0 {
        return Ok(grads);
    }
    let rule = |w: f64| match regularizer {
        Regularizer::LassoScale | Regularizer::LassoAll => {
            if w > 0.0 {
                lambda
            } else if w < 0.0 {
                -lambda
            } else {
                0.0
            }
        }
        Regularizer::L2Scale | Regularizer::L2All => 2.0 * lambda * w,
    };
    let all = matches!(regularizer, Regularizer::LassoAll | Regularizer::L2All);
    for (layer, g) in net.layers().iter().zip(grads.layers.iter_mut()) {
        let target = match layer {
            Layer::BatchNorm(b) => Some(&b.gamma),
            Layer::Dense(d) if all => Some(&d.weight),
            Layer::Conv2d(c) if all => Some(&c.weight),
            _ => None,
        };
        if let Some(w) = target {
            g[0].data_mut().iter_mut().zip(w.data()).for_each(|(g, &w)| *g = rule(w));
        }
    }
    Ok(grads)
}

/// For every layer, the parametric position whose unit mask governs its
/// parameters: the parametric layer itself and any batch norm before the next
/// parametric layer. Layers ahead of the first parametric layer count as live.
fn mask_owner(net: &Network) -> Vec<Option<usize>> {
    let mut owner = vec![None; net.layers().len()];
    for (pos, layer) in net.parametric_layers().into_iter().enumerate() {
        let end = net.next_parametric(layer).unwrap_or(net.layers().len());
        owner[layer..end].iter_mut().for_each(|o| *o = Some(pos));
    }
    owner
}

/// Adds i.i.d. `N(0, sigma2)` noise in place. In asymmetric mode only the
/// parameter slices of live units are touched: incoming weights, bias, and
/// the unit's batch-norm scale and offset.
pub fn inject_noise<R: Rng + ?Sized>(
    net: &mut Network,
    live: &LiveMask,
    sigma2: f64,
    mode: NoiseMode,
    rng: &mut R,
) -> Result<()> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise variance {sigma2} must be >= 0")));
    }
    if sigma2 == 0.0 || mode == NoiseMode::Off {
        return Ok(());
    }
    let owner = mask_owner(net);
    if mode == NoiseMode::Asymmetric {
        let parametric = net.parametric_layers();
        if live.len() != parametric.len() || live.iter().zip(&parametric).any(|(m, &l)| m.len() != net.units(l)) {
            return Err(Error::Shape("live mask does not match the parametric layers".into()));
        }
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).expect("finite std");
    for (li, layer) in net.layers_mut().iter_mut().enumerate() {
        let mask = match (mode, owner[li]) {
            (NoiseMode::Asymmetric, Some(pos)) => Some(&live[pos]),
            _ => None,
        };
        for p in layer.params_mut() {
            let units = p.shape()[0];
            let per_unit = p.len() / units.max(1);
            for (u, slice) in p.data_mut().chunks_mut(per_unit.max(1)).enumerate() {
                if mask.is_some_and(|m| !m[u]) {
                    continue;
                }
                slice.iter_mut().for_each(|w| *w += normal.sample(rng));
            }
        }
    }
    Ok(())
}
