//! Structural removal of units (dense outputs / conv output channels).

use std::collections::BTreeSet;

use super::grads::GradientSet;
use super::layer::Layer;
use super::network::Network;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Keep `keep` along `axis` of parameter `param` of layer `layer`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemovalOp {
    pub layer: usize,
    pub param: usize,
    pub axis: usize,
    pub keep: Vec<usize>,
}

/// Tensor slices that must shrink when `units` of prunable `layer` are removed:
/// the layer's own rows/channels and bias entries, interposed batch-norm
/// entries, and the next parametric layer's input columns/channels.
pub fn removal_plan(net: &Network, layer: usize, units: &BTreeSet<usize>) -> Result<Vec<RemovalOp>> {
    if layer >= net.layers().len() || !net.layers()[layer].is_parametric() {
        return Err(Error::InvalidArgument(format!("layer {layer} has no units")));
    }
    let next = net
        .next_parametric(layer)
        .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} is the output layer")))?;
    let width = net.units(layer);
    if let Some(&bad) = units.iter().find(|&&u| u >= width) {
        return Err(Error::InvalidArgument(format!(
            "unit {bad} out of range for layer {layer} of width {width}"
        )));
    }
    if units.len() >= width {
        return Err(Error::InvalidArgument(format!(
            "refusing to remove all {width} units of layer {layer}"
        )));
    }
    let keep: Vec<usize> = (0..width).filter(|u| !units.contains(u)).collect();
    let mut ops = vec![
        RemovalOp { layer, param: 0, axis: 0, keep: keep.clone() },
        RemovalOp { layer, param: 1, axis: 0, keep: keep.clone() },
    ];
    for j in layer + 1..next {
        if let Layer::BatchNorm(_) = net.layers()[j] {
            ops.push(RemovalOp { layer: j, param: 0, axis: 0, keep: keep.clone() });
            ops.push(RemovalOp { layer: j, param: 1, axis: 0, keep: keep.clone() });
        }
    }
    let next_keep = match &net.layers()[next] {
        Layer::Dense(_) => {
            let shapes = net.output_shapes()?;
            let per_unit: usize = shapes[next - 1].iter().skip(1).product();
            keep.iter()
                .flat_map(|&u| u * per_unit..(u + 1) * per_unit)
                .collect()
        }
        _ => keep.clone(),
    };
    ops.push(RemovalOp { layer: next, param: 0, axis: 1, keep: next_keep });
    Ok(ops)
}

/// Applies a removal plan to parameter-shaped tensors (gradients, optimizer buffers).
pub fn apply_removal(ops: &[RemovalOp], tensors: &mut GradientSet) -> Result<()> {
    for op in ops {
        let t = tensors
            .layers
            .get_mut(op.layer)
            .and_then(|l| l.get_mut(op.param))
            .ok_or_else(|| Error::Shape(format!("no tensor at layer {} param {}", op.layer, op.param)))?;
        *t = t.select_axis(op.axis, &op.keep)?;
    }
    Ok(())
}

fn shrink(t: &mut Tensor, axis: usize, keep: &[usize]) -> Result<()> {
    *t = t.select_axis(axis, keep)?;
    Ok(())
}

impl Network {
    /// Removes `units` of prunable `layer` in place and returns the plan used.
    pub fn remove_units_in_place(
        &mut self,
        layer: usize,
        units: &BTreeSet<usize>,
    ) -> Result<Vec<RemovalOp>> {
        if units.is_empty() {
            return Ok(Vec::new());
        }
        let ops = removal_plan(self, layer, units)?;
        let mut layers = self.layers().to_vec();
        for op in &ops {
            let l = &mut layers[op.layer];
            if let Layer::BatchNorm(b) = l {
                if op.param == 0 {
                    shrink(&mut b.running_mean, 0, &op.keep)?;
                    shrink(&mut b.running_var, 0, &op.keep)?;
                }
            }
            let mut params = l.params_mut();
            shrink(params[op.param], op.axis, &op.keep)?;
        }
        self.replace_layers(layers)?;
        Ok(ops)
    }
}

/// Returns a copy of `net` with `units` of `layer` removed.
pub fn remove_units(net: &Network, layer: usize, units: &BTreeSet<usize>) -> Result<Network> {
    let mut out = net.clone();
    out.remove_units_in_place(layer, units)?;
    Ok(out)
}

/// Parameters a single unit of `layer` owns: incoming weights, bias,
/// batch-norm scale/offset, and outgoing weights into the next layer.
pub fn params_per_unit(net: &Network, layer: usize) -> Result<usize> {
    let one: BTreeSet<usize> = [0].into_iter().collect();
    if net.units(layer) < 2 {
        return Err(Error::InvalidArgument(format!("layer {layer} has fewer than two units")));
    }
    let ops = removal_plan(net, layer, &one)?;
    let params = net.layers();
    Ok(ops
        .iter()
        .map(|op| {
            let t = params[op.layer].params()[op.param];
            let full = t.shape()[op.axis];
            t.len() / full * (full - op.keep.len())
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mlp, Activation, Dense, Mode, NetworkBuilder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn dense_3_4_2_remove_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = mlp(&[3], &[4], 2, Activation::Relu, false, &mut rng).unwrap();
        assert_eq!(net.param_count(), 16 + 10);
        let small = remove_units(&net, 0, &set(&[1])).unwrap();
        match (&small.layers()[0], &small.layers()[2]) {
            (Layer::Dense(a), Layer::Dense(b)) => {
                assert_eq!(a.weight.shape(), &[3, 3]);
                assert_eq!(b.weight.shape(), &[2, 3]);
            }
            _ => panic!("unexpected layers"),
        }
        assert_eq!(net.param_count() - small.param_count(), 6);
        assert_eq!(params_per_unit(&net, 0).unwrap(), 6);
    }

    #[test]
    fn empty_removal_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = mlp(&[3], &[4], 2, Activation::Relu, true, &mut rng).unwrap();
        let same = remove_units(&net, 0, &BTreeSet::new()).unwrap();
        assert_eq!(same, net);
    }

    #[test]
    fn refuses_bad_requests() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = mlp(&[3], &[4], 2, Activation::Relu, false, &mut rng).unwrap();
        assert!(remove_units(&net, 0, &set(&[0, 1, 2, 3])).is_err());
        assert!(remove_units(&net, 0, &set(&[4])).is_err());
        assert!(remove_units(&net, 2, &set(&[0])).is_err(), "output layer");
        assert!(remove_units(&net, 1, &set(&[0])).is_err(), "activation layer");
    }

    #[test]
    fn batch_norm_entries_follow_the_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = mlp(&[3], &[4], 2, Activation::Relu, true, &mut rng).unwrap();
        if let Layer::BatchNorm(b) = &mut net.layers_mut()[1] {
            b.gamma.data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
            b.running_mean.data_mut().copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
        }
        let small = remove_units(&net, 0, &set(&[0, 2])).unwrap();
        let Layer::BatchNorm(b) = &small.layers()[1] else { panic!() };
        assert_eq!(b.gamma.data(), &[2.0, 4.0]);
        assert_eq!(b.running_mean.data(), &[0.2, 0.4]);
        assert_eq!(net.param_count() - small.param_count(), 2 * (3 + 1 + 2 + 2));
    }

    #[test]
    fn conv_into_dense_drops_whole_feature_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = NetworkBuilder::new(&[1, 5, 5])
            .conv2d(3, (3, 3), 1, 0, &mut rng)
            .batch_norm()
            .activation(Activation::Relu)
            .dense(2, &mut rng)
            .build()
            .unwrap();
        let small = remove_units(&net, 0, &set(&[1])).unwrap();
        let (Layer::Dense(before), Layer::Dense(after)) = (&net.layers()[3], &small.layers()[3]) else {
            panic!()
        };
        assert_eq!(before.weight.shape(), &[2, 27]);
        assert_eq!(after.weight.shape(), &[2, 18]);
        assert_eq!(&after.weight.data()[0..9], &before.weight.data()[0..9]);
        assert_eq!(&after.weight.data()[9..18], &before.weight.data()[18..27]);
        // 9 in-weights + bias + gamma + beta + 9 outgoing per output row
        assert_eq!(net.param_count() - small.param_count(), 9 + 1 + 2 + 2 * 9);
        let x = crate::tensor::Tensor::zeros(&[2, 1, 5, 5]);
        assert!(small.forward(&x, Mode::Train).is_ok());
    }

    #[test]
    fn zeroed_unit_removal_keeps_outputs_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = mlp(&[3], &[5, 4], 2, Activation::Relu, false, &mut rng).unwrap();
        if let Layer::Dense(d) = &mut net.layers_mut()[0] {
            d.weight.data_mut()[6..9].copy_from_slice(&[0.0; 3]);
            d.bias.data_mut()[2] = 0.0;
        }
        let x = crate::tensor::Tensor::new(vec![2, 3], vec![0.3, -0.2, 1.0, 2.0, 0.1, -1.0]).unwrap();
        let small = remove_units(&net, 0, &set(&[2])).unwrap();
        assert_eq!(
            net.forward(&x, Mode::Eval).unwrap().0,
            small.forward(&x, Mode::Eval).unwrap().0
        );
        let _ = Dense::init(1, 1, &mut rng);
    }
}
