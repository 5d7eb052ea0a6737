//! Central finite-difference gradients, an independent check on
//! [`Network::backward`]. Cost is two forward passes per scalar parameter, so
//! keep it to small networks (on the order of 10^4 parameters or fewer).

use super::grads::GradientSet;
use super::loss::{Loss, Target};
use super::network::{Mode, Network};
use crate::error::Result;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

pub fn loss_value(net: &Network, batch: &Tensor, loss: Loss, target: &Target<'_>, mode: Mode) -> Result<f64> {
    let (out, _) = net.forward(batch, mode)?;
    Ok(loss.evaluate(&out, target)?.0)
}

pub fn fd_gradient_oracle(
    net: &Network,
    batch: &Tensor,
    loss: Loss,
    target: &Target<'_>,
    mode: Mode,
) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(net);
    let mut probe = net.clone();
    for li in 0..net.layers().len() {
        for pi in 0..grads.layers[li].len() {
            for k in 0..grads.layers[li][pi].len() {
                let original = net.layers()[li].params()[pi].data()[k];
                probe.layers_mut()[li].params_mut()[pi].data_mut()[k] = original + FD_STEP;
                let plus = loss_value(&probe, batch, loss, target, mode)?;
                probe.layers_mut()[li].params_mut()[pi].data_mut()[k] = original - FD_STEP;
                let minus = loss_value(&probe, batch, loss, target, mode)?;
                probe.layers_mut()[li].params_mut()[pi].data_mut()[k] = original;
                grads.layers[li][pi].data_mut()[k] = (plus - minus) / (2.0 * FD_STEP);
            }
        }
    }
    Ok(grads)
}
