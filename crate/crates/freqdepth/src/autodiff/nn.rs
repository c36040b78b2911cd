//! Small neural-net building blocks on top of the tape: biased
//! convolutions and a convolutional gated recurrent cell.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// `conv2d` followed by a per-channel bias.
pub fn conv_bias<'t>(
    input: Tensor<'t>,
    weight: Tensor<'t>,
    bias: Tensor<'t>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<'t>> {
    input.conv2d(weight, stride, padding)?.channel_bias(bias)
}

/// Weights for one convolutional gated recurrent cell. All convolutions are
/// 3x3, stride 1, padding 1, so the spatial extents never change.
#[derive(Clone, Copy)]
pub struct GruWeights<'t> {
    pub update_w: Tensor<'t>,
    pub update_b: Tensor<'t>,
    pub reset_w: Tensor<'t>,
    pub reset_b: Tensor<'t>,
    pub candidate_w: Tensor<'t>,
    pub candidate_b: Tensor<'t>,
}

/// Gated recurrent update
/// `h' = (1 - z) * h + z * q` with
/// `z = sigmoid(conv([h, x]))`, `r = sigmoid(conv([h, x]))`, and the
/// candidate `q = tanh(conv([r * h, x]))`. Output shape equals the hidden
/// shape.
pub fn gru_cell<'t>(
    hidden: Tensor<'t>,
    input: Tensor<'t>,
    w: &GruWeights<'t>,
) -> Result<Tensor<'t>> {
    let hs = hidden.shape();
    let is = input.shape();
    if hs.len() != 4 || is.len() != 4 || hs[0] != is[0] || hs[2] != is[2] || hs[3] != is[3] {
        return Err(Error::ShapeMismatch { lhs: hs, rhs: is });
    }
    let tape = hidden.tape();
    let hx = tape.concat_channels(&[hidden, input])?;
    let z = conv_bias(hx, w.update_w, w.update_b, 1, 1)?.sigmoid();
    let r = conv_bias(hx, w.reset_w, w.reset_b, 1, 1)?.sigmoid();
    let rh = r.mul(hidden)?;
    let rhx = tape.concat_channels(&[rh, input])?;
    let q = conv_bias(rhx, w.candidate_w, w.candidate_b, 1, 1)?.tanh();
    let keep = z.neg().add_scalar(1.0).mul(hidden)?;
    keep.add(z.mul(q)?)
}
