//! DCT-based feature downsampling.
//!
//! A `C x H x W` feature map is cut into `R x R` blocks per channel and
//! transformed to the frequency domain, which concentrates each block's
//! information into a few dominant coefficients. Two ways of exploiting
//! that follow:
//!
//! * [`downsample_truncate`] — deterministic: keep the `R^2 / r` lowest
//!   frequencies in subdiagonal order, drop the rest. This is the oracle
//!   variant.
//! * [`downsample_learned`] — differentiable: a grouped 1x1 squeeze over
//!   each channel's `R^2` frequency sub-channels, a 1x1 fusion across
//!   channels, and a 5x5 depthwise convolution.

use crate::autodiff::{nn::conv_bias, Tensor};
use crate::dct::make_basis;
use crate::error::{Error, Result};
use crate::spectrum::subdiagonal_order;

/// Geometry of one downsampling stage.
///
/// `factor` is the spatial reduction `R`; `reduction` is the channel
/// squeeze rate `r` (`R^2` frequency sub-channels become `R^2 / r`);
/// `out_channels` is the fused output width `C'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownsampleConfig {
    pub factor: usize,
    pub reduction: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl DownsampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 || self.reduction == 0 || self.in_channels == 0 {
            return Err(Error::InvalidArgument(
                "downsample config extents must be positive".into(),
            ));
        }
        let rr = self.factor * self.factor;
        if rr % self.reduction != 0 {
            return Err(Error::InvalidArgument(format!(
                "R^2 = {rr} is not divisible by the reduction rate r = {}",
                self.reduction
            )));
        }
        Ok(())
    }

    /// Frequency sub-channels kept per input channel: `R^2 / r`.
    pub fn kept_per_channel(&self) -> usize {
        self.factor * self.factor / self.reduction
    }

    /// Squeezed channel count before fusion: `C * R^2 / r`.
    pub fn squeezed_channels(&self) -> usize {
        self.in_channels * self.kept_per_channel()
    }

    /// The frequency pairs the truncation variant keeps, in retention
    /// order: ascending `u + v`, ties by ascending `u`.
    pub fn kept_frequencies(&self) -> Vec<(usize, usize)> {
        subdiagonal_order(self.factor).into_iter().take(self.kept_per_channel()).collect()
    }
}

/// Deterministic downsampling: per channel, each `R x R` block is
/// transformed and only the `R^2 / r` lowest subdiagonal-order frequencies
/// are retained. Output layout is `[C * R^2 / r, H/R, W/R]`, channel
/// `c * (R^2/r) + q` holding kept frequency `q` of input channel `c`.
pub fn downsample_truncate(
    data: &[f64],
    height: usize,
    width: usize,
    cfg: &DownsampleConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let r = cfg.factor;
    if data.len() != cfg.in_channels * height * width {
        return Err(Error::ShapeMismatch {
            lhs: vec![data.len()],
            rhs: vec![cfg.in_channels, height, width],
        });
    }
    if height % r != 0 || width % r != 0 {
        return Err(Error::InvalidArgument(format!(
            "extents {height}x{width} are not multiples of the downsampling factor {r}"
        )));
    }
    let basis = make_basis(r)?;
    let (hp, wp) = (height / r, width / r);
    let kept = cfg.kept_frequencies();
    let plane = hp * wp;
    let mut out = vec![0.0; cfg.squeezed_channels() * plane];
    let mut patch = vec![0.0; r * r];
    let mut spec = vec![0.0; r * r];
    let mut scratch = vec![0.0; r * r];
    for c in 0..cfg.in_channels {
        let base = c * height * width;
        for ty in 0..hp {
            for tx in 0..wp {
                for row in 0..r {
                    let at = base + (ty * r + row) * width + tx * r;
                    patch[row * r..(row + 1) * r].copy_from_slice(&data[at..at + r]);
                }
                crate::dct::dct2_fast_into(&patch, &mut spec, &mut scratch, &basis);
                for (q, &(u, v)) in kept.iter().enumerate() {
                    out[(c * kept.len() + q) * plane + ty * wp + tx] = spec[u * r + v];
                }
            }
        }
    }
    Ok(out)
}

/// Learnable weights for [`downsample_learned`], already lifted onto a
/// tape.
///
/// * `squeeze_w`: `[C * R^2/r, R^2, 1, 1]` grouped 1x1 weights (groups = C)
/// * `fuse_w`: `[C', C * R^2/r, 1, 1]`
/// * `depthwise_w`: `[C', 1, 5, 5]`
#[derive(Clone, Copy)]
pub struct DownsampleWeights<'t> {
    pub squeeze_w: Tensor<'t>,
    pub squeeze_b: Tensor<'t>,
    pub fuse_w: Tensor<'t>,
    pub fuse_b: Tensor<'t>,
    pub depthwise_w: Tensor<'t>,
    pub depthwise_b: Tensor<'t>,
}

/// Differentiable downsampling: blockwise DCT, grouped 1x1 squeeze
/// (`C * R^2 -> C * R^2/r`, groups = C), 1x1 fusion to `C'`, then a 5x5
/// depthwise convolution. Input is `[N, C, H, W]`; output
/// `[N, C', H/R, W/R]`.
pub fn downsample_learned<'t>(
    input: Tensor<'t>,
    weights: &DownsampleWeights<'t>,
    cfg: &DownsampleConfig,
) -> Result<Tensor<'t>> {
    cfg.validate()?;
    let shape = input.shape();
    if shape.len() != 4 || shape[1] != cfg.in_channels {
        return Err(Error::ShapeMismatch { lhs: shape, rhs: vec![0, cfg.in_channels, 0, 0] });
    }
    let rr = cfg.factor * cfg.factor;
    let expect_squeeze = vec![cfg.squeezed_channels(), rr, 1, 1];
    if weights.squeeze_w.shape() != expect_squeeze {
        return Err(Error::ShapeMismatch { lhs: weights.squeeze_w.shape(), rhs: expect_squeeze });
    }
    let expect_fuse = vec![cfg.out_channels, cfg.squeezed_channels(), 1, 1];
    if weights.fuse_w.shape() != expect_fuse {
        return Err(Error::ShapeMismatch { lhs: weights.fuse_w.shape(), rhs: expect_fuse });
    }
    let expect_dw = vec![cfg.out_channels, 1, 5, 5];
    if weights.depthwise_w.shape() != expect_dw {
        return Err(Error::ShapeMismatch { lhs: weights.depthwise_w.shape(), rhs: expect_dw });
    }
    let freq = input.block_dct(cfg.factor)?;
    let squeezed = freq
        .conv2d_grouped(weights.squeeze_w, 1, 0, cfg.in_channels)?
        .channel_bias(weights.squeeze_b)?;
    let fused = conv_bias(squeezed, weights.fuse_w, weights.fuse_b, 1, 0)?;
    fused
        .conv2d_grouped(weights.depthwise_w, 1, 2, cfg.out_channels)?
        .channel_bias(weights.depthwise_b)
}

/// Weight values under which the learned path reproduces
/// [`downsample_truncate`] exactly: the squeeze selects each kept
/// frequency, fusion is the identity (requires `C' == C * R^2/r`), and the
/// depthwise kernel is a centered impulse. Returned as
/// `(name, shape, data)` triples for lifting onto a tape or into a
/// parameter set.
pub fn truncation_weights(cfg: &DownsampleConfig) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    cfg.validate()?;
    if cfg.out_channels != cfg.squeezed_channels() {
        return Err(Error::InvalidArgument(format!(
            "identity fusion needs C' = C * R^2/r = {}, got {}",
            cfg.squeezed_channels(),
            cfg.out_channels
        )));
    }
    let rr = cfg.factor * cfg.factor;
    let kept = cfg.kept_frequencies();
    let kq = kept.len();
    let sq = cfg.squeezed_channels();
    let mut squeeze = vec![0.0; sq * rr];
    for c in 0..cfg.in_channels {
        for (q, &(u, v)) in kept.iter().enumerate() {
            squeeze[(c * kq + q) * rr + (u * cfg.factor + v)] = 1.0;
        }
    }
    let mut fuse = vec![0.0; sq * sq];
    for i in 0..sq {
        fuse[i * sq + i] = 1.0;
    }
    let mut depthwise = vec![0.0; sq * 25];
    for c in 0..sq {
        depthwise[c * 25 + 12] = 1.0; // center of the 5x5 window
    }
    Ok(vec![
        ("squeeze_w".into(), vec![sq, rr, 1, 1], squeeze),
        ("squeeze_b".into(), vec![sq], vec![0.0; sq]),
        ("fuse_w".into(), vec![sq, sq, 1, 1], fuse),
        ("fuse_b".into(), vec![sq], vec![0.0; sq]),
        ("depthwise_w".into(), vec![sq, 1, 5, 5], depthwise),
        ("depthwise_b".into(), vec![sq], vec![0.0; sq]),
    ])
}
