//! Training losses: the scaled scale-invariant depth loss over every
//! iterative step, the high-frequency sparsity regularizer, and the
//! edge-aware smoothness regularizer, plus their weighted total.
//!
//! All three are built on the tape, so they are differentiable end-to-end.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::spectrum::{CoefficientVolume, DepthMap};

/// Loss constants. `alpha_silog`, `beta_decay`, and `lambda_var` belong to
/// the depth loss; `eps_freq` to the frequency regularizer; `alpha_total`
/// and `beta_total` weight the regularizers in the total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha_silog: f64,
    pub beta_decay: f64,
    pub lambda_var: f64,
    pub eps_freq: f64,
    pub alpha_total: f64,
    pub beta_total: f64,
}

impl Default for LossWeights {
    /// Defaults for dense indoor-style supervision: no smoothness term.
    fn default() -> Self {
        LossWeights {
            alpha_silog: 10.0,
            beta_decay: 0.8,
            lambda_var: 0.85,
            eps_freq: 1.2,
            alpha_total: 2e-3,
            beta_total: 0.0,
        }
    }
}

impl LossWeights {
    /// Sparse outdoor-style profile: both regularizers at 5e-3.
    pub fn outdoor_profile() -> Self {
        LossWeights { alpha_total: 5e-3, beta_total: 5e-3, ..LossWeights::default() }
    }
}

/// How the per-pixel residual `d` of the depth loss is computed.
///
/// `LogDepth` follows the scale-invariant-log lineage
/// (`d = log(pred) - log(gt)`) and requires strictly positive predictions
/// on valid pixels. `Linear` is the literal difference `d = pred - gt`,
/// which tolerates the non-positive values that partial frequency
/// reconstructions can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SilogVariant {
    #[default]
    LogDepth,
    Linear,
}

fn clamp_nonnegative<'t>(x: Tensor<'t>) -> Result<Tensor<'t>> {
    // (x + |x|) / 2: exact zero stays zero, tiny negative round-off is
    // flushed to zero instead of poisoning the square root.
    x.add(x.abs())?.mul_scalar(0.5).sqrt()
}

/// Scaled scale-invariant loss over a sequence of step estimates.
///
/// For step `i` (1-based, `N` steps total) with per-pixel residuals `d`
/// over the `M` valid pixels:
///
/// `L_d = alpha * sum_i beta^(N-i) * sqrt( sum(d^2)/M - lambda * (sum d)^2 / M^2 )`
///
/// Later steps carry larger weights (`beta < 1`), so the final estimate
/// dominates. Each prediction must be a `[1, 1, H, W]` tensor matching the
/// ground-truth extents.
pub fn silog_loss<'t>(
    preds: &[Tensor<'t>],
    gt: &DepthMap,
    w: &LossWeights,
    variant: SilogVariant,
) -> Result<Tensor<'t>> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("depth loss needs at least one prediction".into()));
    }
    let m = gt.valid_count();
    if m == 0 {
        return Err(Error::EmptyValidSet("ground truth has no valid pixels".into()));
    }
    let (h, wd) = (gt.height(), gt.width());
    let n_px = h * wd;
    let tape = preds[0].tape();
    let mask_data: Vec<f64> = gt.valid().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mask = tape.constant(&[1, 1, h, wd], mask_data.clone())?;
    // Ground-truth side of the residual, zero on invalid pixels.
    let gt_term: Vec<f64> = match variant {
        SilogVariant::LogDepth => gt
            .values()
            .iter()
            .zip(gt.valid())
            .map(|(&v, &ok)| if ok { v.ln() } else { 0.0 })
            .collect(),
        SilogVariant::Linear => {
            gt.values().iter().zip(gt.valid()).map(|(&v, &ok)| if ok { v } else { 0.0 }).collect()
        }
    };
    let gt_t = tape.constant(&[1, 1, h, wd], gt_term)?;
    // Replacement value 1.0 on invalid pixels keeps log defined there; the
    // mask removes the contribution afterwards.
    let inv_mask: Vec<f64> = mask_data.iter().map(|&v| 1.0 - v).collect();
    let one_on_invalid = tape.constant(&[1, 1, h, wd], inv_mask)?;

    let count = m as f64;
    let big_n = preds.len();
    let mut total: Option<Tensor<'t>> = None;
    for (idx, pred) in preds.iter().enumerate() {
        if pred.shape() != vec![1, 1, h, wd] {
            return Err(Error::ShapeMismatch { lhs: pred.shape(), rhs: vec![1, 1, h, wd] });
        }
        let d = match variant {
            SilogVariant::LogDepth => {
                let values = pred.value();
                if let Some(bad) = values.iter().zip(gt.valid()).find(|(&v, &ok)| ok && v <= 0.0) {
                    return Err(Error::Domain(format!(
                        "non-positive predicted depth {} on a valid pixel",
                        bad.0
                    )));
                }
                let safe = pred.mul(mask)?.add(one_on_invalid)?;
                safe.ln()?.sub(gt_t)?.mul(mask)?
            }
            SilogVariant::Linear => pred.mul(mask)?.sub(gt_t)?,
        };
        let sum_sq = d.mul(d)?.sum().div_scalar(count);
        let sum_d = d.sum().div_scalar(count);
        let var_term = sum_sq.sub(sum_d.mul(sum_d)?.mul_scalar(w.lambda_var))?;
        let term = clamp_nonnegative(var_term)?;
        let weight = w.beta_decay.powi((big_n - 1 - idx) as i32);
        let weighted = term.mul_scalar(weight);
        total = Some(match total {
            Some(acc) => acc.add(weighted)?,
            None => weighted,
        });
    }
    debug_assert_eq!(n_px, mask_data.len());
    Ok(total.expect("at least one prediction").mul_scalar(w.alpha_silog))
}

/// High-frequency sparsity regularizer over a coefficient volume tensor of
/// shape `[1, S^2, py, px]`:
///
/// `L_f = sum_(u,v) (eps^(u+v) - 1) * |f_(u,v)|`, averaged over patches.
///
/// The DC channel is never penalized (`eps^0 - 1 = 0`), and `|.|` uses the
/// zero subgradient at exact zeros, so sparse coefficients stay sparse.
pub fn freq_reg<'t>(volume: Tensor<'t>, block: usize, w: &LossWeights) -> Result<Tensor<'t>> {
    let shape = volume.shape();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != block * block {
        return Err(Error::ShapeMismatch { lhs: shape, rhs: vec![1, block * block, 0, 0] });
    }
    let (py, px) = (shape[2], shape[3]);
    let plane = py * px;
    let mut weight = vec![0.0; block * block * plane];
    for c in 0..block * block {
        let (u, v) = CoefficientVolume::freq_of(block, c);
        let penalty = w.eps_freq.powi((u + v) as i32) - 1.0;
        weight[c * plane..(c + 1) * plane].iter_mut().for_each(|x| *x = penalty);
    }
    let tape = volume.tape();
    let weight_t = tape.constant(&shape, weight)?;
    Ok(volume.abs().mul(weight_t)?.sum().div_scalar(plane as f64))
}

/// Edge-aware smoothness regularizer: forward differences of the depth
/// estimate, each weighted by `exp(-|image gradient|)` so depth edges that
/// coincide with image edges are not penalized. The image gradient is the
/// mean absolute gradient over image channels; each directional term is
/// averaged over its own difference positions.
pub fn smooth_reg<'t>(
    depth: Tensor<'t>,
    image: &[f64],
    image_channels: usize,
) -> Result<Tensor<'t>> {
    let shape = depth.shape();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != 1 {
        return Err(Error::ShapeMismatch { lhs: shape, rhs: vec![1, 1, 0, 0] });
    }
    let (h, wd) = (shape[2], shape[3]);
    if image.len() != image_channels * h * wd {
        return Err(Error::ShapeMismatch {
            lhs: vec![image.len()],
            rhs: vec![image_channels, h, wd],
        });
    }
    let tape = depth.tape();
    // exp(-mean_c |dI|) along each axis, as constants.
    let mut wx = vec![0.0; h * (wd - 1)];
    for y in 0..h {
        for x in 0..wd - 1 {
            let mut g = 0.0;
            for c in 0..image_channels {
                let base = c * h * wd + y * wd + x;
                g += (image[base + 1] - image[base]).abs();
            }
            wx[y * (wd - 1) + x] = (-(g / image_channels as f64)).exp();
        }
    }
    let mut wy = vec![0.0; (h - 1) * wd];
    for y in 0..h - 1 {
        for x in 0..wd {
            let mut g = 0.0;
            for c in 0..image_channels {
                let base = c * h * wd + y * wd + x;
                g += (image[base + wd] - image[base]).abs();
            }
            wy[y * wd + x] = (-(g / image_channels as f64)).exp();
        }
    }
    let wx_t = tape.constant(&[1, 1, h, wd - 1], wx)?;
    let wy_t = tape.constant(&[1, 1, h - 1, wd], wy)?;
    // Forward differences via fixed [-1, 1] kernels.
    let kx = tape.constant(&[1, 1, 1, 2], vec![-1.0, 1.0])?;
    let ky = tape.constant(&[1, 1, 2, 1], vec![-1.0, 1.0])?;
    let dx = depth.conv2d(kx, 1, 0)?;
    let dy = depth.conv2d(ky, 1, 0)?;
    let term_x = dx.abs().mul(wx_t)?.mean();
    let term_y = dy.abs().mul(wy_t)?.mean();
    term_x.add(term_y)
}

/// Weighted total `L = L_d + alpha_total * L_f + beta_total * L_s`.
pub fn total_loss<'t>(
    depth_loss: Tensor<'t>,
    freq_loss: Tensor<'t>,
    smooth_loss: Tensor<'t>,
    w: &LossWeights,
) -> Result<Tensor<'t>> {
    depth_loss.add(freq_loss.mul_scalar(w.alpha_total))?.add(smooth_loss.mul_scalar(w.beta_total))
}
