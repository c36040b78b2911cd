//! Desk-scale progressive prediction head.
//!
//! The model predicts per-patch DCT coefficients of a depth map one
//! schedule step at a time. Each step encodes the previous spatial estimate
//! (three strided convolutions) and the previously predicted coefficients
//! (a shared per-chunk conv stack pooled by cross-attention against a
//! learned aggregation token), feeds both into a convolutional gated
//! recurrent cell, and projects the hidden state to a masked coefficient
//! correction. The correction accumulates; the inverse block transform of
//! the running spectrum is the step's depth estimate.
//!
//! The initial hidden state comes from a small image encoder whose
//! quarter-resolution features are brought to the working resolution with
//! the DCT-based downsampler and concatenated with the final encoder
//! features.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::nn::{conv_bias, gru_cell, GruWeights};
use crate::autodiff::optim::ParamSet;
use crate::autodiff::{Tape, Tensor};
use crate::downsample::{downsample_learned, DownsampleConfig, DownsampleWeights};
use crate::error::{Error, Result};
use crate::spectrum::{DepthMap, GroupSchedule};

/// Architecture hyperparameters. The image-encoder widths are fixed at
/// 16/32/32; the remaining widths are free and chosen for a sub-300k
/// parameter budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PphConfig {
    pub block: usize,
    pub image_widths: [usize; 3],
    pub spatial_widths: [usize; 3],
    pub freq_widths: [usize; 3],
    /// Channel reduction rate of the feature downsampler (factor is 2).
    pub pff_reduction: usize,
    /// Output width of the feature downsampler.
    pub pff_out: usize,
    pub head_width: usize,
    /// Constant scale on the coefficient head output. Depth-map DC
    /// coefficients are O(block * depth), far above unit scale, so the
    /// head works in scaled units.
    pub output_gain: f64,
}

impl Default for PphConfig {
    fn default() -> Self {
        PphConfig {
            block: 8,
            image_widths: [16, 32, 32],
            spatial_widths: [8, 16, 16],
            freq_widths: [8, 16, 16],
            pff_reduction: 4,
            pff_out: 8,
            head_width: 32,
            output_gain: 8.0,
        }
    }
}

impl PphConfig {
    /// Tiny configuration for whole-graph finite-difference checks.
    pub fn reduced() -> Self {
        PphConfig {
            block: 8,
            image_widths: [2, 3, 3],
            spatial_widths: [2, 2, 2],
            freq_widths: [2, 2, 2],
            pff_reduction: 4,
            pff_out: 2,
            head_width: 3,
            output_gain: 2.0,
        }
    }

    /// GRU hidden width: final image features plus downsampled features.
    pub fn hidden_width(&self) -> usize {
        self.image_widths[2] + self.pff_out
    }

    /// GRU input width: spatial plus frequency encodings.
    pub fn input_width(&self) -> usize {
        self.spatial_widths[2] + self.freq_widths[2]
    }

    fn pff_config(&self) -> DownsampleConfig {
        DownsampleConfig {
            factor: 2,
            reduction: self.pff_reduction,
            in_channels: self.image_widths[1],
            out_channels: self.pff_out,
        }
    }
}

/// The model: a config plus its named parameters.
#[derive(Debug, Clone)]
pub struct PphModel {
    pub cfg: PphConfig,
    pub params: ParamSet,
}

/// Per-step tape outputs of one forward pass.
pub struct PphForward<'t> {
    /// Parameter leaves in `ParamSet` order (empty for non-trainable runs).
    pub leaves: Vec<Tensor<'t>>,
    /// One full-resolution depth estimate per schedule step.
    pub step_depths: Vec<Tensor<'t>>,
    /// The cumulative coefficient volume after each step
    /// (`[1, S^2, H/S, W/S]`).
    pub step_volumes: Vec<Tensor<'t>>,
}

/// Name-indexed view of the lifted parameter tensors.
struct TensorMap<'a, 't> {
    set: &'a ParamSet,
    tensors: Vec<Tensor<'t>>,
}

impl<'a, 't> TensorMap<'a, 't> {
    fn get(&self, name: &str) -> Tensor<'t> {
        let idx =
            self.set.index_of(name).unwrap_or_else(|| panic!("parameter {name} missing from set"));
        self.tensors[idx]
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on uniform draws; keeps the dependency surface small and
    // the draw order fixed.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl PphModel {
    /// Seeded initialization. Convolution weights are He-scaled normals,
    /// biases zero, and the final coefficient projection starts at exactly
    /// zero so a fresh model predicts the all-zero spectrum (stable cold
    /// start).
    pub fn init(cfg: PphConfig, seed: u64) -> Result<Self> {
        Self::init_with(cfg, seed, true)
    }

    /// As [`PphModel::init`], optionally skipping the zero head (useful
    /// for gradient checks, where a zero head hides half the graph).
    pub fn init_with(cfg: PphConfig, seed: u64, zero_head: bool) -> Result<Self> {
        if cfg.block == 0 {
            return Err(Error::InvalidArgument("block size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let conv = |params: &mut ParamSet,
                    rng: &mut ChaCha8Rng,
                    name: &str,
                    cout: usize,
                    cin: usize,
                    k: usize|
         -> Result<()> {
            let fan_in = (cin * k * k) as f64;
            let std = (2.0 / fan_in).sqrt();
            let w: Vec<f64> = (0..cout * cin * k * k).map(|_| normal(rng) * std).collect();
            params.push(&format!("{name}.w"), &[cout, cin, k, k], w)?;
            params.push(&format!("{name}.b"), &[cout], vec![0.0; cout])?;
            Ok(())
        };

        let [i1, i2, i3] = cfg.image_widths;
        conv(&mut params, &mut rng, "img.conv1", i1, 1, 3)?;
        conv(&mut params, &mut rng, "img.conv2", i2, i1, 3)?;
        conv(&mut params, &mut rng, "img.conv3", i3, i2, 3)?;

        let pff = cfg.pff_config();
        pff.validate()?;
        let sq = pff.squeezed_channels();
        let rr = pff.factor * pff.factor;
        {
            let std = (2.0 / rr as f64).sqrt();
            let w: Vec<f64> = (0..sq * rr).map(|_| normal(&mut rng) * std).collect();
            params.push("pff.squeeze.w", &[sq, rr, 1, 1], w)?;
            params.push("pff.squeeze.b", &[sq], vec![0.0; sq])?;
        }
        conv(&mut params, &mut rng, "pff.fuse", cfg.pff_out, sq, 1)?;
        {
            let std = (2.0 / 25.0f64).sqrt();
            let w: Vec<f64> = (0..cfg.pff_out * 25).map(|_| normal(&mut rng) * std).collect();
            params.push("pff.depthwise.w", &[cfg.pff_out, 1, 5, 5], w)?;
            params.push("pff.depthwise.b", &[cfg.pff_out], vec![0.0; cfg.pff_out])?;
        }

        let [s1, s2, s3] = cfg.spatial_widths;
        conv(&mut params, &mut rng, "es.conv1", s1, 1, 3)?;
        conv(&mut params, &mut rng, "es.conv2", s2, s1, 3)?;
        conv(&mut params, &mut rng, "es.conv3", s3, s2, 3)?;

        let [f1, f2, f3] = cfg.freq_widths;
        conv(&mut params, &mut rng, "ef.conv1", f1, 1, 3)?;
        conv(&mut params, &mut rng, "ef.conv2", f2, f1, 3)?;
        conv(&mut params, &mut rng, "ef.conv3", f3, f2, 3)?;
        {
            let token: Vec<f64> = (0..f3).map(|_| normal(&mut rng) * 0.5).collect();
            params.push("ef.token", &[f3], token)?;
            let std = (1.0 / f3 as f64).sqrt();
            let q: Vec<f64> = (0..f3 * f3).map(|_| normal(&mut rng) * std).collect();
            params.push("ef.query.w", &[f3, f3], q)?;
        }
        conv(&mut params, &mut rng, "ef.key", f3, f3, 1)?;
        conv(&mut params, &mut rng, "ef.value", f3, f3, 1)?;
        conv(&mut params, &mut rng, "ef.out", f3, f3, 1)?;

        let hidden = cfg.hidden_width();
        let gru_in = hidden + cfg.input_width();
        conv(&mut params, &mut rng, "gru.update", hidden, gru_in, 3)?;
        conv(&mut params, &mut rng, "gru.reset", hidden, gru_in, 3)?;
        conv(&mut params, &mut rng, "gru.candidate", hidden, gru_in, 3)?;

        conv(&mut params, &mut rng, "head.conv1", cfg.head_width, hidden, 3)?;
        let out_ch = cfg.block * cfg.block;
        if zero_head {
            params.push(
                "head.conv2.w",
                &[out_ch, cfg.head_width, 1, 1],
                vec![0.0; out_ch * cfg.head_width],
            )?;
            params.push("head.conv2.b", &[out_ch], vec![0.0; out_ch])?;
        } else {
            let std = (1.0 / cfg.head_width as f64).sqrt();
            let w: Vec<f64> =
                (0..out_ch * cfg.head_width).map(|_| normal(&mut rng) * std).collect();
            params.push("head.conv2.w", &[out_ch, cfg.head_width, 1, 1], w)?;
            let b: Vec<f64> = (0..out_ch).map(|_| normal(&mut rng) * 0.1).collect();
            params.push("head.conv2.b", &[out_ch], b)?;
        }
        Ok(PphModel { cfg, params })
    }

    fn lift<'a, 't>(&'a self, tape: &'t Tape, trainable: bool) -> Result<TensorMap<'a, 't>> {
        let tensors =
            if trainable { self.params.leaves(tape)? } else { self.params.constants(tape)? };
        Ok(TensorMap { set: &self.params, tensors })
    }

    /// Spatial encoder: three stride-2 convolutions with swish, taking the
    /// previous full-resolution depth estimate to the working resolution.
    fn spatial_encode<'t>(&self, depth: Tensor<'t>, t: &TensorMap<'_, 't>) -> Result<Tensor<'t>> {
        let e1 = conv_bias(depth, t.get("es.conv1.w"), t.get("es.conv1.b"), 2, 1)?.swish();
        let e2 = conv_bias(e1, t.get("es.conv2.w"), t.get("es.conv2.b"), 2, 1)?.swish();
        Ok(conv_bias(e2, t.get("es.conv3.w"), t.get("es.conv3.b"), 2, 1)?.swish())
    }

    /// Frequency encoder: each listed channel of the coefficient volume is
    /// processed as a separate chunk through a shared three-conv swish
    /// stack; a learned aggregation token queries the chunk features with
    /// per-pixel cross-attention, collapsing the chunk axis regardless of
    /// how many channels are valid.
    fn frequency_encode<'t>(
        &self,
        volume: Tensor<'t>,
        channels: &[usize],
        t: &TensorMap<'_, 't>,
    ) -> Result<Tensor<'t>> {
        if channels.is_empty() {
            return Err(Error::InvalidArgument(
                "frequency encoder needs at least one valid chunk".into(),
            ));
        }
        let dim = self.cfg.freq_widths[2];
        let query = t.get("ef.token").reshape(&[1, dim])?.matmul(t.get("ef.query.w"))?;
        let scale = 1.0 / (dim as f64).sqrt();
        let mut exps: Vec<Tensor<'t>> = Vec::with_capacity(channels.len());
        let mut values: Vec<Tensor<'t>> = Vec::with_capacity(channels.len());
        for &c in channels {
            let chunk = volume.select_channels(&[c])?;
            let f1 = conv_bias(chunk, t.get("ef.conv1.w"), t.get("ef.conv1.b"), 1, 1)?.swish();
            let f2 = conv_bias(f1, t.get("ef.conv2.w"), t.get("ef.conv2.b"), 1, 1)?.swish();
            let feat = conv_bias(f2, t.get("ef.conv3.w"), t.get("ef.conv3.b"), 1, 1)?.swish();
            let key = conv_bias(feat, t.get("ef.key.w"), t.get("ef.key.b"), 1, 0)?;
            let value = conv_bias(feat, t.get("ef.value.w"), t.get("ef.value.b"), 1, 0)?;
            let score = query.channel_dot(key)?.mul_scalar(scale);
            exps.push(score.exp());
            values.push(value);
        }
        let mut denom = exps[0];
        for e in &exps[1..] {
            denom = denom.add(*e)?;
        }
        let mut context: Option<Tensor<'t>> = None;
        for (e, v) in exps.iter().zip(&values) {
            let contribution = e.div(denom)?.channel_scale(*v)?;
            context = Some(match context {
                Some(acc) => acc.add(contribution)?,
                None => contribution,
            });
        }
        let context = context.expect("at least one chunk");
        conv_bias(context, t.get("ef.out.w"), t.get("ef.out.b"), 1, 0)
    }

    /// Runs the frequency encoder alone over the listed channels of a raw
    /// coefficient volume, returning the lifted volume leaf and the pooled
    /// features. Diagnostic surface for gradient checks of the attention
    /// path.
    pub fn encode_frequency<'t>(
        &self,
        tape: &'t Tape,
        shape: &[usize],
        data: Vec<f64>,
        channels: &[usize],
    ) -> Result<(Tensor<'t>, Tensor<'t>)> {
        let t = self.lift(tape, false)?;
        let volume = tape.variable(shape, data)?;
        let pooled = self.frequency_encode(volume, channels, &t)?;
        Ok((volume, pooled))
    }

    /// Full unrolled forward pass over every schedule step. `trainable`
    /// decides whether parameters are lifted as differentiable leaves.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        image: &[f64],
        height: usize,
        width: usize,
        schedule: &GroupSchedule,
        trainable: bool,
    ) -> Result<PphForward<'t>> {
        let s = self.cfg.block;
        if schedule.block() != s {
            return Err(Error::ShapeMismatch { lhs: vec![schedule.block()], rhs: vec![s] });
        }
        if height % s != 0 || width % s != 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "extents {height}x{width} are not multiples of the block size {s}"
            )));
        }
        if image.len() != height * width {
            return Err(Error::ShapeMismatch { lhs: vec![image.len()], rhs: vec![height, width] });
        }
        let t = self.lift(tape, trainable)?;
        let img = tape.constant(&[1, 1, height, width], image.to_vec())?;
        let e1 = conv_bias(img, t.get("img.conv1.w"), t.get("img.conv1.b"), 2, 1)?.swish();
        let e2 = conv_bias(e1, t.get("img.conv2.w"), t.get("img.conv2.b"), 2, 1)?.swish();
        let e3 = conv_bias(e2, t.get("img.conv3.w"), t.get("img.conv3.b"), 2, 1)?.swish();
        let pff_weights = DownsampleWeights {
            squeeze_w: t.get("pff.squeeze.w"),
            squeeze_b: t.get("pff.squeeze.b"),
            fuse_w: t.get("pff.fuse.w"),
            fuse_b: t.get("pff.fuse.b"),
            depthwise_w: t.get("pff.depthwise.w"),
            depthwise_b: t.get("pff.depthwise.b"),
        };
        let pooled = downsample_learned(e2, &pff_weights, &self.cfg.pff_config())?;
        let mut hidden = tape.concat_channels(&[e3, pooled])?.tanh();

        let gru = GruWeights {
            update_w: t.get("gru.update.w"),
            update_b: t.get("gru.update.b"),
            reset_w: t.get("gru.reset.w"),
            reset_b: t.get("gru.reset.b"),
            candidate_w: t.get("gru.candidate.w"),
            candidate_b: t.get("gru.candidate.b"),
        };

        let (hp, wp) = (height / s, width / s);
        let channels = s * s;
        let plane = hp * wp;
        let mut coeff = tape.constant(&[1, channels, hp, wp], vec![0.0; channels * plane])?;
        let mut depth_prev = tape.constant(&[1, 1, height, width], vec![0.0; height * width])?;
        let mut step_depths = Vec::with_capacity(schedule.len());
        let mut step_volumes = Vec::with_capacity(schedule.len());
        for k in 0..schedule.len() {
            // Chunks available to the frequency encoder: everything
            // predicted so far. The first step sees a single all-zero DC
            // chunk (the fresh volume is zero everywhere).
            let chunk_channels: Vec<usize> = if k == 0 {
                vec![0]
            } else {
                let mask = schedule.cumulative_mask(k - 1);
                (0..channels).filter(|&c| mask[c]).collect()
            };
            let ef = self.frequency_encode(coeff, &chunk_channels, &t)?;
            let es = self.spatial_encode(depth_prev, &t)?;
            let x = tape.concat_channels(&[es, ef])?;
            hidden = gru_cell(hidden, x, &gru)?;
            let h1 = conv_bias(hidden, t.get("head.conv1.w"), t.get("head.conv1.b"), 1, 1)?.swish();
            let raw = conv_bias(h1, t.get("head.conv2.w"), t.get("head.conv2.b"), 1, 0)?;
            // Mask to the cumulative set through this step, then scale.
            // Mask to the cumulative set through this step, then scale.
            let mask = schedule.cumulative_mask(k);
            let mut mask_data = vec![0.0; channels * plane];
            for c in 0..channels {
                if mask[c] {
                    mask_data[c * plane..(c + 1) * plane].iter_mut().for_each(|x| *x = 1.0);
                }
            }
            let mask_t = tape.constant(&[1, channels, hp, wp], mask_data)?;
            let delta = raw.mul(mask_t)?.mul_scalar(self.cfg.output_gain);
            coeff = coeff.add(delta)?;
            let depth = coeff.block_idct(s)?;
            depth_prev = depth;
            step_depths.push(depth);
            step_volumes.push(coeff);
        }
        Ok(PphForward { leaves: t.tensors, step_depths, step_volumes })
    }

    /// Convenience non-differentiable pass: one depth map per schedule
    /// step.
    pub fn forward_full(
        &self,
        image: &[f64],
        height: usize,
        width: usize,
        schedule: &GroupSchedule,
    ) -> Result<Vec<DepthMap>> {
        let tape = Tape::new();
        let out = self.forward(&tape, image, height, width, schedule, false)?;
        out.step_depths.iter().map(|d| DepthMap::from_estimate(height, width, d.value())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error};
    use crate::scene::{gen_scene, SceneSpec};

    #[test]
    fn parameter_budget_is_desk_scale() {
        let model = PphModel::init(PphConfig::default(), 0).unwrap();
        let count = model.params.total_elements();
        assert!(count < 300_000, "parameter count {count} exceeds the desk-scale budget");
        assert!(count > 10_000, "suspiciously small model: {count}");
    }

    #[test]
    fn init_is_deterministic() {
        let a = PphModel::init(PphConfig::default(), 7).unwrap();
        let b = PphModel::init(PphConfig::default(), 7).unwrap();
        assert_eq!(a.params, b.params);
        let c = PphModel::init(PphConfig::default(), 8).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn output_shapes_and_step_count() {
        let model = PphModel::init(PphConfig::default(), 1).unwrap();
        let schedule = GroupSchedule::default_for(8);
        let scene = gen_scene(&SceneSpec { seed: 5, ..SceneSpec::default() }).unwrap();
        let outs = model.forward_full(&scene.image, 64, 64, &schedule).unwrap();
        assert_eq!(outs.len(), 8);
        for d in &outs {
            assert_eq!((d.height(), d.width()), (64, 64));
            assert!(d.values().iter().all(|v| v.is_finite()));
        }
        // Non-square extents work too.
        let spec = SceneSpec { seed: 6, extent: 32, ..SceneSpec::default() };
        let small = gen_scene(&spec).unwrap();
        let outs = model.forward_full(&small.image, 32, 32, &schedule).unwrap();
        assert_eq!(outs.len(), 8);
        assert_eq!(outs[0].height(), 32);
    }

    #[test]
    fn extent_violation_rejected() {
        let model = PphModel::init(PphConfig::default(), 1).unwrap();
        let schedule = GroupSchedule::default_for(8);
        let image = vec![0.0; 60 * 60];
        assert!(model.forward_full(&image, 60, 60, &schedule).is_err());
    }

    #[test]
    fn cold_start_is_all_zero_at_every_step() {
        // Zero-initialized head: every delta is zero, so every estimate is
        // the all-zero map.
        let model = PphModel::init(PphConfig::default(), 3).unwrap();
        let schedule = GroupSchedule::default_for(8);
        let scene = gen_scene(&SceneSpec { seed: 2, ..SceneSpec::default() }).unwrap();
        let outs = model.forward_full(&scene.image, 64, 64, &schedule).unwrap();
        for d in &outs {
            assert!(d.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn masking_contract_holds_per_step() {
        // With a non-zero head, each step's volume must be exactly zero
        // outside the cumulative channel set.
        let model = PphModel::init_with(PphConfig::default(), 4, false).unwrap();
        let schedule = GroupSchedule::default_for(8);
        let scene = gen_scene(&SceneSpec { seed: 3, ..SceneSpec::default() }).unwrap();
        let tape = Tape::new();
        let out = model.forward(&tape, &scene.image, 64, 64, &schedule, false).unwrap();
        let plane = 8 * 8;
        for (k, vol) in out.step_volumes.iter().enumerate() {
            let mask = schedule.cumulative_mask(k);
            let data = vol.value();
            for c in 0..64 {
                let chunk = &data[c * plane..(c + 1) * plane];
                if mask[c] {
                    assert!(chunk.iter().any(|&v| v != 0.0), "step {k} channel {c} all zero");
                } else {
                    assert!(chunk.iter().all(|&v| v == 0.0), "step {k} leaked channel {c}");
                }
            }
        }
    }

    #[test]
    fn single_chunk_attention_is_identity_pool() {
        // With one chunk the softmax weight is exactly 1, so the context
        // equals that chunk's value projection.
        let model = PphModel::init_with(PphConfig::default(), 5, false).unwrap();
        let tape = Tape::new();
        let t = model.lift(&tape, false).unwrap();
        let plane = 4 * 4;
        let vol_data: Vec<f64> = (0..64 * plane).map(|i| (i % 13) as f64 * 0.1 - 0.6).collect();
        let vol = tape.constant(&[1, 64, 4, 4], vol_data).unwrap();
        let pooled = model.frequency_encode(vol, &[0], &t).unwrap();
        // Direct path: chunk stack then value then out projection.
        let chunk = vol.select_channels(&[0]).unwrap();
        let f1 = conv_bias(chunk, t.get("ef.conv1.w"), t.get("ef.conv1.b"), 1, 1).unwrap().swish();
        let f2 = conv_bias(f1, t.get("ef.conv2.w"), t.get("ef.conv2.b"), 1, 1).unwrap().swish();
        let feat = conv_bias(f2, t.get("ef.conv3.w"), t.get("ef.conv3.b"), 1, 1).unwrap().swish();
        let value = conv_bias(feat, t.get("ef.value.w"), t.get("ef.value.b"), 1, 0).unwrap();
        let direct = conv_bias(value, t.get("ef.out.w"), t.get("ef.out.b"), 1, 0).unwrap();
        for (a, b) in pooled.value().iter().zip(direct.value()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_chunk_matches_single() {
        let model = PphModel::init_with(PphConfig::default(), 6, false).unwrap();
        let tape = Tape::new();
        let t = model.lift(&tape, false).unwrap();
        let plane = 4 * 4;
        let vol_data: Vec<f64> = (0..64 * plane).map(|i| ((i * 7) % 11) as f64 * 0.05).collect();
        let vol = tape.constant(&[1, 64, 4, 4], vol_data).unwrap();
        let single = model.frequency_encode(vol, &[2], &t).unwrap();
        let doubled = model.frequency_encode(vol, &[2, 2], &t).unwrap();
        for (a, b) in single.value().iter().zip(doubled.value()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_chunk_list_rejected() {
        let model = PphModel::init(PphConfig::default(), 7).unwrap();
        let tape = Tape::new();
        let t = model.lift(&tape, false).unwrap();
        let vol = tape.constant(&[1, 64, 2, 2], vec![0.0; 64 * 4]).unwrap();
        assert!(model.frequency_encode(vol, &[], &t).is_err());
    }

    #[test]
    fn zero_depth_and_zero_biases_encode_to_zero() {
        let mut model = PphModel::init(PphConfig::default(), 11).unwrap();
        for name in ["es.conv1.b", "es.conv2.b", "es.conv3.b"] {
            let idx = model.params.index_of(name).unwrap();
            model.params.get_mut(idx).data.iter_mut().for_each(|b| *b = 0.0);
        }
        let tape = Tape::new();
        let t = model.lift(&tape, false).unwrap();
        let depth = tape.constant(&[1, 1, 32, 32], vec![0.0; 32 * 32]).unwrap();
        let out = model.spatial_encode(depth, &t).unwrap();
        assert!(out.value().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn randomized_models_produce_finite_outputs() {
        let schedule = GroupSchedule::default_for(8);
        for seed in 0..100u64 {
            let model = PphModel::init_with(PphConfig::reduced(), seed, false).unwrap();
            let scene = gen_scene(&SceneSpec { seed, extent: 32, ..SceneSpec::default() }).unwrap();
            let outs = model.forward_full(&scene.image, 32, 32, &schedule).unwrap();
            for d in &outs {
                assert!(
                    d.values().iter().all(|v| v.is_finite()),
                    "seed {seed} produced a non-finite output"
                );
            }
        }
    }

    #[test]
    fn spatial_encoder_gradcheck_wrt_input() {
        let model = PphModel::init_with(PphConfig::reduced(), 8, false).unwrap();
        let mut point = vec![0.0; 16 * 16];
        for (i, v) in point.iter_mut().enumerate() {
            *v = ((i * 31 % 17) as f64) * 0.1;
        }
        let eval = |v: &[f64]| -> f64 {
            let tape = Tape::new();
            let t = model.lift(&tape, false).unwrap();
            let depth = tape.variable(&[1, 1, 16, 16], v.to_vec()).unwrap();
            let out = model.spatial_encode(depth, &t).unwrap();
            out.mul(out).unwrap().sum().scalar_value().unwrap()
        };
        let numeric = central_difference(&eval, &point, 1e-5);
        let tape = Tape::new();
        let t = model.lift(&tape, false).unwrap();
        let depth = tape.variable(&[1, 1, 16, 16], point.clone()).unwrap();
        let out = model.spatial_encode(depth, &t).unwrap();
        out.mul(out).unwrap().sum().backward().unwrap();
        assert!(max_relative_error(&depth.grad(), &numeric) < 1e-4);
    }

    #[test]
    fn attention_gradcheck_wrt_token_and_volume() {
        let model = PphModel::init_with(PphConfig::reduced(), 9, false).unwrap();
        let plane = 2 * 2;
        let vol_point: Vec<f64> = (0..64 * plane).map(|i| ((i % 7) as f64 - 3.0) * 0.2).collect();
        let token_point = model.params.by_name("ef.token").unwrap().data.clone();
        // d(loss)/d(volume)
        let eval_vol = |v: &[f64]| -> f64 {
            let tape = Tape::new();
            let t = model.lift(&tape, false).unwrap();
            let vol = tape.variable(&[1, 64, 2, 2], v.to_vec()).unwrap();
            let out = model.frequency_encode(vol, &[0, 1, 8], &t).unwrap();
            out.mul(out).unwrap().sum().scalar_value().unwrap()
        };
        let numeric = central_difference(&eval_vol, &vol_point, 1e-5);
        let tape = Tape::new();
        let t = model.lift(&tape, false).unwrap();
        let vol = tape.variable(&[1, 64, 2, 2], vol_point.clone()).unwrap();
        let out = model.frequency_encode(vol, &[0, 1, 8], &t).unwrap();
        out.mul(out).unwrap().sum().backward().unwrap();
        assert!(max_relative_error(&vol.grad(), &numeric) < 1e-4);

        // d(loss)/d(token) through the trainable path.
        let eval_token = |tok: &[f64]| -> f64 {
            let mut m = model.clone();
            let idx = m.params.index_of("ef.token").unwrap();
            m.params.get_mut(idx).data = tok.to_vec();
            let tape = Tape::new();
            let t = m.lift(&tape, true).unwrap();
            let vol = tape.constant(&[1, 64, 2, 2], vol_point.clone()).unwrap();
            let out = m.frequency_encode(vol, &[0, 1, 8], &t).unwrap();
            out.mul(out).unwrap().sum().scalar_value().unwrap()
        };
        let numeric_tok = central_difference(&eval_token, &token_point, 1e-5);
        let tape = Tape::new();
        let t = model.lift(&tape, true).unwrap();
        let vol = tape.constant(&[1, 64, 2, 2], vol_point.clone()).unwrap();
        let out = model.frequency_encode(vol, &[0, 1, 8], &t).unwrap();
        out.mul(out).unwrap().sum().backward().unwrap();
        let tok_idx = model.params.index_of("ef.token").unwrap();
        assert!(max_relative_error(&t.tensors[tok_idx].grad(), &numeric_tok) < 1e-4);
    }
}
