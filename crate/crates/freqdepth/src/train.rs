//! End-to-end trainer for the progressive prediction head on synthetic
//! scenes, plus the exact DC-mean baseline it is judged against.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::optim::{Adam, AdamConfig, ParamSet};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::losses::{freq_reg, silog_loss, smooth_reg, total_loss, LossWeights, SilogVariant};
use crate::metrics::{eval_metrics, MetricReport};
use crate::pph::{PphConfig, PphModel};
use crate::scene::{gen_scene, scene_seed, Scene, SceneSpec};
use crate::spectrum::{DepthMap, GroupSchedule};

/// Learning-rate schedule hook: `(epoch, base_lr) -> lr`. The default is a
/// constant rate.
pub type LrSchedule = fn(usize, f64) -> f64;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Weight of the frequency regularizer in the total loss.
    pub alpha_total: f64,
    /// Weight of the smoothness regularizer in the total loss.
    pub beta_total: f64,
    pub scenes: usize,
    pub val_scenes: usize,
    pub extent: usize,
    /// Residual form for the depth loss. The trainer defaults to the
    /// literal linear residual: partial reconstructions are not guaranteed
    /// positive, which the log form requires.
    pub silog_variant: SilogVariant,
    /// Apply the frequency regularizer to every step's cumulative spectrum
    /// (true) or only to the final one (false).
    pub freq_reg_every_step: bool,
    /// Worker threads for data-parallel gradient accumulation inside a
    /// batch. Gradients are reduced in scene order, so the result is
    /// bit-identical for any job count.
    pub jobs: usize,
    pub pph: PphConfig,
    /// Prediction order; `None` uses the default merge schedule for the
    /// model's block size.
    pub schedule: Option<GroupSchedule>,
    pub lr_schedule: Option<LrSchedule>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 20,
            batch: 4,
            lr: 2e-3,
            alpha_total: 2e-3,
            beta_total: 0.0,
            scenes: 200,
            val_scenes: 40,
            extent: 64,
            silog_variant: SilogVariant::Linear,
            freq_reg_every_step: true,
            jobs: 1,
            pph: PphConfig::default(),
            schedule: None,
            lr_schedule: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.scenes == 0 || self.val_scenes == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch, and scene counts must be positive".into(),
            ));
        }
        if self.alpha_total < 0.0 || self.beta_total < 0.0 || self.lr < 0.0 {
            return Err(Error::InvalidArgument("weights and lr must be non-negative".into()));
        }
        if self.extent % 8 != 0 || self.extent == 0 {
            return Err(Error::InvalidArgument("extent must be a positive multiple of 8".into()));
        }
        Ok(())
    }

    fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha_total: self.alpha_total,
            beta_total: self.beta_total,
            ..LossWeights::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub val_rmse: f64,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best-validation-RMSE epoch.
    pub params: ParamSet,
    pub curve: Vec<EpochStats>,
    pub best_val_rmse: f64,
    /// Mean RMSE of the exact per-patch ground-truth-mean predictor over
    /// the validation scenes.
    pub baseline_rmse: f64,
    /// Per validation scene, the RMSE of every step's estimate under the
    /// best parameters.
    pub per_scene_step_rmse: Vec<Vec<f64>>,
    /// Metric suite of the final-step estimates under the best parameters,
    /// averaged over validation scenes.
    pub metrics: MetricReport,
    /// True when training stopped early on a non-finite loss; `params`
    /// then holds the last finite checkpoint.
    pub diverged: bool,
}

/// The best predictor that uses only step-0 information: each patch of the
/// output is the ground-truth mean of that patch.
pub fn dc_mean_baseline(gt: &DepthMap, block: usize) -> Result<DepthMap> {
    if gt.height() % block != 0 || gt.width() % block != 0 || block == 0 {
        return Err(Error::InvalidArgument(format!(
            "extents {}x{} are not multiples of {block}",
            gt.height(),
            gt.width()
        )));
    }
    let (h, w) = (gt.height(), gt.width());
    let mut values = vec![0.0; h * w];
    for ty in 0..h / block {
        for tx in 0..w / block {
            let mut mean = 0.0;
            for r in 0..block {
                for c in 0..block {
                    mean += gt.value(ty * block + r, tx * block + c);
                }
            }
            mean /= (block * block) as f64;
            for r in 0..block {
                for c in 0..block {
                    values[(ty * block + r) * w + tx * block + c] = mean;
                }
            }
        }
    }
    DepthMap::from_estimate(h, w, values)
}

fn scene_loss_and_grads(
    model: &PphModel,
    scene: &Scene,
    schedule: &GroupSchedule,
    weights: &LossWeights,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let tape = Tape::new();
    let h = scene.depth.height();
    let w = scene.depth.width();
    let out = model.forward(&tape, &scene.image, h, w, schedule, true)?;
    let depth_loss = silog_loss(&out.step_depths, &scene.depth, weights, cfg.silog_variant)?;
    let freq_loss = if cfg.freq_reg_every_step {
        let mut acc = freq_reg(out.step_volumes[0], model.cfg.block, weights)?;
        for vol in &out.step_volumes[1..] {
            acc = acc.add(freq_reg(*vol, model.cfg.block, weights)?)?;
        }
        acc.div_scalar(out.step_volumes.len() as f64)
    } else {
        freq_reg(*out.step_volumes.last().expect("at least one step"), model.cfg.block, weights)?
    };
    let smooth_loss =
        smooth_reg(*out.step_depths.last().expect("at least one step"), &scene.image, 1)?;
    let loss = total_loss(depth_loss, freq_loss, smooth_loss, weights)?;
    loss.backward()?;
    let grads = out.leaves.iter().map(|leaf| leaf.grad()).collect();
    Ok((loss.scalar_value()?, grads))
}

fn final_step_rmse(model: &PphModel, scene: &Scene, schedule: &GroupSchedule) -> Result<f64> {
    let outs =
        model.forward_full(&scene.image, scene.depth.height(), scene.depth.width(), schedule)?;
    outs.last().expect("at least one step").rmse(&scene.depth)
}

/// Trains the toy model. Deterministic for a fixed config: scene
/// generation, shuffling, initialization, and gradient reduction are all
/// seeded and ordered.
pub fn train_toy(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let schedule =
        cfg.schedule.clone().unwrap_or_else(|| GroupSchedule::default_for(cfg.pph.block));
    if schedule.block() != cfg.pph.block {
        return Err(Error::ShapeMismatch {
            lhs: vec![schedule.block()],
            rhs: vec![cfg.pph.block],
        });
    }
    let weights = cfg.loss_weights();

    let make_scene = |namespace: u64, index: usize| -> Result<Scene> {
        let spec = SceneSpec {
            seed: scene_seed(cfg.seed.wrapping_add(namespace), index),
            extent: cfg.extent,
            ..SceneSpec::default()
        };
        gen_scene(&spec)
    };
    // Train and validation scenes draw from disjoint seed namespaces.
    let train_scenes: Vec<Scene> =
        (0..cfg.scenes).map(|i| make_scene(0, i)).collect::<Result<_>>()?;
    let val_scenes: Vec<Scene> =
        (0..cfg.val_scenes).map(|i| make_scene(0x5EED_0000_0000_0001, i)).collect::<Result<_>>()?;

    let mut model = PphModel::init(cfg.pph, cfg.seed)?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &model.params);
    let pool = (cfg.jobs > 1)
        .then(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.jobs)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))
        })
        .transpose()?;

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best_val_rmse = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut last_finite = model.params.clone();
    let mut diverged = false;
    let mut order: Vec<usize> = (0..cfg.scenes).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x51AF_F1E5);

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = cfg.lr_schedule.map_or(cfg.lr, |f| f(epoch, cfg.lr));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch) {
            let run = |&idx: &usize| {
                scene_loss_and_grads(&model, &train_scenes[idx], &schedule, &weights, cfg)
            };
            let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = match &pool {
                Some(pool) => pool.install(|| batch.par_iter().map(run).collect()),
                None => batch.iter().map(run).collect(),
            };
            // Ordered reduction keeps the update bit-identical regardless
            // of job count.
            let mut batch_loss = 0.0;
            let mut summed: Vec<Vec<f64>> =
                model.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
            for result in results {
                let (loss, grads) = result?;
                batch_loss += loss;
                for (acc, g) in summed.iter_mut().zip(&grads) {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut summed {
                g.iter_mut().for_each(|v| *v *= scale);
            }
            let mean_loss = batch_loss * scale;
            if !mean_loss.is_finite() {
                diverged = true;
                model.params = last_finite.clone();
                break 'epochs;
            }
            epoch_loss += mean_loss;
            batches += 1;
            adam.step_with_lr(&mut model.params, &summed, lr)?;
        }
        let mean_train_loss = epoch_loss / batches.max(1) as f64;
        last_finite = model.params.clone();

        let mut val_sum = 0.0;
        for scene in &val_scenes {
            val_sum += final_step_rmse(&model, scene, &schedule)?;
        }
        let val_rmse = val_sum / val_scenes.len() as f64;
        if val_rmse < best_val_rmse {
            best_val_rmse = val_rmse;
            best_params = model.params.clone();
        }
        curve.push(EpochStats { epoch, mean_train_loss, val_rmse });
    }

    // Final evaluation under the best checkpoint.
    let best_model = PphModel { cfg: cfg.pph, params: best_params.clone() };
    let mut per_scene_step_rmse = Vec::with_capacity(val_scenes.len());
    let mut baseline_sum = 0.0;
    let mut metric_sums = [0.0f64; 10];
    for scene in &val_scenes {
        let outs = best_model.forward_full(
            &scene.image,
            scene.depth.height(),
            scene.depth.width(),
            &schedule,
        )?;
        let rmses: Vec<f64> = outs.iter().map(|d| d.rmse(&scene.depth)).collect::<Result<_>>()?;
        per_scene_step_rmse.push(rmses);
        let baseline = dc_mean_baseline(&scene.depth, cfg.pph.block)?;
        baseline_sum += baseline.rmse(&scene.depth)?;
        let report = eval_metrics(
            outs.last().expect("steps"),
            &scene.depth,
            SceneSpec::default().far + 1.0,
        )?;
        for (slot, value) in metric_sums.iter_mut().zip([
            report.abs_rel,
            report.sq_rel,
            report.rmse,
            report.log10,
            report.rmse_log,
            report.irmse,
            report.silog,
            report.delta1,
            report.delta2,
            report.delta3,
        ]) {
            *slot += value;
        }
    }
    let n = val_scenes.len() as f64;
    let metrics = MetricReport {
        abs_rel: metric_sums[0] / n,
        sq_rel: metric_sums[1] / n,
        rmse: metric_sums[2] / n,
        log10: metric_sums[3] / n,
        rmse_log: metric_sums[4] / n,
        irmse: metric_sums[5] / n,
        silog: metric_sums[6] / n,
        delta1: metric_sums[7] / n,
        delta2: metric_sums[8] / n,
        delta3: metric_sums[9] / n,
    };

    Ok(TrainOutcome {
        params: best_params,
        curve,
        best_val_rmse,
        baseline_rmse: baseline_sum / n,
        per_scene_step_rmse,
        metrics,
        diverged,
    })
}
