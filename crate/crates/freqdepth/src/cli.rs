//! Command-line surface: spectrum analysis, progressive playback, toy
//! training, evaluation, data generation, and the DCT benchmark.
//!
//! Reports are tab-separated with a header row so they diff cleanly. The
//! environment variable `FREQDEPTH_SEED` overrides any `--seed` flag.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dct;
use crate::error::{Error, Result};
use crate::io;
use crate::losses::SilogVariant;
use crate::metrics::{eval_metrics, MetricReport};
use crate::pph::PphConfig;
use crate::progressive::reconstruct_from_truth;
use crate::scene::{gen_scene, scene_seed, SceneSpec};
use crate::spectrum::{forward_block_dct, CoefficientVolume, DepthMap, GroupSchedule};
use crate::train::{train_toy, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "freqdepth",
    version,
    about = "Frequency-domain progressive depth estimation toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report per-group and per-step spectral energy of a depth map.
    AnalyzeSpectrum {
        /// Input depth map (grayscale PFM).
        input: PathBuf,
        /// Merge spec like "0;1;2;3;4;5;6-7;8-14", or "default"/"none".
        #[arg(long, default_value = "default")]
        schedule: String,
    },
    /// Replay the schedule from ground-truth coefficients, writing one PFM
    /// per step plus an RMSE table.
    ProgressiveReconstruct {
        /// Input depth map (grayscale PFM).
        input: PathBuf,
        /// Emit only the first N steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Output directory for step_XX.pfm files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "default")]
        schedule: String,
    },
    /// Train the toy progressive prediction head on synthetic scenes.
    TrainToy {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 2e-3)]
        lr: f64,
        /// Weight of the frequency regularizer.
        #[arg(long, default_value_t = 2e-3)]
        alpha: f64,
        /// Weight of the smoothness regularizer.
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        /// Number of training scenes (validation adds one fifth).
        #[arg(long, default_value_t = 200)]
        scenes: usize,
        /// Output directory for checkpoint.fdp1, curve.tsv, report.tsv.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for in-batch gradient accumulation.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare a predicted depth map against ground truth.
    Eval {
        /// Predicted depth (PFM).
        pred: PathBuf,
        /// Ground-truth depth (PFM).
        gt: PathBuf,
        /// Maximum depth in meters; deeper ground truth is excluded.
        #[arg(long, default_value_t = 10.0)]
        cap: f64,
    },
    /// Generate paired synthetic scenes (PGM image + PFM depth).
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Square extent in pixels (multiple of 8).
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Benchmark the naive quadruple-sum DCT against the separable path.
    BenchDct {
        /// Map extents as WxH.
        #[arg(long, default_value = "640x480")]
        size: String,
        /// Full-map passes per path.
        #[arg(long, default_value_t = 8)]
        iters: usize,
    },
}

/// `FREQDEPTH_SEED` beats the flag when set.
fn resolve_seed(flag: u64) -> Result<u64> {
    match std::env::var("FREQDEPTH_SEED") {
        Ok(text) => text.trim().parse().map_err(|_| {
            Error::InvalidArgument(format!(
                "FREQDEPTH_SEED must be an unsigned integer, got {text:?}"
            ))
        }),
        Err(_) => Ok(flag),
    }
}

fn parse_schedule(spec: &str, block: usize) -> Result<GroupSchedule> {
    match spec {
        "default" => Ok(GroupSchedule::default_for(block)),
        "none" => Ok(GroupSchedule::unmerged(block)),
        _ => {
            let mut runs = Vec::new();
            for step in spec.split(';') {
                let mut run = Vec::new();
                for part in step.split(',') {
                    let part = part.trim();
                    if let Some((a, b)) = part.split_once('-') {
                        let lo: usize = a.trim().parse().map_err(|_| {
                            Error::InvalidArgument(format!("bad group index {a:?}"))
                        })?;
                        let hi: usize = b.trim().parse().map_err(|_| {
                            Error::InvalidArgument(format!("bad group index {b:?}"))
                        })?;
                        run.extend(lo..=hi);
                    } else if !part.is_empty() {
                        run.push(part.parse().map_err(|_| {
                            Error::InvalidArgument(format!("bad group index {part:?}"))
                        })?);
                    }
                }
                runs.push(run);
            }
            GroupSchedule::from_merge_spec(block, &runs)
        }
    }
}

/// Loads a PFM depth map and reflect-pads it to the block grid. Returns the
/// padded map plus the original extents for cropping on output.
fn ingest_depth(path: &Path, block: usize) -> Result<(DepthMap, usize, usize)> {
    let map = io::read_pfm_depth(path)?;
    let (h, w) = (map.height(), map.width());
    let padded = if h % block == 0 && w % block == 0 { map } else { map.pad_to_multiple(block)? };
    Ok((padded, h, w))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::AnalyzeSpectrum { input, schedule } => analyze_spectrum(&input, &schedule),
        Command::ProgressiveReconstruct { input, steps, out, schedule } => {
            progressive_reconstruct(&input, steps, &out, &schedule)
        }
        Command::TrainToy { seed, epochs, batch, lr, alpha, beta, scenes, out, jobs } => {
            train_toy_cmd(seed, epochs, batch, lr, alpha, beta, scenes, &out, jobs)
        }
        Command::Eval { pred, gt, cap } => eval_cmd(&pred, &gt, cap),
        Command::GenData { seed, count, size, out_dir, jobs } => {
            gen_data(seed, count, size, &out_dir, jobs)
        }
        Command::BenchDct { size, iters } => bench_dct(&size, iters),
    }
}

fn analyze_spectrum(input: &Path, schedule_spec: &str) -> Result<()> {
    let block = 8;
    let schedule = parse_schedule(schedule_spec, block)?;
    let (map, _, _) = ingest_depth(input, block)?;
    let basis = dct::make_basis(block)?;
    let vol = forward_block_dct(&map, &basis)?;
    let energies = vol.channel_energy();
    let total: f64 = energies.iter().sum();
    let groups = crate::spectrum::subdiagonal_groups(block);

    println!("kind\tindex\tchannels\tenergy\tfraction\tcumulative");
    let mut cumulative = 0.0;
    for (i, group) in groups.iter().enumerate() {
        let energy: f64 =
            group.iter().map(|&(u, v)| energies[CoefficientVolume::channel_of(block, u, v)]).sum();
        cumulative += energy;
        println!(
            "group\t{i}\t{}\t{:.6e}\t{:.6}\t{:.6}",
            group.len(),
            energy,
            energy / total,
            cumulative / total
        );
    }
    let mut cumulative = 0.0;
    for (k, step) in schedule.steps().iter().enumerate() {
        let energy: f64 =
            step.iter().map(|&(u, v)| energies[CoefficientVolume::channel_of(block, u, v)]).sum();
        cumulative += energy;
        println!(
            "step\t{k}\t{}\t{:.6e}\t{:.6}\t{:.6}",
            step.len(),
            energy,
            energy / total,
            cumulative / total
        );
    }
    // Patch-level spread of the DC coefficient.
    let dc = vol.channel_plane(0);
    let mean = dc.iter().sum::<f64>() / dc.len() as f64;
    let var = dc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dc.len() as f64;
    println!("dc_variance\t-\t1\t{var:.6e}\t-\t-");
    Ok(())
}

fn progressive_reconstruct(
    input: &Path,
    steps: Option<usize>,
    out_dir: &Path,
    schedule_spec: &str,
) -> Result<()> {
    let block = 8;
    let schedule = parse_schedule(schedule_spec, block)?;
    let (map, orig_h, orig_w) = ingest_depth(input, block)?;
    let playback = reconstruct_from_truth(&map, &schedule)?;
    let basis = dct::make_basis(block)?;
    let vol = forward_block_dct(&map, &basis)?;
    let energies = vol.channel_energy();
    let total: f64 = energies.iter().sum();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let limit = steps.unwrap_or(playback.len()).min(playback.len());
    let original = map.crop(orig_h, orig_w)?;
    println!("step\tchannels\tenergy_fraction\trmse");
    let counts = schedule.cumulative_counts();
    for (k, estimate) in playback.iter().take(limit).enumerate() {
        let kept: f64 = schedule
            .cumulative_mask(k)
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(c, _)| energies[c])
            .sum();
        let cropped = estimate.crop(orig_h, orig_w)?;
        let rmse = cropped.rmse(&original)?;
        let path = out_dir.join(format!("step_{k:02}.pfm"));
        io::write_pfm_file(&path, cropped.height(), cropped.width(), cropped.values())?;
        println!("{k}\t{}\t{:.6}\t{:.6e}", counts[k], kept / total, rmse);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_toy_cmd(
    seed: u64,
    epochs: usize,
    batch: usize,
    lr: f64,
    alpha: f64,
    beta: f64,
    scenes: usize,
    out_dir: &Path,
    jobs: usize,
) -> Result<()> {
    let cfg = TrainConfig {
        seed: resolve_seed(seed)?,
        epochs,
        batch,
        lr,
        alpha_total: alpha,
        beta_total: beta,
        scenes,
        val_scenes: (scenes / 5).max(1),
        silog_variant: SilogVariant::Linear,
        jobs,
        pph: PphConfig::default(),
        ..TrainConfig::default()
    };
    let started = Instant::now();
    let outcome = train_toy(&cfg)?;
    let minutes = started.elapsed().as_secs_f64() / 60.0;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    io::write_checkpoint_file(&out_dir.join("checkpoint.fdp1"), &outcome.params)?;
    let mut curve = String::from("epoch\ttrain_loss\tval_rmse\n");
    for e in &outcome.curve {
        curve.push_str(&format!("{}\t{:.6}\t{:.6}\n", e.epoch, e.mean_train_loss, e.val_rmse));
    }
    fs::write(out_dir.join("curve.tsv"), &curve)
        .map_err(|e| Error::io(out_dir.join("curve.tsv"), e))?;
    let report = format!("{}\n{}\n", MetricReport::TSV_HEADER, outcome.metrics.tsv_row());
    fs::write(out_dir.join("report.tsv"), &report)
        .map_err(|e| Error::io(out_dir.join("report.tsv"), e))?;

    print!("{curve}");
    println!("best_val_rmse\t{:.6}", outcome.best_val_rmse);
    println!("baseline_rmse\t{:.6}", outcome.baseline_rmse);
    println!("rmse_vs_baseline\t{:.4}", outcome.best_val_rmse / outcome.baseline_rmse);
    println!("diverged\t{}", outcome.diverged);
    println!("minutes\t{minutes:.2}");
    println!("{}", MetricReport::TSV_HEADER);
    println!("{}", outcome.metrics.tsv_row());
    Ok(())
}

fn eval_cmd(pred_path: &Path, gt_path: &Path, cap: f64) -> Result<()> {
    let pred = io::read_pfm_estimate(pred_path)?;
    let gt = io::read_pfm_depth(gt_path)?;
    let report = eval_metrics(&pred, &gt, cap)?;
    println!("{}", MetricReport::TSV_HEADER);
    println!("{}", report.tsv_row());
    // Structured block in the customary table column order.
    println!("metric\tvalue");
    for (name, value) in [
        ("abs_rel", report.abs_rel),
        ("sq_rel", report.sq_rel),
        ("rmse", report.rmse),
        ("log10", report.log10),
        ("delta1", report.delta1),
        ("delta2", report.delta2),
        ("delta3", report.delta3),
        ("rmse_log", report.rmse_log),
        ("irmse", report.irmse),
        ("silog", report.silog),
    ] {
        println!("{name}\t{value:.6}");
    }
    Ok(())
}

fn gen_data(seed: u64, count: usize, size: usize, out_dir: &Path, jobs: usize) -> Result<()> {
    let base = resolve_seed(seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write_one = |i: usize| -> Result<()> {
        let spec = SceneSpec { seed: scene_seed(base, i), extent: size, ..SceneSpec::default() };
        let scene = gen_scene(&spec)?;
        io::write_pgm_file(&out_dir.join(format!("scene_{i:04}.pgm")), size, size, &scene.image)?;
        io::write_pfm_file(
            &out_dir.join(format!("scene_{i:04}.pfm")),
            size,
            size,
            scene.depth.values(),
        )?;
        Ok(())
    };
    if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
        pool.install(|| (0..count).into_par_iter().map(write_one).collect::<Result<()>>())?;
    } else {
        for i in 0..count {
            write_one(i)?;
        }
    }
    println!("wrote\t{count}\tscene pairs to\t{}", out_dir.display());
    Ok(())
}

fn parse_size(size: &str) -> Result<(usize, usize)> {
    let (w, h) = size.split_once('x').ok_or_else(|| {
        Error::InvalidArgument(format!("size must look like 640x480, got {size:?}"))
    })?;
    let width = w.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad width {w:?}")))?;
    let height =
        h.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad height {h:?}")))?;
    Ok((width, height))
}

/// Quantized coefficient checksum: differences below 2^-10 vanish, so both
/// transform paths produce the same value when they agree numerically.
fn coefficient_checksum(spectrum: &[f64]) -> i64 {
    spectrum.iter().map(|&v| (v * 1024.0).round() as i64).fold(0i64, |a, b| a.wrapping_add(b))
}

fn bench_dct(size: &str, iters: usize) -> Result<()> {
    let (width, height) = parse_size(size)?;
    let block = 8;
    let (bw, bh) = (width / block, height / block);
    if bw == 0 || bh == 0 {
        return Err(Error::InvalidArgument(format!(
            "map {width}x{height} is smaller than one {block}x{block} block"
        )));
    }
    let basis = dct::make_basis(block)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xD07);
    let blocks: Vec<Vec<f64>> = (0..bw * bh)
        .map(|_| (0..block * block).map(|_| rng.gen_range(0.0..8.0)).collect())
        .collect();

    // Both paths transform into preallocated buffers so the comparison
    // measures the transforms, not the allocator.
    let mut spectrum = vec![0.0; block * block];
    let mut scratch = vec![0.0; block * block];
    let mut naive_sum = 0i64;
    let mut fast_sum = 0i64;
    let mut naive_secs = 0.0;
    let mut fast_secs = 0.0;
    for _ in 0..iters {
        let t0 = Instant::now();
        for b in &blocks {
            dct::dct2_naive_into(b, &mut spectrum, &basis);
            std::hint::black_box(&spectrum);
        }
        naive_secs += t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        for b in &blocks {
            dct::dct2_fast_into(b, &mut spectrum, &mut scratch, &basis);
            std::hint::black_box(&spectrum);
        }
        fast_secs += t1.elapsed().as_secs_f64();
    }
    // Checksums outside the timed region prove both paths computed the
    // same spectra.
    if iters > 0 {
        let mut check = 0i64;
        for b in &blocks {
            dct::dct2_naive_into(b, &mut spectrum, &basis);
            check = check.wrapping_add(coefficient_checksum(&spectrum));
        }
        naive_sum = check;
        let mut check = 0i64;
        for b in &blocks {
            dct::dct2_fast_into(b, &mut spectrum, &mut scratch, &basis);
            check = check.wrapping_add(coefficient_checksum(&spectrum));
        }
        fast_sum = check;
    }
    let total_blocks = (blocks.len() * iters) as f64;
    let naive_rate = if naive_secs > 0.0 { total_blocks / naive_secs } else { 0.0 };
    let fast_rate = if fast_secs > 0.0 { total_blocks / fast_secs } else { 0.0 };
    let ratio = if naive_rate > 0.0 { fast_rate / naive_rate } else { 0.0 };
    println!("path\tblocks_per_sec\tchecksum");
    println!("naive\t{naive_rate:.0}\t{naive_sum}");
    println!("separable\t{fast_rate:.0}\t{fast_sum}");
    println!("speedup\t{ratio:.2}\t{}", if naive_sum == fast_sum { "equal" } else { "MISMATCH" });
    Ok(())
}
