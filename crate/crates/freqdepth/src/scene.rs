//! Procedural synthetic scenes: a shaded grayscale image paired with dense
//! ground-truth depth.
//!
//! Scenes are ray-cast orthographically against a tilted background plane
//! with spheres, boxes, and tilted panels in front of it. Shading is
//! Lambertian from depth-derived normals, multiplied by a distance falloff,
//! so image intensity carries a strong depth cue and image edges coincide
//! with depth discontinuities. Everything is deterministic per seed.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spectrum::DepthMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Square extent in pixels; must be a multiple of 8.
    pub extent: usize,
    pub planes: usize,
    pub spheres: usize,
    pub boxes: usize,
    /// Depth range in meters, `0 < near < far`.
    pub near: f64,
    pub far: f64,
    /// Light direction (toward the light); normalized at use.
    pub light: [f64; 3],
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            extent: 64,
            planes: 1,
            spheres: 3,
            boxes: 2,
            near: 2.0,
            far: 6.0,
            light: [0.35, 0.25, 1.0],
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.extent == 0 || self.extent % 8 != 0 {
            return Err(Error::InvalidArgument(format!(
                "scene extent must be a positive multiple of 8, got {}",
                self.extent
            )));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::InvalidArgument(format!(
                "depth range [{}, {}] must satisfy 0 < near < far",
                self.near, self.far
            )));
        }
        Ok(())
    }
}

/// One rendered scene: grayscale image in `[0, 1]` (row-major, extent^2)
/// plus dense ground-truth depth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: Vec<f64>,
    pub depth: DepthMap,
}

/// Per-scene seed derivation so a dataset is reproducible from
/// `(base_seed, index)` alone. SplitMix64-style mixing.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    let mut z = base ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Panel {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    z_center: f64,
    slope_x: f64,
    slope_y: f64,
}

struct Ball {
    cx: f64,
    cy: f64,
    radius: f64,
    z_front: f64,
    bulge: f64,
}

/// Renders the scene for `spec`. Depth is strictly positive and dense; the
/// validity mask is all-true.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.extent;
    let span = spec.far - spec.near;

    // Background plane, gently tilted around mid-depth.
    let bg_center = spec.near + span * rng.gen_range(0.45..0.7);
    let bg_sx = span * rng.gen_range(-0.25..0.25);
    let bg_sy = span * rng.gen_range(-0.25..0.25);
    let background = |x: f64, y: f64| bg_center + bg_sx * (x - 0.5) + bg_sy * (y - 0.5);

    // Boxes and panels share the rectangle-with-slopes form; boxes are
    // axis-aligned with a flat front face.
    let mut panels = Vec::new();
    for _ in 0..spec.boxes {
        let w = rng.gen_range(0.12..0.3);
        let h = rng.gen_range(0.12..0.3);
        let x0 = rng.gen_range(0.05..0.95 - w);
        let y0 = rng.gen_range(0.05..0.95 - h);
        let lift = span * rng.gen_range(0.15..0.4);
        panels.push(Panel {
            x0,
            x1: x0 + w,
            y0,
            y1: y0 + h,
            z_center: background(x0 + w / 2.0, y0 + h / 2.0) - lift,
            slope_x: 0.0,
            slope_y: 0.0,
        });
    }
    for _ in 0..spec.planes {
        let w = rng.gen_range(0.2..0.45);
        let h = rng.gen_range(0.2..0.45);
        let x0 = rng.gen_range(0.05..0.95 - w);
        let y0 = rng.gen_range(0.05..0.95 - h);
        let lift = span * rng.gen_range(0.1..0.3);
        panels.push(Panel {
            x0,
            x1: x0 + w,
            y0,
            y1: y0 + h,
            z_center: background(x0 + w / 2.0, y0 + h / 2.0) - lift,
            slope_x: span * rng.gen_range(-0.3..0.3),
            slope_y: span * rng.gen_range(-0.3..0.3),
        });
    }
    let mut balls = Vec::new();
    for _ in 0..spec.spheres {
        let radius = rng.gen_range(0.08..0.2);
        let cx = rng.gen_range(radius..1.0 - radius);
        let cy = rng.gen_range(radius..1.0 - radius);
        let lift = span * rng.gen_range(0.12..0.35);
        balls.push(Ball {
            cx,
            cy,
            radius,
            z_front: background(cx, cy) - lift,
            bulge: span * rng.gen_range(0.08..0.2),
        });
    }

    let mut depth = vec![0.0; n * n];
    for py in 0..n {
        let y = (py as f64 + 0.5) / n as f64;
        for px in 0..n {
            let x = (px as f64 + 0.5) / n as f64;
            let mut z = background(x, y);
            for p in &panels {
                if x >= p.x0 && x < p.x1 && y >= p.y0 && y < p.y1 {
                    let zc = p.z_center
                        + p.slope_x * (x - (p.x0 + p.x1) / 2.0)
                        + p.slope_y * (y - (p.y0 + p.y1) / 2.0);
                    z = z.min(zc);
                }
            }
            for b in &balls {
                let dx = x - b.cx;
                let dy = y - b.cy;
                let rr = (dx * dx + dy * dy) / (b.radius * b.radius);
                if rr < 1.0 {
                    // Front of an ellipsoid bulging toward the camera.
                    let zs = b.z_front + b.bulge * (1.0 - (1.0 - rr).sqrt());
                    z = z.min(zs);
                }
            }
            depth[py * n + px] = z.clamp(spec.near, spec.far);
        }
    }

    // Shade from depth-derived normals plus a distance falloff. The
    // gradient gain exaggerates slopes so silhouettes read clearly.
    let light = {
        let l = spec.light;
        let norm = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        [l[0] / norm, l[1] / norm, l[2] / norm]
    };
    let gain = n as f64 / (6.0 * span);
    let grad = |at: usize, step: isize, lo: bool, hi: bool| -> f64 {
        // Central difference where possible, one-sided at borders.
        match (lo, hi) {
            (true, true) => {
                (depth[(at as isize + step) as usize] - depth[(at as isize - step) as usize]) / 2.0
            }
            (false, true) => depth[(at as isize + step) as usize] - depth[at],
            (true, false) => depth[at] - depth[(at as isize - step) as usize],
            (false, false) => 0.0,
        }
    };
    let mut image = vec![0.0; n * n];
    for py in 0..n {
        for px in 0..n {
            let at = py * n + px;
            let gx = grad(at, 1, px > 0, px + 1 < n) * gain;
            let gy = grad(at, n as isize, py > 0, py + 1 < n) * gain;
            let inv = 1.0 / (gx * gx + gy * gy + 1.0).sqrt();
            let normal = [-gx * inv, -gy * inv, inv];
            let ndotl =
                (normal[0] * light[0] + normal[1] * light[1] + normal[2] * light[2]).max(0.0);
            let shade = 0.15 + 0.85 * ndotl;
            let falloff = 1.0 - 0.55 * (depth[at] - spec.near) / span;
            image[at] = (shade * falloff).clamp(0.0, 1.0);
        }
    }

    let depth = DepthMap::new(n, n, depth, vec![true; n * n])?;
    Ok(Scene { image, depth })
}
