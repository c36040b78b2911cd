//! Depth maps, per-patch coefficient volumes, and the subdiagonal frequency
//! grouping that orders progressive prediction.
//!
//! A depth map of extent `H x W` (multiples of the block size `S`) is cut
//! into non-overlapping `S x S` patches; each patch is transformed
//! independently, and the resulting spectra are stored channel-major as an
//! `S^2 x (H/S) x (W/S)` volume. Channel `c` corresponds to the frequency
//! pair `(u, v)` through the fixed row-major bijection `c = u * S + v`.

use std::fmt;

use crate::dct::{self, DctBasis};
use crate::error::{Error, Result};

/// Dense depth grid in meters with a per-pixel validity mask.
///
/// Ground-truth maps built through [`DepthMap::new`] guarantee strictly
/// positive depth on valid pixels. Reconstructed estimates (which may dip to
/// zero or below mid-sequence) use [`DepthMap::from_estimate`] instead.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Validated constructor for measured/ground-truth depth: every valid
    /// pixel must hold a strictly positive, finite value.
    pub fn new(height: usize, width: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != height * width || valid.len() != height * width {
            return Err(Error::ShapeMismatch {
                lhs: vec![values.len(), valid.len()],
                rhs: vec![height, width],
            });
        }
        for (i, (&v, &ok)) in values.iter().zip(&valid).enumerate() {
            if ok && !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!(
                    "valid depth at index {i} must be strictly positive and finite, got {v}"
                )));
            }
        }
        Ok(DepthMap { height, width, values, valid })
    }

    /// Unvalidated constructor for reconstructions and other estimates; the
    /// mask is dense.
    pub fn from_estimate(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch { lhs: vec![values.len()], rhs: vec![height, width] });
        }
        let valid = vec![true; height * width];
        Ok(DepthMap { height, width, values, valid })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        DepthMap {
            height,
            width,
            values: vec![value; height * width],
            valid: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn value(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    /// Root-mean-square error against `other` over all pixels.
    pub fn rmse(&self, other: &DepthMap) -> Result<f64> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::ShapeMismatch {
                lhs: vec![self.height, self.width],
                rhs: vec![other.height, other.width],
            });
        }
        let n = self.values.len() as f64;
        let sq: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok((sq / n).sqrt())
    }

    /// Sum of squared values (spatial energy).
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Reflect-pads the right and bottom edges so both extents become
    /// multiples of `block`. Reflection excludes the edge sample
    /// (`a b c d -> a b c d c b`), so padding widths up to `extent - 1` are
    /// supported, which covers any `block <= extent`.
    pub fn pad_to_multiple(&self, block: usize) -> Result<DepthMap> {
        let nh = self.height.div_ceil(block) * block;
        let nw = self.width.div_ceil(block) * block;
        if nh - self.height >= self.height || nw - self.width >= self.width {
            return Err(Error::InvalidArgument(format!(
                "map {}x{} too small to reflect-pad to a multiple of {block}",
                self.height, self.width
            )));
        }
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * n - 2 - i };
        let mut values = vec![0.0; nh * nw];
        let mut valid = vec![false; nh * nw];
        for y in 0..nh {
            let sy = reflect(y, self.height);
            for x in 0..nw {
                let sx = reflect(x, self.width);
                values[y * nw + x] = self.values[sy * self.width + sx];
                valid[y * nw + x] = self.valid[sy * self.width + sx];
            }
        }
        Ok(DepthMap { height: nh, width: nw, values, valid })
    }

    /// Crops to the top-left `height x width` window (inverse of padding).
    pub fn crop(&self, height: usize, width: usize) -> Result<DepthMap> {
        if height > self.height || width > self.width {
            return Err(Error::InvalidArgument(format!(
                "cannot crop {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        let mut values = Vec::with_capacity(height * width);
        let mut valid = Vec::with_capacity(height * width);
        for y in 0..height {
            let row = y * self.width;
            values.extend_from_slice(&self.values[row..row + width]);
            valid.extend_from_slice(&self.valid[row..row + width]);
        }
        Ok(DepthMap { height, width, values, valid })
    }
}

/// Per-patch DCT coefficients for a whole map, stored channel-major:
/// `S^2` channels of `(H/S) x (W/S)` planes. Channels outside `valid_freq`
/// are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVolume {
    block: usize,
    patches_y: usize,
    patches_x: usize,
    data: Vec<f64>,
    valid_freq: Vec<bool>,
}

impl CoefficientVolume {
    pub fn zeros(block: usize, patches_y: usize, patches_x: usize) -> Self {
        CoefficientVolume {
            block,
            patches_y,
            patches_x,
            data: vec![0.0; block * block * patches_y * patches_x],
            valid_freq: vec![false; block * block],
        }
    }

    /// Builds a volume from raw channel-major data and a channel mask.
    /// Entries on channels outside `valid_freq` must be zero.
    pub fn from_parts(
        block: usize,
        patches_y: usize,
        patches_x: usize,
        data: Vec<f64>,
        valid_freq: Vec<bool>,
    ) -> Result<Self> {
        let channels = block * block;
        if data.len() != channels * patches_y * patches_x || valid_freq.len() != channels {
            return Err(Error::ShapeMismatch {
                lhs: vec![data.len(), valid_freq.len()],
                rhs: vec![channels, patches_y, patches_x],
            });
        }
        let plane = patches_y * patches_x;
        for c in 0..channels {
            if !valid_freq[c] && data[c * plane..(c + 1) * plane].iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "channel {c} is outside valid_freq but carries nonzero coefficients"
                )));
            }
        }
        Ok(CoefficientVolume { block, patches_y, patches_x, data, valid_freq })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn patches_y(&self) -> usize {
        self.patches_y
    }

    pub fn patches_x(&self) -> usize {
        self.patches_x
    }

    pub fn channels(&self) -> usize {
        self.block * self.block
    }

    pub fn map_height(&self) -> usize {
        self.patches_y * self.block
    }

    pub fn map_width(&self) -> usize {
        self.patches_x * self.block
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn valid_freq(&self) -> &[bool] {
        &self.valid_freq
    }

    pub fn valid_channel_count(&self) -> usize {
        self.valid_freq.iter().filter(|&&b| b).count()
    }

    /// Channel index for the frequency pair `(u, v)`: `c = u * S + v`.
    pub fn channel_of(block: usize, u: usize, v: usize) -> usize {
        u * block + v
    }

    /// Frequency pair for a channel index (inverse of [`Self::channel_of`]).
    pub fn freq_of(block: usize, channel: usize) -> (usize, usize) {
        (channel / block, channel % block)
    }

    pub fn channel_plane(&self, channel: usize) -> &[f64] {
        let plane = self.patches_y * self.patches_x;
        &self.data[channel * plane..(channel + 1) * plane]
    }

    /// Sets one channel plane and marks it valid.
    pub fn set_channel(&mut self, channel: usize, plane: &[f64]) -> Result<()> {
        let n = self.patches_y * self.patches_x;
        if plane.len() != n {
            return Err(Error::ShapeMismatch {
                lhs: vec![plane.len()],
                rhs: vec![self.patches_y, self.patches_x],
            });
        }
        self.data[channel * n..(channel + 1) * n].copy_from_slice(plane);
        self.valid_freq[channel] = true;
        Ok(())
    }

    /// Adds `delta` channelwise. Channels invalid in `delta` are ignored;
    /// the receiver's mask becomes the union of both masks.
    pub fn accumulate(&mut self, delta: &CoefficientVolume) -> Result<()> {
        if self.block != delta.block
            || self.patches_y != delta.patches_y
            || self.patches_x != delta.patches_x
        {
            return Err(Error::ShapeMismatch {
                lhs: vec![self.block, self.patches_y, self.patches_x],
                rhs: vec![delta.block, delta.patches_y, delta.patches_x],
            });
        }
        let plane = self.patches_y * self.patches_x;
        for c in 0..self.channels() {
            if delta.valid_freq[c] {
                self.valid_freq[c] = true;
                let a = &mut self.data[c * plane..(c + 1) * plane];
                let b = &delta.data[c * plane..(c + 1) * plane];
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
        }
        Ok(())
    }

    /// Restriction to the given channel set; everything else becomes zero
    /// and invalid.
    pub fn restricted(&self, keep: &[bool]) -> Result<CoefficientVolume> {
        if keep.len() != self.channels() {
            return Err(Error::ShapeMismatch { lhs: vec![keep.len()], rhs: vec![self.channels()] });
        }
        let plane = self.patches_y * self.patches_x;
        let mut out = CoefficientVolume::zeros(self.block, self.patches_y, self.patches_x);
        for c in 0..self.channels() {
            if keep[c] && self.valid_freq[c] {
                out.valid_freq[c] = true;
                out.data[c * plane..(c + 1) * plane]
                    .copy_from_slice(&self.data[c * plane..(c + 1) * plane]);
            }
        }
        Ok(out)
    }

    /// Total squared coefficient magnitude per channel.
    pub fn channel_energy(&self) -> Vec<f64> {
        (0..self.channels()).map(|c| self.channel_plane(c).iter().map(|v| v * v).sum()).collect()
    }

    /// Total spectral energy.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Splits the `S x S` spectrum into its `2S - 1` anti-diagonal groups:
/// group `i` holds every `(u, v)` with `u + v = i`, ordered by `u`.
pub fn subdiagonal_groups(block: usize) -> Vec<Vec<(usize, usize)>> {
    let mut groups = vec![Vec::new(); 2 * block - 1];
    for u in 0..block {
        for v in 0..block {
            groups[u + v].push((u, v));
        }
    }
    groups
}

/// Every frequency pair of the `S x S` spectrum in subdiagonal order:
/// ascending `u + v`, ties broken by ascending `u`.
pub fn subdiagonal_order(block: usize) -> Vec<(usize, usize)> {
    subdiagonal_groups(block).into_iter().flatten().collect()
}

/// Ordered prediction schedule: each step claims a set of frequency pairs,
/// the steps are pairwise disjoint, and their union covers the spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSchedule {
    block: usize,
    steps: Vec<Vec<(usize, usize)>>,
}

impl GroupSchedule {
    /// Builds a schedule by merging consecutive subdiagonal groups.
    /// `merge_spec` must partition the group indices `0..=2S-2` into
    /// contiguous ascending runs.
    pub fn from_merge_spec(block: usize, merge_spec: &[Vec<usize>]) -> Result<Self> {
        let group_count = 2 * block - 1;
        let mut expected = 0usize;
        for run in merge_spec {
            if run.is_empty() {
                return Err(Error::InvalidArgument("empty merge run".into()));
            }
            for &g in run {
                if g != expected {
                    return Err(Error::InvalidArgument(format!(
                        "merge spec must cover group indices 0..={} as contiguous ascending \
                         runs; expected {expected}, found {g}",
                        group_count - 1
                    )));
                }
                expected += 1;
            }
        }
        if expected != group_count {
            return Err(Error::InvalidArgument(format!(
                "merge spec covers {expected} of {group_count} groups"
            )));
        }
        let groups = subdiagonal_groups(block);
        let steps = merge_spec
            .iter()
            .map(|run| run.iter().flat_map(|&g| groups[g].iter().copied()).collect())
            .collect();
        Ok(GroupSchedule { block, steps })
    }

    /// One step per subdiagonal group (no merging): `2S - 1` steps.
    pub fn unmerged(block: usize) -> Self {
        let spec: Vec<Vec<usize>> = (0..2 * block - 1).map(|g| vec![g]).collect();
        GroupSchedule::from_merge_spec(block, &spec).expect("identity spec is valid")
    }

    /// Default schedule for `S = 8`: groups 0..5 stay single, groups {6,7}
    /// merge, groups {8..14} merge, giving 8 steps with cumulative channel
    /// counts 1, 3, 6, 10, 15, 21, 36, 64. Other block sizes default to the
    /// unmerged schedule.
    pub fn default_for(block: usize) -> Self {
        if block == 8 {
            let spec: Vec<Vec<usize>> = vec![
                vec![0],
                vec![1],
                vec![2],
                vec![3],
                vec![4],
                vec![5],
                vec![6, 7],
                (8..=14).collect(),
            ];
            GroupSchedule::from_merge_spec(block, &spec).expect("default spec is valid")
        } else {
            GroupSchedule::unmerged(block)
        }
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, k: usize) -> &[(usize, usize)] {
        &self.steps[k]
    }

    pub fn steps(&self) -> &[Vec<(usize, usize)>] {
        &self.steps
    }

    /// Channel mask covering steps `0..=k`.
    pub fn cumulative_mask(&self, k: usize) -> Vec<bool> {
        let mut mask = vec![false; self.block * self.block];
        for step in &self.steps[..=k] {
            for &(u, v) in step {
                mask[CoefficientVolume::channel_of(self.block, u, v)] = true;
            }
        }
        mask
    }

    /// Number of channels covered by steps `0..=k`, for each `k`.
    pub fn cumulative_counts(&self) -> Vec<usize> {
        let mut counts = Vec::with_capacity(self.steps.len());
        let mut total = 0;
        for step in &self.steps {
            total += step.len();
            counts.push(total);
        }
        counts
    }
}

impl fmt::Display for GroupSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sizes: Vec<String> = self.steps.iter().map(|s| s.len().to_string()).collect();
        write!(f, "schedule[S={}; steps={}]", self.block, sizes.join(","))
    }
}

fn check_multiple(map: &DepthMap, block: usize) -> Result<()> {
    if block == 0 {
        return Err(Error::InvalidArgument("block size must be positive".into()));
    }
    if map.height() % block != 0 || map.width() % block != 0 {
        return Err(Error::InvalidArgument(format!(
            "map extents {}x{} are not multiples of {block}; reflect-pad on ingestion first",
            map.height(),
            map.width()
        )));
    }
    Ok(())
}

/// Transforms every non-overlapping `S x S` patch of `map` independently.
/// The resulting volume has all channels valid.
pub fn forward_block_dct(map: &DepthMap, basis: &DctBasis) -> Result<CoefficientVolume> {
    let s = basis.size();
    check_multiple(map, s)?;
    let py = map.height() / s;
    let px = map.width() / s;
    let mut vol = CoefficientVolume::zeros(s, py, px);
    vol.valid_freq = vec![true; s * s];
    let mut patch = vec![0.0; s * s];
    let mut spec = vec![0.0; s * s];
    let mut scratch = vec![0.0; s * s];
    let plane = py * px;
    for ty in 0..py {
        for tx in 0..px {
            for r in 0..s {
                let row = (ty * s + r) * map.width() + tx * s;
                patch[r * s..(r + 1) * s].copy_from_slice(&map.values()[row..row + s]);
            }
            dct::dct2_fast_into(&patch, &mut spec, &mut scratch, basis);
            let at = ty * px + tx;
            for c in 0..s * s {
                vol.data[c * plane + at] = spec[c];
            }
        }
    }
    Ok(vol)
}

/// Reassembles the spatial map from a coefficient volume. Channels outside
/// `valid_freq` are zero by construction, so unpredicted frequencies simply
/// contribute nothing.
pub fn inverse_block_dct(vol: &CoefficientVolume, basis: &DctBasis) -> Result<DepthMap> {
    let s = basis.size();
    if s != vol.block() {
        return Err(Error::ShapeMismatch { lhs: vec![s], rhs: vec![vol.block()] });
    }
    let (py, px) = (vol.patches_y(), vol.patches_x());
    let (h, w) = (py * s, px * s);
    let plane = py * px;
    let mut values = vec![0.0; h * w];
    let mut spec = vec![0.0; s * s];
    let mut patch = vec![0.0; s * s];
    let mut scratch = vec![0.0; s * s];
    for ty in 0..py {
        for tx in 0..px {
            let at = ty * px + tx;
            for c in 0..s * s {
                spec[c] = vol.data[c * plane + at];
            }
            dct::idct2_fast_into(&spec, &mut patch, &mut scratch, basis);
            for r in 0..s {
                let row = (ty * s + r) * w + tx * s;
                values[row..row + s].copy_from_slice(&patch[r * s..(r + 1) * s]);
            }
        }
    }
    DepthMap::from_estimate(h, w, values)
}
