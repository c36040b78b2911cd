//! Global-to-local iterative reconstruction: coefficient corrections are
//! accumulated one schedule step at a time, frequencies not yet predicted
//! stay zero, and every completed step yields an intermediate depth map.

use std::sync::Arc;

use crate::dct::{make_basis, DctBasis};
use crate::error::{Error, Result};
use crate::spectrum::{
    forward_block_dct, inverse_block_dct, CoefficientVolume, DepthMap, GroupSchedule,
};

/// Accumulated prediction state. After `k` completed steps the coefficient
/// estimate covers exactly the union of schedule steps `0..k`, everything
/// else is zero, and `depth_history` holds one reconstruction per step.
#[derive(Debug, Clone)]
pub struct ProgressiveState {
    schedule: GroupSchedule,
    basis: Arc<DctBasis>,
    completed: usize,
    coeffs: CoefficientVolume,
    depth_history: Vec<DepthMap>,
}

impl ProgressiveState {
    /// Fresh state for a map of the given extents: no steps applied, all
    /// coefficients zero, no channel valid.
    pub fn new(schedule: GroupSchedule, height: usize, width: usize) -> Result<Self> {
        let s = schedule.block();
        if height % s != 0 || width % s != 0 {
            return Err(Error::InvalidArgument(format!(
                "extents {height}x{width} are not multiples of the schedule block {s}"
            )));
        }
        let basis = make_basis(s)?;
        let coeffs = CoefficientVolume::zeros(s, height / s, width / s);
        Ok(ProgressiveState { schedule, basis, completed: 0, coeffs, depth_history: Vec::new() })
    }

    pub fn schedule(&self) -> &GroupSchedule {
        &self.schedule
    }

    /// Number of completed steps.
    pub fn completed_steps(&self) -> usize {
        self.completed
    }

    pub fn coefficients(&self) -> &CoefficientVolume {
        &self.coeffs
    }

    /// One reconstruction per completed step.
    pub fn depth_history(&self) -> &[DepthMap] {
        &self.depth_history
    }

    /// Applies the correction for the next schedule step. `delta` may carry
    /// any channel already predicted plus the channels the new step
    /// introduces; anything further ahead is a schedule violation.
    pub fn apply_update(&mut self, delta: &CoefficientVolume) -> Result<()> {
        if self.completed >= self.schedule.len() {
            return Err(Error::ScheduleViolation(format!(
                "all {} schedule steps already applied",
                self.schedule.len()
            )));
        }
        let allowed = self.schedule.cumulative_mask(self.completed);
        for (c, (&is_set, &ok)) in delta.valid_freq().iter().zip(&allowed).enumerate() {
            if is_set && !ok {
                let (u, v) = CoefficientVolume::freq_of(delta.block(), c);
                return Err(Error::ScheduleViolation(format!(
                    "delta carries frequency ({u},{v}) which is beyond step {}",
                    self.completed
                )));
            }
        }
        self.coeffs.accumulate(delta)?;
        // The step's own channels become valid even if the delta left some
        // of them at zero.
        for &(u, v) in self.schedule.step(self.completed) {
            let c = CoefficientVolume::channel_of(self.coeffs.block(), u, v);
            if !self.coeffs.valid_freq()[c] {
                let zeros = vec![0.0; self.coeffs.patches_y() * self.coeffs.patches_x()];
                self.coeffs.set_channel(c, &zeros)?;
            }
        }
        self.completed += 1;
        let depth = inverse_block_dct(&self.coeffs, &self.basis)?;
        self.depth_history.push(depth);
        Ok(())
    }

    /// Current spatial estimate: inverse block transform of the accumulated
    /// coefficients, with unpredicted channels contributing zero. A fresh
    /// state therefore reconstructs the all-zero map.
    pub fn current_depth(&self) -> Result<DepthMap> {
        inverse_block_dct(&self.coeffs, &self.basis)
    }
}

/// Plays the schedule back from ground truth: step `t` reconstructs the map
/// from the true spectrum restricted to steps `0..=t`. The final step
/// reproduces the input exactly (up to f64 round-off).
///
/// Implemented by direct truncation of the true spectrum, independently of
/// [`ProgressiveState::apply_update`], so the two paths can check each
/// other.
pub fn reconstruct_from_truth(map: &DepthMap, schedule: &GroupSchedule) -> Result<Vec<DepthMap>> {
    let basis = make_basis(schedule.block())?;
    let full = forward_block_dct(map, &basis)?;
    let mut out = Vec::with_capacity(schedule.len());
    for k in 0..schedule.len() {
        let kept = full.restricted(&schedule.cumulative_mask(k))?;
        out.push(inverse_block_dct(&kept, &basis)?);
    }
    Ok(out)
}

/// The true coefficient deltas that drive [`ProgressiveState`] to replay
/// [`reconstruct_from_truth`]: step `k`'s delta is the true spectrum
/// restricted to exactly the channels of step `k`.
pub fn truth_deltas(map: &DepthMap, schedule: &GroupSchedule) -> Result<Vec<CoefficientVolume>> {
    let basis = make_basis(schedule.block())?;
    let full = forward_block_dct(map, &basis)?;
    let mut deltas = Vec::with_capacity(schedule.len());
    for k in 0..schedule.len() {
        let mut keep = vec![false; full.channels()];
        for &(u, v) in schedule.step(k) {
            keep[CoefficientVolume::channel_of(full.block(), u, v)] = true;
        }
        deltas.push(full.restricted(&keep)?);
    }
    Ok(deltas)
}
