//! Symmetric demons force on three wrapped phase channels.

use crate::error::Result;
use crate::harp::{wrap, PhaseSet};
use crate::volume::diff::wrapped_gradient_values;
use crate::volume::interp::{cos_sin, Taps};
use crate::volume::{norm3, Grid3, VectorKind, VectorVolume};

use super::params::{MagnitudeThreshold, PviraParams};

/// Precomputed per-pair state reused across iterations.
pub(crate) struct DemonsContext<'a> {
    grid: Grid3,
    moving_cos: [Vec<f64>; 3],
    moving_sin: [Vec<f64>; 3],
    moving_mag: [&'a [f64]; 3],
    fixed_phase: [&'a [f64]; 3],
    fixed_mag: [&'a [f64]; 3],
    fixed_grad: [Vec<[f64; 3]>; 3],
    epsilon: f64,
    inv_sigma_i2: f64,
    step_cap: f64,
}

pub(crate) struct DemonsStep {
    pub update: Vec<[f64; 3]>,
    /// Mean |wrapped phase difference| over gated voxel/direction pairs.
    pub mean_error: f64,
}

impl<'a> DemonsContext<'a> {
    pub(crate) fn new(moving: &'a PhaseSet, fixed: &'a PhaseSet, params: &PviraParams) -> Result<Self> {
        moving.grid().check_same(fixed.grid())?;
        let grid = *fixed.grid();
        let mut moving_cos: [Vec<f64>; 3] = Default::default();
        let mut moving_sin: [Vec<f64>; 3] = Default::default();
        let mut fixed_grad: [Vec<[f64; 3]>; 3] = Default::default();
        for d in 0..3 {
            let (c, s) = cos_sin(&moving.phases()[d]);
            moving_cos[d] = c;
            moving_sin[d] = s;
            fixed_grad[d] = wrapped_gradient_values(&grid, fixed.phases()[d].values());
        }
        let epsilon = match params.magnitude_threshold {
            MagnitudeThreshold::Absolute(e) => e,
            MagnitudeThreshold::FractionOfMedian(f) => {
                f * moving.median_magnitude().min(fixed.median_magnitude())
            }
        };
        Ok(Self {
            grid,
            moving_cos,
            moving_sin,
            moving_mag: [0, 1, 2].map(|d| moving.magnitudes()[d].values()),
            fixed_phase: [0, 1, 2].map(|d| fixed.phases()[d].values()),
            fixed_mag: [0, 1, 2].map(|d| fixed.magnitudes()[d].values()),
            fixed_grad,
            epsilon,
            inv_sigma_i2: 1.0 / (params.sigma_i * params.sigma_i),
            step_cap: params.step_max_voxels * grid.min_spacing(),
        })
    }

    pub(crate) fn step(&self, disp: &[[f64; 3]]) -> DemonsStep {
        let n = self.grid.len();
        let mut warped: [Vec<f64>; 3] = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut warped_mag: [Vec<f64>; 3] = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (idx, &d) in disp.iter().enumerate() {
            let t = Taps::displaced(&self.grid, idx, d);
            for c in 0..3 {
                warped[c][idx] = wrap(t.sample(&self.moving_sin[c]).atan2(t.sample(&self.moving_cos[c])));
                warped_mag[c][idx] = t.sample(self.moving_mag[c]);
            }
        }
        let warped_grad = [0, 1, 2].map(|c| wrapped_gradient_values(&self.grid, &warped[c]));

        let mut update = vec![[0.0; 3]; n];
        let mut err_sum = 0.0;
        let mut err_count = 0usize;
        for idx in 0..n {
            let mut u = [0.0; 3];
            let mut used = 0usize;
            for c in 0..3 {
                if warped_mag[c][idx].min(self.fixed_mag[c][idx]) <= self.epsilon {
                    continue;
                }
                used += 1;
                let e = wrap(self.fixed_phase[c][idx] - warped[c][idx]);
                err_sum += e.abs();
                err_count += 1;
                let gf = self.fixed_grad[c][idx];
                let gm = warped_grad[c][idx];
                let g = [
                    0.5 * (gf[0] + gm[0]),
                    0.5 * (gf[1] + gm[1]),
                    0.5 * (gf[2] + gm[2]),
                ];
                let denom = g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + e * e * self.inv_sigma_i2;
                if denom > 0.0 {
                    let f = e / denom;
                    u[0] += f * g[0];
                    u[1] += f * g[1];
                    u[2] += f * g[2];
                }
            }
            if used == 0 {
                continue;
            }
            let inv = 1.0 / used as f64;
            u = [u[0] * inv, u[1] * inv, u[2] * inv];
            let len = norm3(u);
            if len > self.step_cap {
                let s = self.step_cap / len;
                u = [u[0] * s, u[1] * s, u[2] * s];
            }
            update[idx] = u;
        }
        DemonsStep {
            update,
            mean_error: if err_count > 0 {
                err_sum / err_count as f64
            } else {
                0.0
            },
        }
    }
}

/// One demons force evaluation at the current displacement.
///
/// For each direction d with usable magnitude on both sides:
/// `e_d = W(fixed_d - moving_d∘φ)`, `g_d` the mean of both wrapped phase
/// gradients, and the contribution `e_d·g_d / (|g_d|² + e_d²/σ_i²)`. The
/// contributions are averaged over the usable directions and the result is
/// capped at `step_max_voxels` times the smallest spacing.
pub fn demons_update(
    moving: &PhaseSet,
    fixed: &PhaseSet,
    current_disp: &VectorVolume,
    params: &PviraParams,
) -> Result<VectorVolume> {
    fixed.grid().check_same(current_disp.grid())?;
    current_disp.expect_kind(VectorKind::Displacement)?;
    let ctx = DemonsContext::new(moving, fixed, params)?;
    let step = ctx.step(current_disp.values());
    Ok(VectorVolume::from_parts(
        *fixed.grid(),
        step.update,
        VectorKind::Displacement,
    ))
}
