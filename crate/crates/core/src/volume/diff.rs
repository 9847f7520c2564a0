//! Finite-difference operators in physical units.
//!
//! Interior voxels use central differences; boundary faces fall back to
//! one-sided differences.

use super::{Grid3, ScalarVolume, VectorKind, VectorVolume};
use crate::error::Result;
use crate::harp::wrap;
use std::f64::consts::PI;

/// Partial derivative of `values` along `axis` at voxel `idx`.
#[inline]
pub(crate) fn partial(grid: &Grid3, values: &[f64], idx: usize, coord: usize, axis: usize) -> f64 {
    let n = grid.dims[axis];
    let h = grid.spacing[axis];
    let stride = [1, grid.dims[0], grid.dims[0] * grid.dims[1]][axis];
    if coord == 0 {
        (values[idx + stride] - values[idx]) / h
    } else if coord == n - 1 {
        (values[idx] - values[idx - stride]) / h
    } else {
        (values[idx + stride] - values[idx - stride]) / (2.0 * h)
    }
}

#[inline]
fn partial3(grid: &Grid3, values: &[[f64; 3]], idx: usize, coord: usize, axis: usize) -> [f64; 3] {
    let n = grid.dims[axis];
    let h = grid.spacing[axis];
    let stride = [1, grid.dims[0], grid.dims[0] * grid.dims[1]][axis];
    let (a, b, scale) = if coord == 0 {
        (idx + stride, idx, 1.0 / h)
    } else if coord == n - 1 {
        (idx, idx - stride, 1.0 / h)
    } else {
        (idx + stride, idx - stride, 0.5 / h)
    };
    let (p, q) = (values[a], values[b]);
    [
        (p[0] - q[0]) * scale,
        (p[1] - q[1]) * scale,
        (p[2] - q[2]) * scale,
    ]
}

pub(crate) fn gradient_values(grid: &Grid3, values: &[f64]) -> Vec<[f64; 3]> {
    (0..values.len())
        .map(|idx| {
            let c = grid.coords(idx);
            [
                partial(grid, values, idx, c[0], 0),
                partial(grid, values, idx, c[1], 1),
                partial(grid, values, idx, c[2], 2),
            ]
        })
        .collect()
}

pub fn gradient_central(v: &ScalarVolume) -> VectorVolume {
    VectorVolume::from_parts(
        v.grid,
        gradient_values(&v.grid, &v.values),
        VectorKind::Gradient,
    )
}

/// Gradient of a wrapped phase.
///
/// Per axis, the difference of the raw phase and the difference of the
/// phase shifted by π (which moves the seam elsewhere) are both taken; the
/// one with the smaller magnitude wins.
pub fn wrapped_gradient(phase: &ScalarVolume) -> VectorVolume {
    VectorVolume::from_parts(
        phase.grid,
        wrapped_gradient_values(&phase.grid, &phase.values),
        VectorKind::Gradient,
    )
}

pub(crate) fn wrapped_gradient_values(grid: &Grid3, phase: &[f64]) -> Vec<[f64; 3]> {
    let shifted: Vec<f64> = phase.iter().map(|&t| wrap(t + PI)).collect();
    (0..phase.len())
        .map(|idx| {
            let c = grid.coords(idx);
            let mut g = [0.0; 3];
            for axis in 0..3 {
                let raw = partial(grid, phase, idx, c[axis], axis);
                let alt = partial(grid, &shifted, idx, c[axis], axis);
                // ties keep the raw difference
                g[axis] = if alt.abs() < raw.abs() * (1.0 - 1e-9) { alt } else { raw };
            }
            g
        })
        .collect()
}

pub fn divergence(v: &VectorVolume) -> ScalarVolume {
    let grid = v.grid;
    let values = (0..grid.len())
        .map(|idx| {
            let c = grid.coords(idx);
            partial3(&grid, &v.values, idx, c[0], 0)[0]
                + partial3(&grid, &v.values, idx, c[1], 1)[1]
                + partial3(&grid, &v.values, idx, c[2], 2)[2]
        })
        .collect();
    ScalarVolume::from_parts(grid, values)
}

/// `det(I + ∇u)` per voxel.
pub fn jacobian_determinant(disp: &VectorVolume) -> Result<ScalarVolume> {
    disp.expect_kind(VectorKind::Displacement)?;
    let grid = disp.grid;
    let values = (0..grid.len())
        .map(|idx| {
            let c = grid.coords(idx);
            // columns: derivative of u along x, y, z
            let dx = partial3(&grid, &disp.values, idx, c[0], 0);
            let dy = partial3(&grid, &disp.values, idx, c[1], 1);
            let dz = partial3(&grid, &disp.values, idx, c[2], 2);
            let m = [
                [1.0 + dx[0], dy[0], dz[0]],
                [dx[1], 1.0 + dy[1], dz[1]],
                [dx[2], dy[2], 1.0 + dz[2]],
            ];
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        })
        .collect();
    Ok(ScalarVolume::from_parts(grid, values))
}
