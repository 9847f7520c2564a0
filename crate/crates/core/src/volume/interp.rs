//! Trilinear sampling and pull-back warping.
//!
//! Out-of-grid coordinates clamp to the boundary face before interpolation.

use super::{Grid3, ScalarVolume, VectorKind, VectorVolume};
use crate::error::Result;
use crate::harp::wrap;

/// The eight trilinear taps around a continuous index.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Taps {
    pub idx: [usize; 8],
    pub w: [f64; 8],
}

#[inline]
fn locate(c: f64, n: usize) -> (usize, f64) {
    let c = if c.is_nan() {
        0.0
    } else {
        c.clamp(0.0, (n - 1) as f64)
    };
    let i0 = (c.floor() as usize).min(n - 2);
    (i0, c - i0 as f64)
}

impl Taps {
    #[inline]
    pub(crate) fn at_index(grid: &Grid3, ci: [f64; 3]) -> Self {
        let [nx, ny, _] = grid.dims;
        let (i0, tx) = locate(ci[0], grid.dims[0]);
        let (j0, ty) = locate(ci[1], grid.dims[1]);
        let (k0, tz) = locate(ci[2], grid.dims[2]);
        let base = i0 + nx * (j0 + ny * k0);
        let sx = 1;
        let sy = nx;
        let sz = nx * ny;
        let (ux, uy, uz) = (1.0 - tx, 1.0 - ty, 1.0 - tz);
        Taps {
            idx: [
                base,
                base + sx,
                base + sy,
                base + sx + sy,
                base + sz,
                base + sx + sz,
                base + sy + sz,
                base + sx + sy + sz,
            ],
            w: [
                ux * uy * uz,
                tx * uy * uz,
                ux * ty * uz,
                tx * ty * uz,
                ux * uy * tz,
                tx * uy * tz,
                ux * ty * tz,
                tx * ty * tz,
            ],
        }
    }

    /// Taps at voxel `idx` displaced by `d` mm.
    #[inline]
    pub(crate) fn displaced(grid: &Grid3, idx: usize, d: [f64; 3]) -> Self {
        let c = grid.coords(idx);
        let s = grid.spacing;
        Self::at_index(
            grid,
            [
                c[0] as f64 + d[0] / s[0],
                c[1] as f64 + d[1] / s[1],
                c[2] as f64 + d[2] / s[2],
            ],
        )
    }

    #[inline]
    pub(crate) fn sample(&self, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for n in 0..8 {
            acc += self.w[n] * values[self.idx[n]];
        }
        acc
    }

    #[inline]
    pub(crate) fn sample3(&self, values: &[[f64; 3]]) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for n in 0..8 {
            let v = values[self.idx[n]];
            let w = self.w[n];
            acc[0] += w * v[0];
            acc[1] += w * v[1];
            acc[2] += w * v[2];
        }
        acc
    }
}

pub fn trilinear_sample(v: &ScalarVolume, p: [f64; 3]) -> f64 {
    Taps::at_index(&v.grid, v.grid.continuous_index(p)).sample(&v.values)
}

pub fn trilinear_sample_vector(v: &VectorVolume, p: [f64; 3]) -> [f64; 3] {
    Taps::at_index(&v.grid, v.grid.continuous_index(p)).sample3(&v.values)
}

/// Pull-back warp: `out(x) = image(x + disp(x))`.
pub fn warp_scalar(image: &ScalarVolume, disp: &VectorVolume) -> Result<ScalarVolume> {
    image.grid.check_same(&disp.grid)?;
    disp.expect_kind(VectorKind::Displacement)?;
    let grid = image.grid;
    let values = disp
        .values
        .iter()
        .enumerate()
        .map(|(idx, &d)| Taps::displaced(&grid, idx, d).sample(&image.values))
        .collect();
    Ok(ScalarVolume::from_parts(grid, values))
}

/// Pull-back warp of a wrapped phase volume.
///
/// Interpolates `cos` and `sin` separately and takes `atan2`, so samples
/// straddling the ±π seam do not average to zero.
pub fn warp_phase(phase: &ScalarVolume, disp: &VectorVolume) -> Result<ScalarVolume> {
    phase.grid.check_same(&disp.grid)?;
    disp.expect_kind(VectorKind::Displacement)?;
    let grid = phase.grid;
    let (cos, sin) = cos_sin(phase);
    let values = disp
        .values
        .iter()
        .enumerate()
        .map(|(idx, &d)| {
            let t = Taps::displaced(&grid, idx, d);
            wrap(t.sample(&sin).atan2(t.sample(&cos)))
        })
        .collect();
    Ok(ScalarVolume::from_parts(grid, values))
}

pub(crate) fn cos_sin(phase: &ScalarVolume) -> (Vec<f64>, Vec<f64>) {
    phase.values.iter().map(|t| (t.cos(), t.sin())).unzip()
}

/// `result(x) = inner(x) + outer(x + inner(x))`.
///
/// Pull-back warping by the result equals warping by `outer` and then by
/// `inner`, so a sequence of frame-to-frame maps folds as
/// `psi_n = compose(psi_{n-1}, phi_{n-1})`.
pub fn compose_displacements(outer: &VectorVolume, inner: &VectorVolume) -> Result<VectorVolume> {
    outer.grid.check_same(&inner.grid)?;
    outer.expect_kind(VectorKind::Displacement)?;
    inner.expect_kind(VectorKind::Displacement)?;
    let grid = inner.grid;
    let values = inner
        .values
        .iter()
        .enumerate()
        .map(|(idx, &d)| {
            let o = Taps::displaced(&grid, idx, d).sample3(&outer.values);
            [d[0] + o[0], d[1] + o[1], d[2] + o[2]]
        })
        .collect();
    Ok(VectorVolume::from_parts(grid, values, VectorKind::Displacement))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use std::f64::consts::PI;

    fn grid() -> Grid3 {
        Grid3::new([6, 5, 4], [1.875, 1.875, 6.0], [1.0, -2.0, 0.5]).unwrap()
    }

    #[test]
    fn sample_reproduces_nodes() {
        let g = grid();
        let v = ScalarVolume::from_fn(g, |p| (p[0] * 0.3).sin() + p[1] * p[2]).unwrap();
        for idx in 0..g.len() {
            let p = g.world_of(idx);
            assert_eq!(trilinear_sample(&v, p), v.values()[idx]);
        }
    }

    #[test]
    fn sample_constant_and_linear_midpoint() {
        let g = grid();
        let c = ScalarVolume::constant(g, 2.5);
        for p in [[0.0, 0.0, 0.0], [100.0, -50.0, 3.3], [3.1, 1.2, 7.7]] {
            assert!((trilinear_sample(&c, p) - 2.5).abs() < 1e-14);
        }
        let ramp = ScalarVolume::from_fn(g, |p| p[0]).unwrap();
        let a = g.world(2, 1, 1);
        let b = g.world(3, 1, 1);
        let mid = [(a[0] + b[0]) / 2.0, a[1], a[2]];
        let expected = (ramp.at(2, 1, 1) + ramp.at(3, 1, 1)) / 2.0;
        assert!((trilinear_sample(&ramp, mid) - expected).abs() < 1e-12);
    }

    #[test]
    fn sample_clamps_outside() {
        let g = grid();
        let ramp = ScalarVolume::from_fn(g, |p| p[0]).unwrap();
        let node = g.world(0, 1, 0);
        let lo = trilinear_sample(&ramp, [-100.0, node[1], node[2]]);
        let hi = trilinear_sample(&ramp, [100.0, node[1], node[2]]);
        assert_eq!(lo, ramp.at(0, 1, 0));
        assert_eq!(hi, ramp.at(5, 1, 0));
    }

    #[test]
    fn warp_identity_and_shift() {
        let g = grid();
        let ramp = ScalarVolume::from_fn(g, |p| 3.0 * p[0] - p[2]).unwrap();
        let zero = VectorVolume::zeros(g, VectorKind::Displacement);
        assert_eq!(warp_scalar(&ramp, &zero).unwrap(), ramp);

        let shift = VectorVolume::constant(g, [1.875, 0.0, 0.0], VectorKind::Displacement);
        let out = warp_scalar(&ramp, &shift).unwrap();
        for k in 0..4 {
            for j in 0..5 {
                for i in 0..5 {
                    let want = ramp.at(i, j, k) + 3.0 * 1.875;
                    assert!((out.at(i, j, k) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn warp_rejects_mismatch_and_velocity() {
        let g = grid();
        let other = Grid3::new([6, 5, 4], [1.0; 3], [0.0; 3]).unwrap();
        let img = ScalarVolume::zeros(g);
        let d = VectorVolume::zeros(other, VectorKind::Displacement);
        assert!(matches!(warp_scalar(&img, &d), Err(Error::GridMismatch)));
        let v = VectorVolume::zeros(g, VectorKind::Velocity);
        assert!(matches!(
            warp_scalar(&img, &v),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn warp_phase_handles_seam() {
        let g = Grid3::new([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        let phase =
            ScalarVolume::from_fn(g, |p| if p[0] < 0.5 { PI - 0.1 } else { -PI + 0.1 }).unwrap();
        let half = VectorVolume::constant(g, [0.5, 0.0, 0.0], VectorKind::Displacement);
        let out = warp_phase(&phase, &half).unwrap();
        let v = out.at(0, 0, 0);
        assert!((v.abs() - PI).abs() < 1e-9, "got {v}");
        assert!((-PI..PI).contains(&v));

        let zero = VectorVolume::zeros(g, VectorKind::Displacement);
        let same = warp_phase(&phase, &zero).unwrap();
        for (a, b) in same.values().iter().zip(phase.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_identity_and_translations() {
        let g = grid();
        let d = VectorVolume::from_fn(g, VectorKind::Displacement, |p| {
            [0.3 * (p[1] * 0.2).sin(), 0.1 * p[0].cos(), 0.2]
        })
        .unwrap();
        let zero = VectorVolume::zeros(g, VectorKind::Displacement);
        assert_eq!(compose_displacements(&zero, &d).unwrap(), d);
        assert_eq!(compose_displacements(&d, &zero).unwrap(), d);

        let t1 = VectorVolume::constant(g, [0.5, -0.25, 1.0], VectorKind::Displacement);
        let t2 = VectorVolume::constant(g, [0.125, 0.75, -2.0], VectorKind::Displacement);
        let c = compose_displacements(&t1, &t2).unwrap();
        for v in c.values() {
            for (a, b) in v.iter().zip([0.625, 0.5, -1.0]) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn compose_is_associative_on_smooth_fields() {
        let ph = crate::phantom::PhantomConfig {
            dims: [32, 32, 12],
            noise_sigma: 0.0,
            ..Default::default()
        }
        .build()
        .unwrap();
        let f = |n| crate::phantom::ground_truth_displacement(&ph.model, &ph.grid, n).unwrap();
        let (a, b, c) = (f(3), f(5), f(8));
        let left = compose_displacements(&compose_displacements(&a, &b).unwrap(), &c).unwrap();
        let right = compose_displacements(&a, &compose_displacements(&b, &c).unwrap()).unwrap();
        let diff = left
            .values()
            .iter()
            .zip(right.values())
            .map(|(l, r)| crate::volume::norm3([l[0] - r[0], l[1] - r[1], l[2] - r[2]]))
            .fold(0.0, f64::max);
        assert!(diff < 0.05 * ph.grid.min_spacing(), "{diff}");
    }
}
