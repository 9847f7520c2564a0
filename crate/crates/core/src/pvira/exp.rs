//! Scaling and squaring.

use crate::error::Result;
use crate::volume::{compose_displacements, VectorKind, VectorVolume};

/// Smallest `S >= 0` with `max|v| / 2^S <= 0.5 · min spacing`.
pub fn squaring_steps(v: &VectorVolume) -> u32 {
    let limit = 0.5 * v.grid().min_spacing();
    let mut m = v.max_norm();
    let mut s = 0;
    while m > limit && s < 64 {
        m *= 0.5;
        s += 1;
    }
    s
}

/// Displacement of the time-1 flow of a stationary velocity field.
pub fn exp_velocity(v: &VectorVolume) -> Result<VectorVolume> {
    v.expect_kind(VectorKind::Velocity)?;
    let s = squaring_steps(v);
    let mut d = v
        .scaled(0.5f64.powi(s as i32))
        .with_kind(VectorKind::Displacement);
    for _ in 0..s {
        d = compose_displacements(&d, &d)?;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid3;

    fn grid() -> Grid3 {
        Grid3::new([10, 9, 6], [1.875, 1.875, 6.0], [0.0; 3]).unwrap()
    }

    #[test]
    fn zero_and_constant_fields() {
        let g = grid();
        let z = exp_velocity(&VectorVolume::zeros(g, VectorKind::Velocity)).unwrap();
        assert!(z.values().iter().all(|v| *v == [0.0; 3]));
        let t = [5.3, -2.1, 7.7];
        let c = exp_velocity(&VectorVolume::constant(g, t, VectorKind::Velocity)).unwrap();
        for v in c.values() {
            for a in 0..3 {
                assert!((v[a] - t[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_count() {
        let g = grid();
        let v = VectorVolume::constant(g, [0.9375, 0.0, 0.0], VectorKind::Velocity);
        assert_eq!(squaring_steps(&v), 0);
        let v = VectorVolume::constant(g, [0.94, 0.0, 0.0], VectorKind::Velocity);
        assert_eq!(squaring_steps(&v), 1);
        let v = VectorVolume::constant(g, [7.5, 0.0, 0.0], VectorKind::Velocity);
        assert_eq!(squaring_steps(&v), 3);
    }

    #[test]
    fn rejects_displacement_input() {
        let g = grid();
        assert!(exp_velocity(&VectorVolume::zeros(g, VectorKind::Displacement)).is_err());
    }

    /// A smooth field from the phantom family: the default phantom's
    /// frame-6 ground truth, reinterpreted as a velocity.
    fn phantom_velocity() -> VectorVolume {
        let ph = crate::phantom::PhantomConfig {
            dims: [32, 32, 12],
            noise_sigma: 0.0,
            ..Default::default()
        }
        .build()
        .unwrap();
        crate::phantom::ground_truth_displacement(&ph.model, &ph.grid, 6)
            .unwrap()
            .with_kind(VectorKind::Velocity)
    }

    #[test]
    fn smooth_field_inverse_consistency() {
        // Measured away from the faces: there the flow samples outside the
        // grid and clamped lookups cannot be inverted.
        let v = phantom_velocity();
        assert!(squaring_steps(&v) >= 2);
        let f = exp_velocity(&v).unwrap();
        let b = exp_velocity(&v.scaled(-1.0)).unwrap();
        let voxel = v.grid().min_spacing();
        for r in [compose_displacements(&f, &b).unwrap(), compose_displacements(&b, &f).unwrap()] {
            let e = r.max_norm_interior(3) / voxel;
            assert!(e < 0.1, "{e}");
        }
    }
}
