//! Sampled 3D fields on a regular lattice.
//!
//! All vector fields carry physical millimetres. Index space only appears
//! inside the interpolation and differencing kernels, where the per-axis
//! spacing is applied explicitly.

pub(crate) mod diff;
pub(crate) mod interp;
pub(crate) mod smooth;

pub use diff::{divergence, gradient_central, jacobian_determinant, wrapped_gradient};
pub use interp::{
    compose_displacements, trilinear_sample, trilinear_sample_vector, warp_phase, warp_scalar,
};
pub use smooth::{gaussian_kernel, gaussian_smooth, gaussian_smooth_vector};

use crate::error::{Error, Result};

/// Geometry of a 3D sampling lattice.
///
/// Voxel `(i, j, k)` sits at `origin + (i*sx, j*sy, k*sz)` in mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid3 {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl Grid3 {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidGrid(format!("dims must be >= 2, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite origin {origin:?}")));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn world(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    #[inline]
    pub fn world_of(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.coords(idx);
        self.world(i, j, k)
    }

    /// Continuous (fractional) voxel index of a world point, unclamped.
    #[inline]
    pub fn continuous_index(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// True when voxel `idx` is at least `margin` voxels from every face.
    #[inline]
    pub fn is_interior(&self, idx: usize, margin: usize) -> bool {
        let c = self.coords(idx);
        (0..3).all(|a| c[a] >= margin && c[a] + margin < self.dims[a])
    }

    pub(crate) fn check_same(&self, other: &Grid3) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// A scalar field (image, phase, magnitude) on a [`Grid3`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarVolume {
    grid: Grid3,
    values: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(grid: Grid3, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(bad));
        }
        Ok(Self { grid, values })
    }

    /// Skips the finiteness scan; callers guarantee the length.
    pub(crate) fn from_parts(grid: Grid3, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid3) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid3, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Evaluates `f` at the world coordinate of every voxel.
    pub fn from_fn(grid: Grid3, mut f: impl FnMut([f64; 3]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|idx| f(grid.world_of(idx))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `(min, max)` over voxels at least `margin` from every face;
    /// `(inf, -inf)` when no voxel qualifies.
    pub fn interior_range(&self, margin: usize) -> (f64, f64) {
        self.values
            .iter()
            .enumerate()
            .filter(|(idx, _)| self.grid.is_interior(*idx, margin))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &v)| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// 2D plane at a fixed index along `axis`.
    pub fn slice(&self, axis: usize, index: usize) -> Plane {
        let [nx, ny, nz] = self.grid.dims;
        match axis {
            0 => Plane::from_fn(ny, nz, |a, b| self.at(index, a, b)),
            1 => Plane::from_fn(nx, nz, |a, b| self.at(a, index, b)),
            _ => Plane::from_fn(nx, ny, |a, b| self.at(a, b, index)),
        }
    }
}

/// A 2D row-major plane (first coordinate fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                got: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for b in 0..height {
            for a in 0..width {
                values.push(f(a, b));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    #[inline]
    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.values[a + self.width * b]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VectorKind {
    Displacement,
    Velocity,
    /// Spatial derivative of a scalar field (mm⁻¹-scaled).
    Gradient,
}

impl VectorKind {
    pub fn name(self) -> &'static str {
        match self {
            VectorKind::Displacement => "displacement",
            VectorKind::Velocity => "velocity",
            VectorKind::Gradient => "gradient",
        }
    }
}

/// A field of 3-vectors in mm: either a displacement or a stationary velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorVolume {
    grid: Grid3,
    values: Vec<[f64; 3]>,
    kind: VectorKind,
}

impl VectorVolume {
    pub fn new(grid: Grid3, values: Vec<[f64; 3]>, kind: VectorKind) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite(bad));
        }
        Ok(Self { grid, values, kind })
    }

    pub(crate) fn from_parts(grid: Grid3, values: Vec<[f64; 3]>, kind: VectorKind) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values, kind }
    }

    pub fn zeros(grid: Grid3, kind: VectorKind) -> Self {
        Self::constant(grid, [0.0; 3], kind)
    }

    pub fn constant(grid: Grid3, value: [f64; 3], kind: VectorKind) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
            kind,
        }
    }

    pub fn from_fn(
        grid: Grid3,
        kind: VectorKind,
        mut f: impl FnMut([f64; 3]) -> [f64; 3],
    ) -> Result<Self> {
        let values = (0..grid.len()).map(|idx| f(grid.world_of(idx))).collect();
        Self::new(grid, values, kind)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    pub fn into_values(self) -> Vec<[f64; 3]> {
        self.values
    }

    pub fn kind(&self) -> VectorKind {
        self.kind
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        self.values[self.grid.index(i, j, k)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }

    /// Same values reinterpreted as another kind (e.g. a velocity's time-1 flow approximation).
    pub fn with_kind(mut self, kind: VectorKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_parts(
            self.grid,
            self.values
                .iter()
                .map(|v| [v[0] * factor, v[1] * factor, v[2] * factor])
                .collect(),
            self.kind,
        )
    }

    /// Voxelwise sum; kinds must agree.
    pub fn add(&self, other: &VectorVolume) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        other.expect_kind(self.kind)?;
        Ok(Self::from_parts(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
                .collect(),
            self.kind,
        ))
    }

    pub fn component(&self, c: usize) -> ScalarVolume {
        ScalarVolume::from_parts(self.grid, self.values.iter().map(|v| v[c]).collect())
    }

    pub fn norms(&self) -> ScalarVolume {
        ScalarVolume::from_parts(self.grid, self.values.iter().map(|v| norm3(*v)).collect())
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|v| norm3(*v)).fold(0.0, f64::max)
    }

    /// Largest vector norm over voxels at least `margin` from every face.
    pub fn max_norm_interior(&self, margin: usize) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(idx, _)| self.grid.is_interior(*idx, margin))
            .map(|(_, v)| norm3(*v))
            .fold(0.0, f64::max)
    }

    pub(crate) fn expect_kind(&self, kind: VectorKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::KindMismatch {
                expected: kind.name(),
                got: self.kind.name(),
            })
        }
    }
}

#[inline]
pub fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}
