//! Harmonic phase (HARP) extraction.
//!
//! A tagged volume is transformed to the frequency domain, everything
//! outside a ball around one tag's spectral peak is removed, and the
//! inverse transform yields a complex harmonic image whose angle is a
//! material property of the tissue (up to wrapping).
//!
//! Frequencies are physical: bin `m` of an `n`-point axis with spacing `h`
//! maps to `2π·m'/(n·h)` rad/mm with `m'` the signed bin index, so
//! anisotropic voxels need no special casing.

use std::f64::consts::{PI, TAU};

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{angular_frequency, Fft3};
use crate::volume::{Grid3, ScalarVolume};

/// Wraps an angle into `[-π, π)`.
#[inline]
pub fn wrap(theta: f64) -> f64 {
    if (-PI..PI).contains(&theta) {
        return theta;
    }
    let r = theta - TAU * ((theta + PI) / TAU).floor();
    if r >= PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterProfile {
    HardSphere,
    /// Unit gain to `radius·(1-rolloff)`, cosine taper to zero at `radius·(1+rolloff)`.
    RaisedCosine { rolloff: f64 },
}

impl Default for FilterProfile {
    fn default() -> Self {
        FilterProfile::RaisedCosine { rolloff: 0.25 }
    }
}

/// Band-pass around one tag harmonic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarpFilterSpec {
    center: [f64; 3],
    radius: f64,
    profile: FilterProfile,
}

pub const DEFAULT_RADIUS_FRACTION: f64 = 0.4;

impl HarpFilterSpec {
    pub fn new(center: [f64; 3], radius: f64, profile: FilterProfile) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "filter radius must be positive, got {radius}"
            )));
        }
        if let FilterProfile::RaisedCosine { rolloff } = profile {
            if !(rolloff > 0.0 && rolloff < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "rolloff must lie in (0, 1), got {rolloff}"
                )));
            }
        }
        let spec = Self {
            center,
            radius,
            profile,
        };
        if spec.support_radius() >= norm(center) {
            return Err(Error::FilterOverlapsDc);
        }
        Ok(spec)
    }

    /// Filter for a tag of the given period along one axis, default radius and profile.
    pub fn for_tag(period_mm: f64, axis: usize) -> Result<Self> {
        Self::for_wave_vector(axis_wave_vector(period_mm, axis), FilterProfile::default())
    }

    pub fn for_wave_vector(k: [f64; 3], profile: FilterProfile) -> Result<Self> {
        Self::new(k, DEFAULT_RADIUS_FRACTION * norm(k), profile)
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn profile(&self) -> FilterProfile {
        self.profile
    }

    fn support_radius(&self) -> f64 {
        match self.profile {
            FilterProfile::HardSphere => self.radius,
            FilterProfile::RaisedCosine { rolloff } => self.radius * (1.0 + rolloff),
        }
    }

    /// Gain at angular frequency `w` (rad/mm).
    pub fn gain(&self, w: [f64; 3]) -> f64 {
        let d = norm([
            w[0] - self.center[0],
            w[1] - self.center[1],
            w[2] - self.center[2],
        ]);
        match self.profile {
            FilterProfile::HardSphere => {
                if d <= self.radius {
                    1.0
                } else {
                    0.0
                }
            }
            FilterProfile::RaisedCosine { rolloff } => {
                let inner = self.radius * (1.0 - rolloff);
                let outer = self.radius * (1.0 + rolloff);
                if d <= inner {
                    1.0
                } else if d >= outer {
                    0.0
                } else {
                    0.5 * (1.0 + (PI * (d - inner) / (outer - inner)).cos())
                }
            }
        }
    }
}

pub fn axis_wave_vector(period_mm: f64, axis: usize) -> [f64; 3] {
    let mut k = [0.0; 3];
    k[axis] = TAU / period_mm;
    k
}

#[inline]
fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Applies the band-pass to a complex volume in place.
pub fn bandpass(grid: &Grid3, data: &mut [Complex64], spec: &HarpFilterSpec, fft: &Fft3) {
    let [nx, ny, nz] = grid.dims();
    let h = grid.spacing();
    fft.forward(data);
    let wx: Vec<f64> = (0..nx).map(|m| angular_frequency(m, nx, h[0])).collect();
    let wy: Vec<f64> = (0..ny).map(|m| angular_frequency(m, ny, h[1])).collect();
    let wz: Vec<f64> = (0..nz).map(|m| angular_frequency(m, nz, h[2])).collect();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let g = spec.gain([wx[i], wy[j], wz[k]]);
                let z = &mut data[i + nx * (j + ny * k)];
                if g == 0.0 {
                    *z = Complex64::default();
                } else if g != 1.0 {
                    *z *= g;
                }
            }
        }
    }
    fft.inverse(data);
}

/// Complex harmonic image of one tag direction.
pub fn harmonic_image(image: &ScalarVolume, spec: &HarpFilterSpec) -> Vec<Complex64> {
    let fft = Fft3::new(image.grid().dims());
    let mut data: Vec<Complex64> = image
        .values()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    bandpass(image.grid(), &mut data, spec, &fft);
    data
}

/// Wrapped phase and modulus of a complex volume.
pub fn phase_and_magnitude(grid: &Grid3, data: &[Complex64]) -> (ScalarVolume, ScalarVolume) {
    let phase = data.iter().map(|z| wrap(z.im.atan2(z.re))).collect();
    let mag = data.iter().map(|z| z.norm()).collect();
    (
        ScalarVolume::from_parts(*grid, phase),
        ScalarVolume::from_parts(*grid, mag),
    )
}

pub fn extract_phase(
    image: &ScalarVolume,
    spec: &HarpFilterSpec,
) -> Result<(ScalarVolume, ScalarVolume)> {
    let data = harmonic_image(image, spec);
    Ok(phase_and_magnitude(image.grid(), &data))
}

/// Three wrapped harmonic phases plus their magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSet {
    phases: [ScalarVolume; 3],
    magnitudes: [ScalarVolume; 3],
    specs: [HarpFilterSpec; 3],
}

impl PhaseSet {
    pub fn new(
        phases: [ScalarVolume; 3],
        magnitudes: [ScalarVolume; 3],
        specs: [HarpFilterSpec; 3],
    ) -> Result<Self> {
        let grid = *phases[0].grid();
        for v in phases.iter().chain(magnitudes.iter()) {
            grid.check_same(v.grid())?;
        }
        for p in &phases {
            if let Some(bad) = p.values().iter().position(|t| !(-PI..PI).contains(t)) {
                return Err(Error::InvalidParameter(format!(
                    "phase value {} at voxel {bad} outside [-π, π)",
                    p.values()[bad]
                )));
            }
        }
        for m in &magnitudes {
            if let Some(bad) = m.values().iter().position(|&x| x < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "negative magnitude at voxel {bad}"
                )));
            }
        }
        Ok(Self {
            phases,
            magnitudes,
            specs,
        })
    }

    pub fn grid(&self) -> &Grid3 {
        self.phases[0].grid()
    }

    pub fn phases(&self) -> &[ScalarVolume; 3] {
        &self.phases
    }

    pub fn magnitudes(&self) -> &[ScalarVolume; 3] {
        &self.magnitudes
    }

    pub fn specs(&self) -> &[HarpFilterSpec; 3] {
        &self.specs
    }

    /// Median over all three magnitude volumes.
    pub fn median_magnitude(&self) -> f64 {
        let mut all: Vec<f64> = self
            .magnitudes
            .iter()
            .flat_map(|m| m.values().iter().copied())
            .collect();
        median_in_place(&mut all)
    }
}

pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn extract_phase_set(image: &ScalarVolume, specs: [HarpFilterSpec; 3]) -> Result<PhaseSet> {
    let fft = Fft3::new(image.grid().dims());
    let mut phases = Vec::with_capacity(3);
    let mut mags = Vec::with_capacity(3);
    for spec in &specs {
        let mut data: Vec<Complex64> = image
            .values()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        bandpass(image.grid(), &mut data, spec, &fft);
        let (p, m) = phase_and_magnitude(image.grid(), &data);
        phases.push(p);
        mags.push(m);
    }
    let phases: [ScalarVolume; 3] = phases.try_into().expect("three phases");
    let mags: [ScalarVolume; 3] = mags.try_into().expect("three magnitudes");
    PhaseSet::new(phases, mags, specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_examples() {
        assert!((wrap(1.5 * PI) + 0.5 * PI).abs() < 1e-12);
        assert_eq!(wrap(PI), -PI);
        assert_eq!(wrap(-PI), -PI);
        assert_eq!(wrap(0.0), 0.0);
        assert!(wrap(-1e-17) < PI);
    }

    #[test]
    fn wrap_matches_floor_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let t: f64 = rng.random_range(-100.0..100.0);
            let reference = t - TAU * (t / TAU + 0.5).floor();
            assert!((wrap(t) - reference).abs() < 1e-12, "{t}");
        }
    }

    proptest! {
        #[test]
        fn wrap_is_periodic_and_bounded(t in -1e3f64..1e3, m in -20i32..20) {
            let w = wrap(t);
            prop_assert!((-PI..PI).contains(&w));
            let shifted = wrap(t + TAU * m as f64);
            let d = (shifted - w).abs();
            prop_assert!(d < 1e-9 || (TAU - d).abs() < 1e-9);
        }
    }

    #[test]
    fn spec_rejects_dc_overlap() {
        let k = axis_wave_vector(12.0, 0);
        assert!(matches!(
            HarpFilterSpec::new(k, 1.0 * k[0], FilterProfile::HardSphere),
            Err(Error::FilterOverlapsDc)
        ));
        assert!(matches!(
            HarpFilterSpec::new(k, 0.9 * k[0], FilterProfile::default()),
            Err(Error::FilterOverlapsDc)
        ));
        assert!(HarpFilterSpec::new(k, 0.4 * k[0], FilterProfile::default()).is_ok());
    }

    fn grid() -> Grid3 {
        Grid3::new([32, 32, 12], [1.875, 1.875, 6.0], [0.0; 3]).unwrap()
    }

    #[test]
    fn constant_image_has_no_harmonic() {
        let g = grid();
        let spec = HarpFilterSpec::for_tag(12.0, 0).unwrap();
        let (_, mag) = extract_phase(&ScalarVolume::constant(g, 5.0), &spec).unwrap();
        assert!(mag.values().iter().all(|&m| m < 1e-12));
    }

    #[test]
    fn single_harmonic_phase() {
        let g = grid();
        // 32 * 1.875 = 60 mm = 5 periods of 12 mm
        let k = axis_wave_vector(12.0, 0);
        let img = ScalarVolume::from_fn(g, |p| (k[0] * p[0]).cos()).unwrap();
        let spec = HarpFilterSpec::for_tag(12.0, 0).unwrap();
        let (phase, mag) = extract_phase(&img, &spec).unwrap();
        for idx in 0..g.len() {
            let want = wrap(k[0] * g.world_of(idx)[0]);
            assert!(wrap(phase.values()[idx] - want).abs() < 1e-9);
            assert!((mag.values()[idx] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn scaling_image_scales_magnitude_only() {
        let g = grid();
        let k = axis_wave_vector(12.0, 1);
        let img = ScalarVolume::from_fn(g, |p| (k[1] * p[1] + 0.3 * (p[0] * 0.05).sin()).cos())
            .unwrap();
        let spec = HarpFilterSpec::for_tag(12.0, 1).unwrap();
        let (p1, m1) = extract_phase(&img, &spec).unwrap();
        let (p2, m2) = extract_phase(&img.map(|v| 2.0 * v).unwrap(), &spec).unwrap();
        for idx in 0..g.len() {
            assert!((m2.values()[idx] - 2.0 * m1.values()[idx]).abs() < 1e-12);
            if m1.values()[idx] > 1e-3 {
                assert!(wrap(p2.values()[idx] - p1.values()[idx]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_direction_sum_keeps_only_the_filtered_component() {
        let g = grid();
        let kx = axis_wave_vector(12.0, 0);
        let ky = axis_wave_vector(12.0, 1);
        let img = ScalarVolume::from_fn(g, |p| (kx[0] * p[0]).cos() + (ky[1] * p[1]).cos()).unwrap();
        let (phase, _) = extract_phase(&img, &HarpFilterSpec::for_tag(12.0, 0).unwrap()).unwrap();
        for idx in 0..g.len() {
            let want = wrap(kx[0] * g.world_of(idx)[0]);
            assert!(wrap(phase.values()[idx] - want).abs() < 0.05);
        }
    }

    /// Worst wrapped error against `wrap(k · material position)` on the
    /// noise-free default phantom.
    fn phantom_max_error(n: usize, margin: usize) -> f64 {
        let ph = crate::phantom::PhantomConfig {
            noise_sigma: 0.0,
            ..Default::default()
        }
        .build()
        .unwrap();
        let specs = [0, 1, 2].map(|a| HarpFilterSpec::for_tag(ph.pattern.period(a), a).unwrap());
        let set = extract_phase_set(&ph.render(n).unwrap(), specs).unwrap();
        let mut worst: f64 = 0.0;
        for idx in (0..ph.grid.len()).filter(|&i| ph.grid.is_interior(i, margin)) {
            let x = ph.grid.world_of(idx);
            let material = ph.model.inverse(n, x).unwrap();
            for d in 0..3 {
                let k = ph.pattern.wave_vectors()[d];
                let want = wrap(k[0] * material[0] + k[1] * material[1] + k[2] * material[2]);
                worst = worst.max(wrap(set.phases()[d].values()[idx] - want).abs());
            }
        }
        worst
    }

    #[test]
    fn phantom_first_frame_phase_is_the_lattice() {
        let e = phantom_max_error(1, 0);
        assert!(e < 0.02, "{e}");
    }

    #[test]
    fn phase_is_a_material_property() {
        // The shear is not periodic across the field of view, so the FFT
        // sees a seam at the faces that the bandpass smears a few voxels in.
        for n in [2, 8, 26] {
            let e = phantom_max_error(n, 4);
            assert!(e < 0.05, "frame {n}: {e}");
        }
    }

    #[test]
    fn hard_sphere_filter_is_idempotent() {
        let g = grid();
        let k = axis_wave_vector(12.0, 0);
        let img = ScalarVolume::from_fn(g, |p| {
            (k[0] * p[0] - 0.8 * (p[1] * 0.1).sin()).cos() + (TAU * p[1] / 12.0).cos()
        })
        .unwrap();
        let spec = HarpFilterSpec::for_wave_vector(k, FilterProfile::HardSphere).unwrap();
        let once = harmonic_image(&img, &spec);
        let mut twice = once.clone();
        bandpass(&g, &mut twice, &spec, &Fft3::new(g.dims()));
        for (a, b) in once.iter().zip(&twice) {
            if a.norm() > 1e-3 {
                assert!(wrap(a.arg() - b.arg()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn phase_set_validates() {
        let g = grid();
        let spec = HarpFilterSpec::for_tag(12.0, 0).unwrap();
        let ok = ScalarVolume::zeros(g);
        let bad = ScalarVolume::constant(g, PI);
        let z = || [ok.clone(), ok.clone(), ok.clone()];
        assert!(PhaseSet::new(z(), z(), [spec; 3]).is_ok());
        assert!(PhaseSet::new([bad, ok.clone(), ok.clone()], z(), [spec; 3]).is_err());
        let neg = ScalarVolume::constant(g, -1.0);
        assert!(PhaseSet::new(z(), [neg, ok.clone(), ok.clone()], [spec; 3]).is_err());
    }
}
