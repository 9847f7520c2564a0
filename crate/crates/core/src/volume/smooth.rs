//! Separable Gaussian smoothing with border renormalization.

use super::{Grid3, ScalarVolume, VectorVolume};

/// Normalized discrete Gaussian truncated at 3 sigma (sigma in voxels).
///
/// Returns `[1.0]` for a zero sigma.
pub fn gaussian_kernel(sigma_voxels: f64) -> Vec<f64> {
    if sigma_voxels <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma_voxels).ceil() as i64;
    let denom = 2.0 * sigma_voxels * sigma_voxels;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|t| (-((t * t) as f64) / denom).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

pub fn gaussian_smooth(v: &ScalarVolume, sigma_mm: [f64; 3]) -> ScalarVolume {
    let data: Vec<[f64; 1]> = v.values.iter().map(|&x| [x]).collect();
    let out = smooth_separable(&v.grid, data, sigma_mm);
    ScalarVolume::from_parts(v.grid, out.into_iter().map(|[x]| x).collect())
}

/// Smooths each component independently.
pub fn gaussian_smooth_vector(v: &VectorVolume, sigma_mm: [f64; 3]) -> VectorVolume {
    let out = smooth_separable(&v.grid, v.values.clone(), sigma_mm);
    VectorVolume::from_parts(v.grid, out, v.kind)
}

pub(crate) fn smooth_separable<const C: usize>(
    grid: &Grid3,
    mut data: Vec<[f64; C]>,
    sigma_mm: [f64; 3],
) -> Vec<[f64; C]> {
    let mut scratch = vec![[0.0; C]; data.len()];
    for axis in 0..3 {
        let kernel = gaussian_kernel(sigma_mm[axis].max(0.0) / grid.spacing[axis]);
        if kernel.len() == 1 {
            continue;
        }
        convolve_axis(grid, &data, &mut scratch, axis, &kernel);
        std::mem::swap(&mut data, &mut scratch);
    }
    data
}

fn convolve_axis<const C: usize>(
    grid: &Grid3,
    src: &[[f64; C]],
    dst: &mut [[f64; C]],
    axis: usize,
    kernel: &[f64],
) {
    let [nx, ny, _] = grid.dims;
    let n = grid.dims[axis];
    let stride = [1, nx, nx * ny][axis];
    let radius = (kernel.len() / 2) as i64;
    // Each line along `axis` starts at an index whose `axis` coordinate is 0.
    for start in 0..src.len() {
        if grid.coords(start)[axis] != 0 {
            continue;
        }
        for i in 0..n as i64 {
            let lo = (i - radius).max(0);
            let hi = (i + radius).min(n as i64 - 1);
            let mut acc = [0.0; C];
            let mut wsum = 0.0;
            for t in lo..=hi {
                let w = kernel[(t - i + radius) as usize];
                let s = &src[start + t as usize * stride];
                for c in 0..C {
                    acc[c] += w * s[c];
                }
                wsum += w;
            }
            let out = &mut dst[start + i as usize * stride];
            for c in 0..C {
                out[c] = acc[c] / wsum;
            }
        }
    }
}
