//! Spectral Helmholtz projection onto discretely divergence-free fields.
//!
//! The projector uses the Fourier symbol of the periodic central
//! difference, `i·sin(2πm/n)/h` per axis, so the output has zero central
//! difference divergence (away from the faces, where `divergence` switches
//! to one-sided stencils). Modes whose symbol vanishes on every axis
//! (DC, Nyquist) pass through unchanged.

use rustfft::num_complex::Complex64;

use crate::fft::Fft3;
use crate::volume::{Grid3, VectorKind, VectorVolume};

pub struct Projector {
    grid: Grid3,
    fft: Fft3,
    symbols: [Vec<f64>; 3],
}

impl Projector {
    pub fn new(grid: Grid3) -> Self {
        let symbols = [0, 1, 2].map(|a| {
            let n = grid.dims()[a];
            let h = grid.spacing()[a];
            (0..n)
                .map(|m| (std::f64::consts::TAU * m as f64 / n as f64).sin() / h)
                .collect()
        });
        Self {
            grid,
            fft: Fft3::new(grid.dims()),
            symbols,
        }
    }

    /// Divergence-free part of `values`.
    pub(crate) fn project_values(&self, values: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let grad = self.gradient_part(values);
        values
            .iter()
            .zip(&grad)
            .map(|(v, g)| [v[0] - g[0], v[1] - g[1], v[2] - g[2]])
            .collect()
    }

    /// Curl-free (gradient) part `∇Δ⁻¹(∇·v)` of `values`.
    pub(crate) fn gradient_part(&self, values: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let [nx, ny, nz] = self.grid.dims();
        let mut spec: [Vec<Complex64>; 3] = [0, 1, 2].map(|c| {
            let mut data: Vec<Complex64> =
                values.iter().map(|v| Complex64::new(v[c], 0.0)).collect();
            self.fft.forward(&mut data);
            data
        });
        let [sx, sy, sz] = &self.symbols;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = i + nx * (j + ny * k);
                    let s = [sx[i], sy[j], sz[k]];
                    let s2 = s[0] * s[0] + s[1] * s[1] + s[2] * s[2];
                    if s2 <= 1e-24 {
                        for c in spec.iter_mut() {
                            c[idx] = Complex64::default();
                        }
                        continue;
                    }
                    let dot = (spec[0][idx] * s[0] + spec[1][idx] * s[1] + spec[2][idx] * s[2]) / s2;
                    for c in 0..3 {
                        spec[c][idx] = dot * s[c];
                    }
                }
            }
        }
        for c in spec.iter_mut() {
            self.fft.inverse(c);
        }
        (0..values.len())
            .map(|idx| [spec[0][idx].re, spec[1][idx].re, spec[2][idx].re])
            .collect()
    }

    /// Projection of a tapered copy: `v - Q(w·v)` with `Q` the gradient part
    /// and `w` a cosine ramp over `taper` voxels at every face.
    pub(crate) fn project_tapered(&self, values: &[[f64; 3]], taper: usize) -> Vec<[f64; 3]> {
        if taper == 0 {
            return self.project_values(values);
        }
        let weights = [0, 1, 2].map(|a| taper_profile(self.grid.dims()[a], taper));
        let windowed: Vec<[f64; 3]> = values
            .iter()
            .enumerate()
            .map(|(idx, v)| {
                let c = self.grid.coords(idx);
                let w = weights[0][c[0]] * weights[1][c[1]] * weights[2][c[2]];
                [v[0] * w, v[1] * w, v[2] * w]
            })
            .collect();
        let grad = self.gradient_part(&windowed);
        values
            .iter()
            .zip(&grad)
            .map(|(v, g)| [v[0] - g[0], v[1] - g[1], v[2] - g[2]])
            .collect()
    }
}

fn taper_profile(n: usize, width: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let d = i.min(n - 1 - i);
            if d >= width {
                1.0
            } else {
                0.5 * (1.0 - (std::f64::consts::PI * (d as f64 + 0.5) / width as f64).cos())
            }
        })
        .collect()
}

pub fn project_divergence_free(v: &VectorVolume) -> VectorVolume {
    let p = Projector::new(*v.grid());
    VectorVolume::from_parts(*v.grid(), p.project_values(v.values()), VectorKind::Velocity)
}
