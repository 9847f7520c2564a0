//! 3D discrete Fourier transforms over x-fastest volumes.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned forward and inverse transforms for one set of dims.
pub struct Fft3 {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.map(|n| planner.plan_fft_forward(n));
        let inverse = dims.map(|n| planner.plan_fft_inverse(n));
        Self {
            dims,
            forward,
            inverse,
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Inverse transform, normalized by `1/N`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let scale = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [nx, ny, nz] = self.dims;
        assert_eq!(data.len(), nx * ny * nz);
        plans[0].process(data);

        let mut lines = vec![Complex64::default(); data.len()];
        // y lines
        for k in 0..nz {
            for i in 0..nx {
                let line = (k * nx + i) * ny;
                for j in 0..ny {
                    lines[line + j] = data[i + nx * (j + ny * k)];
                }
            }
        }
        plans[1].process(&mut lines);
        for k in 0..nz {
            for i in 0..nx {
                let line = (k * nx + i) * ny;
                for j in 0..ny {
                    data[i + nx * (j + ny * k)] = lines[line + j];
                }
            }
        }
        // z lines
        let plane = nx * ny;
        for p in 0..plane {
            for k in 0..nz {
                lines[p * nz + k] = data[p + plane * k];
            }
        }
        plans[2].process(&mut lines);
        for p in 0..plane {
            for k in 0..nz {
                data[p + plane * k] = lines[p * nz + k];
            }
        }
    }
}

/// Signed frequency index of DFT bin `m` of an `n`-point transform.
#[inline]
pub fn signed_bin(m: usize, n: usize) -> i64 {
    if m <= n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// Angular frequency (rad/mm) of bin `m` along an axis of `n` samples spaced `h` mm.
#[inline]
pub fn angular_frequency(m: usize, n: usize, h: f64) -> f64 {
    2.0 * std::f64::consts::PI * signed_bin(m, n) as f64 / (n as f64 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_single_mode() {
        let dims = [6, 5, 4];
        let n = 120;
        let fft = Fft3::new(dims);
        let orig: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut data = orig.clone();
        fft.forward(&mut data);
        fft.inverse(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }

        // e^{2πi(x/6 + 2y/5 + 3z/4)} lands in bin (1, 2, 3)
        let mut wave: Vec<Complex64> = (0..n)
            .map(|idx| {
                let (i, j, k) = (idx % 6, (idx / 6) % 5, idx / 30);
                let ph = 2.0
                    * std::f64::consts::PI
                    * (i as f64 / 6.0 + 2.0 * j as f64 / 5.0 + 3.0 * k as f64 / 4.0);
                Complex64::from_polar(1.0, ph)
            })
            .collect();
        fft.forward(&mut wave);
        for (idx, z) in wave.iter().enumerate() {
            let want = if idx == 1 + 6 * (2 + 5 * 3) { n as f64 } else { 0.0 };
            assert!((z.norm() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn signed_bins() {
        assert_eq!(signed_bin(0, 8), 0);
        assert_eq!(signed_bin(4, 8), 4);
        assert_eq!(signed_bin(5, 8), -3);
        assert_eq!(signed_bin(2, 5), 2);
        assert_eq!(signed_bin(3, 5), -2);
    }
}
