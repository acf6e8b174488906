//! Multi-dimensional FFTs on periodic cubic lattices (row-major, last
//! axis contiguous) and the Fourier shift used by transport.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct LatticeFft {
    dim: usize,
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LatticeFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LatticeFft(dim={}, n={})", self.dim, self.n)
    }
}

impl LatticeFft {
    pub fn new(dim: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { dim, n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(data, &self.fwd);
    }

    /// Normalized inverse.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(data, &self.inv);
        let s = 1.0 / self.len() as f64;
        for z in data.iter_mut() {
            *z *= s;
        }
    }

    fn apply(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len());
        let n = self.n;
        let total = self.len();
        let mut scratch = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                plan.process(data);
                continue;
            }
            let block = stride * n;
            for base in (0..total).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    for (i, s) in scratch.iter_mut().enumerate() {
                        *s = data[start + i * stride];
                    }
                    plan.process(&mut scratch);
                    for (i, s) in scratch.iter().enumerate() {
                        data[start + i * stride] = *s;
                    }
                }
            }
        }
    }
}

/// Unnormalized DFT of a row-major array with `axes.len()` axes of length `n`;
/// `axes[a]` selects the forward (e^{−2πi jm/n}) or backward (e^{+2πi jm/n})
/// kernel on axis `a`.
pub fn dft_axes(data: &mut [Complex64], n: usize, axes: &[bool]) {
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let dim = axes.len();
    let total = n.pow(dim as u32);
    assert_eq!(data.len(), total);
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    for (axis, &forward) in axes.iter().enumerate() {
        let plan = if forward { &fwd } else { &inv };
        let stride = n.pow((dim - 1 - axis) as u32);
        let block = stride * n;
        for base in (0..total).step_by(block) {
            for off in 0..stride {
                let start = base + off;
                for (i, s) in scratch.iter_mut().enumerate() {
                    *s = data[start + i * stride];
                }
                plan.process(&mut scratch);
                for (i, s) in scratch.iter().enumerate() {
                    data[start + i * stride] = *s;
                }
            }
        }
    }
}

/// Signed representative of an FFT-order index.
pub fn signed_index(m: usize, n: usize) -> i64 {
    if m <= n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// Angular wavenumbers 2πm/L in FFT order.
pub fn wavenumbers(n: usize, box_len: f64) -> Vec<f64> {
    (0..n)
        .map(|m| {
            let mm = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
            2.0 * PI * mm / box_len
        })
        .collect()
}

/// Multi-index (row-major) of a flat lattice index.
pub fn unravel(mut idx: usize, dim: usize, n: usize, out: &mut [usize]) {
    for a in (0..dim).rev() {
        out[a] = idx % n;
        idx /= n;
    }
}

/// Per-axis shift factors e^{i k s}; the Nyquist mode (even n) gets cos(k s)
/// so that real fields stay real and the shift by −s is the transpose.
pub fn axis_phases(n: usize, box_len: f64, s: f64) -> Vec<Complex64> {
    wavenumbers(n, box_len)
        .iter()
        .enumerate()
        .map(|(m, &kk)| {
            if n % 2 == 0 && m == n / 2 {
                Complex64::new((kk * s).cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, kk * s)
            }
        })
        .collect()
}

/// Phase table over the lattice for a shift vector `s` (see [`axis_phases`]).
pub fn shift_phases(dim: usize, n: usize, box_len: f64, shift: &[f64]) -> Vec<Complex64> {
    let per_axis: Vec<Vec<Complex64>> = (0..dim).map(|a| axis_phases(n, box_len, shift[a])).collect();
    let total = n.pow(dim as u32);
    let mut idx = vec![0usize; dim];
    (0..total)
        .map(|i| {
            unravel(i, dim, n, &mut idx);
            let mut z = Complex64::new(1.0, 0.0);
            for a in 0..dim {
                z *= per_axis[a][idx[a]];
            }
            z
        })
        .collect()
}

/// Real periodic field f ↦ f(· + s) by spectral interpolation.
pub fn shift_real(fft: &LatticeFft, box_len: f64, values: &[f64], shift: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.forward(&mut buf);
    let ph = shift_phases(fft.dim, fft.n, box_len, shift);
    for (z, p) in buf.iter_mut().zip(ph.iter()) {
        *z *= p;
    }
    fft.inverse(&mut buf);
    buf.iter().map(|z| z.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity_in_three_dims() {
        let fft = LatticeFft::new(3, 8);
        let orig: Vec<Complex64> =
            (0..512).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut buf = orig.clone();
        fft.forward(&mut buf);
        fft.inverse(&mut buf);
        for (a, b) in buf.iter().zip(orig.iter()) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn shift_of_plane_wave_matches_formula() {
        let n = 32;
        let l = 5.0;
        let fft = LatticeFft::new(2, n);
        let mut vals = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let x = i as f64 * l / n as f64;
                let y = j as f64 * l / n as f64;
                vals[i * n + j] = (2.0 * PI * x / l + 4.0 * PI * y / l).cos();
            }
        }
        let s = [0.37, -1.1];
        let out = shift_real(&fft, l, &vals, &s);
        for i in 0..n {
            for j in 0..n {
                let x = i as f64 * l / n as f64 + s[0];
                let y = j as f64 * l / n as f64 + s[1];
                let exact = (2.0 * PI * x / l + 4.0 * PI * y / l).cos();
                assert!((out[i * n + j] - exact).abs() < 1e-12);
            }
        }
    }
}
