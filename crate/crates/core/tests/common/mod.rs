//! Oracles shared by several integration test targets.
#![allow(dead_code)]

use kinlab::coherent_dynamics::{coupling_function, detuning, EtaGrid, QuantumScales};
use kinlab::collision_ops::Profile;
use kinlab::quadrature::gl_rule;
use num_complex::Complex64;
use rayon::prelude::*;

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// z_t and ω_t by composite Gauss quadrature in time: z_s = −i f ∫₀ˢ e^{−iuφ} du
/// and ω_t = t|ξ|² + ∫₀ᵗ Re⟨z_s, f⟩ ds, with z_s itself accumulated panel by panel.
pub fn time_quadrature(grid: &EtaGrid, p: &Profile, sc: &QuantumScales, xi: &[f64], t: f64, panels: usize) -> (Vec<Complex64>, f64) {
    let step = t / panels as f64;
    let rule = gl_rule(4, 0.0, 1.0);
    let per_node: Vec<(Complex64, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let eta = grid.node(i);
            let f = coupling_function(p, eta, sc);
            let phi = detuning(sc.eps, xi, eta);
            let kernel = |a: f64, b: f64| -> Complex64 {
                rule.iter().map(|&(x, w)| (b - a) * w * Complex64::from_polar(1.0, -(a + (b - a) * x) * phi)).sum()
            };
            let mut acc = C0;
            let mut outer = 0.0;
            for k in 0..panels {
                let a = k as f64 * step;
                for &(x, w) in &rule {
                    let s = a + step * x;
                    let zs = Complex64::new(0.0, -f) * (acc + kernel(a, s));
                    outer += step * w * (zs.conj() * f).re;
                }
                acc += kernel(a, a + step);
            }
            (Complex64::new(0.0, -f) * acc, outer)
        })
        .collect();
    let xi2: f64 = xi.iter().map(|x| x * x).sum();
    let omega = t * xi2 + per_node.iter().enumerate().map(|(i, v)| grid.weight(i) * v.1).sum::<f64>();
    (per_node.into_iter().map(|v| v.0).collect(), omega)
}
