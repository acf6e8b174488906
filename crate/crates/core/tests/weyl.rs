use std::f64::consts::PI;

use kinlab::weyl_semiclassics::*;
use kinlab::LabError;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    (a - b).iter().fold(0.0, |m, z| m.max(z.norm()))
}

fn symbol(y: &[f64], xi: &[f64]) -> f64 {
    let mut v = 1.0;
    for k in 0..y.len() {
        v *= (-(y[k] - 2.0).powi(2) / (2.0 * 0.3 * 0.3)).exp() * (-(xi[k] - 0.5).powi(2) / 2.0).exp();
    }
    v * (1.0 + 0.4 * xi[0])
}

fn symbol_2d(y: &[f64], xi: &[f64]) -> f64 {
    let w = 0.36;
    (-((y[0] - 2.0).powi(2) + (y[1] - 2.1).powi(2)) / (2.0 * w * w)).exp()
        * (-((xi[0] - 0.3).powi(2) + (xi[1] + 0.2).powi(2)) / (2.0 * 0.36)).exp()
}

#[test]
fn symplectic_fourier_is_an_involution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (dim, n) in [(1, 64), (2, 8)] {
        let lat = PhaseLattice { dim, n, dx: 0.37, dxi: 0.61 };
        let vals: Vec<Complex64> = (0..lat.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let once = symplectic_fourier(&lat, &vals).unwrap();
        let twice = symplectic_fourier(&lat.dual(), &once).unwrap();
        assert_eq!(lat.dual().dual(), lat);
        let err = vals.iter().zip(&twice).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        assert!(err <= 1e-10, "dim {dim}: {err:e}");
    }
}

#[test]
fn symplectic_fourier_of_gaussian() {
    let step = (2.0 * PI / 64.0).sqrt();
    let lat = PhaseLattice { dim: 1, n: 64, dx: step, dxi: step };
    let (a, c) = (1.1, 0.8);
    let vals = lat.sample(|p| (-p.px[0].powi(2) / (2.0 * a * a) - p.pxi[0].powi(2) / (2.0 * c * c)).exp());
    let out = symplectic_fourier(&lat, &vals).unwrap();
    let dual = lat.dual();
    let mut err = 0.0f64;
    for (i, z) in out.iter().enumerate() {
        let p = dual.point(i);
        let exact = a * c * (-a * a * p.pxi[0].powi(2) / 2.0 - c * c * p.px[0].powi(2) / 2.0).exp();
        err = err.max((z - exact).norm());
    }
    assert!(err <= 1e-8, "{err:e}");
}

#[test]
fn tau_identity_and_unitarity() {
    let g = QuantumGrid::new(2, 6, 3.0, 0.5).unwrap();
    let id = DMatrix::<Complex64>::identity(36, 36);
    assert!(max_diff(&tau_op(&g, &SymplecticPoint::zero(2)).unwrap(), &id) == 0.0);
    let dk = 2.0 * PI / 3.0 / 0.5;
    let p = SymplecticPoint::new(vec![1.0, -2.5], vec![2.0 * dk, -dk]).unwrap();
    let t = tau_op(&g, &p).unwrap();
    assert!(max_diff(&(&t * t.adjoint()), &id) <= 1e-12);
}

fn commensurate(g: &QuantumGrid, a: &[i64], m: &[i64]) -> SymplecticPoint {
    let dx = g.spacing();
    let dxi = 2.0 * PI / g.box_len / g.h;
    SymplecticPoint::new(a.iter().map(|&v| v as f64 * dx).collect(), m.iter().map(|&v| v as f64 * dxi).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn tau_product_law(a1 in -9i64..9, m1 in -9i64..9, a2 in -9i64..9, m2 in -9i64..9, b1 in -3i64..3, b2 in -3i64..3, h in 0.05f64..1.0) {
        for g in [QuantumGrid::new(1, 10, 4.0, h).unwrap(), QuantumGrid::new(2, 5, 2.5, h).unwrap()] {
            let (p1, p2) = if g.dim == 1 {
                (commensurate(&g, &[a1], &[m1]), commensurate(&g, &[a2], &[m2]))
            } else {
                (commensurate(&g, &[a1, b1], &[m1, b2]), commensurate(&g, &[a2, b2], &[m2, b1]))
            };
            let lhs = tau_op(&g, &p1).unwrap() * tau_op(&g, &p2).unwrap();
            let phase = Complex64::from_polar(1.0, 0.5 * g.h * symplectic_form(&p1, &p2));
            let rhs = tau_op(&g, &p1.add(&p2)).unwrap() * phase;
            prop_assert!(max_diff(&lhs, &rhs) <= 1e-10);
        }
    }
}

#[test]
fn weyl_of_one_is_identity_and_real_symbols_are_hermitian() {
    for g in [QuantumGrid::new(1, 32, 20.0, 0.2).unwrap(), QuantumGrid::new(2, 8, 6.0, 0.5).unwrap()] {
        let one = weyl_quantize(&g, |_, _| 1.0);
        assert!(max_diff(&one, &DMatrix::identity(g.len(), g.len())) <= 1e-12);
        let bw = weyl_quantize(&g, |y, xi| (y[0] * 1.3).sin() * xi[0] + (y[g.dim - 1] - xi[0]).cos());
        assert!(max_diff(&bw, &bw.adjoint()) <= 1e-12);
    }
}

#[test]
fn weyl_superposition_route_d1() {
    let g = QuantumGrid::new(1, 64, 40.0, 0.1).unwrap();
    let direct = weyl_quantize(&g, symbol);
    let sup = weyl_quantize_superposition(&g, symbol).unwrap();
    let fro = (&direct - &sup).norm();
    assert!(fro <= 1e-6, "{fro:e}");
}

#[test]
fn weyl_superposition_route_d2() {
    let g = QuantumGrid::new(2, 20, 20.0, 0.2).unwrap();
    let direct = weyl_quantize(&g, symbol_2d);
    let sup = weyl_quantize_superposition(&g, symbol_2d).unwrap();
    let fro = (&direct - &sup).norm();
    assert!(fro <= 1e-6, "{fro:e}");
}

#[test]
fn delta_state_measures_one() {
    let g = QuantumGrid::new(1, 16, 8.0, 0.3).unwrap();
    let mut psi = vec![Complex64::new(0.0, 0.0); 16];
    psi[5] = Complex64::new(1.0, 0.0);
    let rho = DensityMatrix::pure(&psi).unwrap();
    let m = measure_observable(&g, |_, _| 1.0, &rho).unwrap();
    assert!((m - 1.0).norm() <= 1e-12);
}

#[test]
fn measurement_routes_agree() {
    let g = QuantumGrid::new(1, 64, 40.0, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // mixture of two packets plus a random pure component
    let a = DensityMatrix::coherent_packet(&g, &[1.9], &[0.7], 3.0).unwrap();
    let psi: Vec<Complex64> = (0..64).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let b = DensityMatrix::pure(&psi).unwrap();
    let mix = DensityMatrix::new(a.matrix() * Complex64::new(0.6, 0.0) + b.matrix() * Complex64::new(0.3, 0.0)).unwrap();
    for rho in [&a, &b, &mix] {
        let m1 = measure_observable(&g, symbol, rho).unwrap();
        let m2 = measure_observable_superposition(&g, symbol, rho).unwrap();
        assert!((m1 - m2).norm() <= 1e-6, "{m1} vs {m2}");
        assert!(m1.im.abs() <= 1e-10 && m2.im.abs() <= 1e-10);
    }
}

#[test]
fn coherent_packets_concentrate() {
    let b = |y: &[f64], xi: &[f64]| (-(y[0] - 1.8).powi(2)).exp() * (1.0 + 0.5 * xi[0] * xi[0]).recip();
    let rows = coherent_packet_study(b, 2.0, 0.8, 4.0, 0.5, &[0.2, 0.1, 0.05]).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].error < w[0].error, "{rows:?}");
    }
    assert!(rows[2].error < 0.5 * rows[0].error);
}

#[test]
fn grid_mismatch_and_bad_grids() {
    assert!(QuantumGrid::new(3, 4, 1.0, 0.1).is_err());
    assert!(QuantumGrid::new(1, 4, 1.0, 0.0).is_err());
    let g = QuantumGrid::new(1, 8, 4.0, 0.5).unwrap();
    let rho = DensityMatrix::pure(&[Complex64::new(1.0, 0.0); 4]).unwrap();
    assert!(matches!(measure_observable(&g, |_, _| 1.0, &rho), Err(LabError::GridMismatch)));
}
