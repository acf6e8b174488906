//! The twelve acceptance criteria. Each test prints one PASS/FAIL line to
//! stderr (bypassing the test harness capture) and then asserts. Tests run
//! one at a time so the runtime limits measure a single study.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use kinlab::boltzmann_evolver::{BoltzmannEvolver, PrimalScheme, TransportScheme};
use kinlab::coherent_dynamics::*;
use kinlab::collision_ops::{Profile, ScatteringData};
use kinlab::experiment_cli::{run_study, ExperimentConfig, Study};
use kinlab::field_montecarlo::{renewal_trend, RenewalConfig};
use kinlab::kinetic_grid::{GridSpec, PhaseGrid, PhaseMeasure};
use kinlab::quadrature::gl_rule;
use kinlab::stats::loglog_slope;
use kinlab::weyl_semiclassics::*;
use kinlab::Result;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, outcome: Result<(bool, String)>, elapsed: Duration, limit: Option<Duration>) {
    let (mut ok, mut detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    detail.push_str(&format!(" [{:.1} s]", elapsed.as_secs_f64()));
    if let Some(l) = limit {
        if elapsed > l {
            ok = false;
            detail.push_str(&format!(" exceeds the {} s limit", l.as_secs()));
        }
    }
    let line = format!("acceptance {id:>2} {} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

/// Runs a CLI study with its defaults and folds its checks into one verdict.
fn study_verdict(id: u32, name: &str, study: Study, limit: Option<Duration>) {
    let _g = serial();
    let start = Instant::now();
    let outcome = run_study(&ExperimentConfig::defaults(study)).map(|r| {
        let detail = r.checks.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ");
        (r.passed(), detail)
    });
    verdict(id, name, outcome, start.elapsed(), limit);
}

fn max_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    (a - b).iter().fold(0.0, |m, z| m.max(z.norm()))
}

#[test]
fn c01_trotter_rate() {
    study_verdict(1, "trotter rate", Study::Trotter, Some(Duration::from_secs(60)));
}

#[test]
fn c02_mass_and_positivity() {
    let _g = serial();
    let start = Instant::now();
    let outcome = (|| -> Result<(bool, String)> {
        let g = PhaseGrid::new(&GridSpec { dim: 2, box_len: 4.0, nx: 16, r_inner: 0.4, r_outer: 1.6, speeds: vec![1.0], angular: 16 })?;
        let ev = BoltzmannEvolver::new(ScatteringData::new(g.clone(), Profile::gaussian(1.0, 0.8))?, TransportScheme::Monotone);
        // a narrow bump: most cells start near zero
        let mu = PhaseMeasure::from_fn(g.clone(), |x, xi| {
            (-((x[0] - 1.3).powi(2) + (x[1] - 2.2).powi(2)) / 0.1).exp() * (1.0 + 0.9 * xi[0])
        })?;
        let (_, rows) = ev.primal_trajectory(&mu, 2.0, 1000, PrimalScheme::PositivitySplit, 1)?;
        let m0 = rows[0].mass;
        let drift = rows.iter().map(|r| (r.mass - m0).abs()).fold(0.0, f64::max);
        let min = rows.iter().map(|r| r.min_value).fold(f64::INFINITY, f64::min);
        Ok((drift <= 1e-10 && min >= 0.0, format!("1000 steps: max |Δmass| = {drift:.2e}, min value = {min:e}")))
    })();
    verdict(2, "mass conservation and positivity", outcome, start.elapsed(), None);
}

#[test]
fn c03_shell_decoupling() {
    let _g = serial();
    let start = Instant::now();
    let outcome = (|| -> Result<(bool, String)> {
        let g = PhaseGrid::new(&GridSpec {
            dim: 2,
            box_len: 4.0,
            nx: 16,
            r_inner: 0.4,
            r_outer: 1.6,
            speeds: vec![0.6, 1.0, 1.4],
            angular: 16,
        })?;
        let ev = BoltzmannEvolver::new(ScatteringData::new(g.clone(), Profile::gaussian(1.0, 0.8))?, TransportScheme::Spectral);
        let mu = PhaseMeasure::from_fn(g.clone(), |x, xi| {
            let r = xi[0].hypot(xi[1]);
            (1.0 + 0.5 * (PI * x[0] / 2.0).cos()) * (1.0 + 0.7 * xi[0] / r) * r * r
        })?;
        // probability measure, unequal across shells
        let total = mu.mass();
        let mu = PhaseMeasure::new(g.clone(), mu.values().iter().map(|v| v / total).collect())?;
        let (_, rows) = ev.primal_trajectory(&mu, 2.0, 200, PrimalScheme::Trotter, 1)?;
        let m0 = &rows[0].shell_marginals;
        let drift = rows
            .iter()
            .flat_map(|r| r.shell_marginals.iter().zip(m0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        Ok((drift <= 1e-12, format!("three shells, 200 steps: max per-shell |Δmass| = {drift:.2e} (masses {m0:.3?})")))
    })();
    verdict(3, "shell decoupling", outcome, start.elapsed(), None);
}

#[test]
fn c04_mollifier_rates() {
    study_verdict(4, "mollifier rates", Study::Mollifier, Some(Duration::from_secs(60)));
}

#[test]
fn c05_coherent_closed_forms() {
    let _g = serial();
    let start = Instant::now();
    let outcome = (|| -> Result<(bool, String)> {
        let p = Profile::gaussian(1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (mut worst_z, mut worst_w) = (0.0f64, 0.0f64);
        for case in 0..100 {
            let d = 1 + case % 3;
            let h: f64 = rng.gen_range(0.01..0.5);
            let eps: f64 = rng.gen_range(0.1..0.9);
            let t = rng.gen_range(0.0..(eps / h).min(2.0));
            let xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let sc = QuantumScales::new(h, eps, 0.8, 1, d)?;
            let grid = EtaGrid::tensor(d, &gl_rule([32, 6, 4][d - 1], -2.0 / eps, 2.0 / eps));
            let fld = coherent_parameter(&grid, &p, &sc, &xi, t)?;
            let (zq, wq) = common::time_quadrature(&grid, &p, &sc, &xi, t, 10_000);
            let num: f64 = fld.z.iter().zip(&zq).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let den: f64 = zq.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
            worst_z = worst_z.max(num / den);
            worst_w = worst_w.max((fld.omega - wq).abs() / wq.abs());
        }
        // (ht/ε)^{1/2}: doubling t at fixed h, ε in the golden-rule regime
        let ts = [1.25, 2.5, 5.0, 10.0, 20.0];
        let rows = parameter_norm_bound_check(&p, &[0.8], 0, &ts.iter().map(|&t| (0.005, 0.1, t)).collect::<Vec<_>>())?;
        let t_slope = loglog_slope(&ts, &rows.iter().map(|r| r.norm).collect::<Vec<_>>());
        // ε^{1/2−ν} at fixed h and ht/ε
        let eps = [0.05, 0.1, 0.2, 0.4];
        let mut eps_slopes = Vec::new();
        for nu in [0u32, 1] {
            let samples: Vec<(f64, f64, f64)> = eps.iter().map(|&e| (0.01, e, 0.5 * e / 0.01)).collect();
            let rows = parameter_norm_bound_check(&p, &[0.8], nu, &samples)?;
            eps_slopes.push(loglog_slope(&eps, &rows.iter().map(|r| r.norm).collect::<Vec<_>>()));
        }
        let ok = worst_z <= 1e-9
            && worst_w <= 1e-9
            && (t_slope - 0.5).abs() <= 0.1
            && (eps_slopes[0] - 0.5).abs() <= 0.1
            && (eps_slopes[1] + 0.5).abs() <= 0.1;
        Ok((
            ok,
            format!(
                "100 cases: z rel {worst_z:.1e}, ω rel {worst_w:.1e}; exponents t {t_slope:.3} (0.5), ε ν=0 {:.3} (0.5), ε ν=1 {:.3} (−0.5)",
                eps_slopes[0], eps_slopes[1]
            ),
        ))
    })();
    verdict(5, "coherent closed forms", outcome, start.elapsed(), None);
}

#[test]
fn c06_number_bound() {
    let _g = serial();
    let start = Instant::now();
    let outcome = (|| -> Result<(bool, String)> {
        let sc = QuantumScales::new(0.05, 0.3, 0.8, 1, 1)?;
        let ts: Vec<f64> = (0..100).map(|i| i as f64 * (sc.eps / sc.h) / 99.0).collect();
        let xis: Vec<Vec<f64>> = [-1.5, -0.5, 0.3, 1.0, 1.8].iter().map(|&x| vec![x]).collect();
        let rows = number_bound_check(&Profile::gaussian(1.0, 1.0), &xis, &sc, &ts)?;
        let worst = rows.iter().map(|r| r.constant).fold(0.0, f64::max);
        Ok((rows.len() == 100 && worst <= 4.0, format!("{} samples, largest constant {worst:.3}", rows.len())))
    })();
    verdict(6, "number bound", outcome, start.elapsed(), None);
}

fn route_symbol(y: &[f64], xi: &[f64]) -> f64 {
    (-(y[0] - 2.0).powi(2) / (2.0 * 0.3 * 0.3)).exp() * (-(xi[0] - 0.5).powi(2) / 2.0).exp() * (1.0 + 0.4 * xi[0])
}

#[test]
fn c07_weyl_algebra() {
    let _g = serial();
    let start = Instant::now();
    let outcome = (|| -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut involution = 0.0f64;
        for (dim, n) in [(1, 64), (2, 8)] {
            let lat = PhaseLattice { dim, n, dx: 0.37, dxi: 0.61 };
            let vals: Vec<Complex64> =
                (0..lat.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let twice = symplectic_fourier(&lat.dual(), &symplectic_fourier(&lat, &vals)?)?;
            involution = involution.max(vals.iter().zip(&twice).fold(0.0, |m, (a, b)| m.max((a - b).norm())));
        }
        let mut product = 0.0f64;
        for _ in 0..40 {
            let h: f64 = rng.gen_range(0.05..1.0);
            for g in [QuantumGrid::new(1, 10, 4.0, h)?, QuantumGrid::new(2, 5, 2.5, h)?] {
                let dx = g.spacing();
                let dxi = 2.0 * PI / g.box_len / g.h;
                let mut point = || {
                    let a: Vec<f64> = (0..g.dim).map(|_| rng.gen_range(-9..9) as f64 * dx).collect();
                    let m: Vec<f64> = (0..g.dim).map(|_| rng.gen_range(-9..9) as f64 * dxi).collect();
                    SymplecticPoint::new(a, m)
                };
                let (p1, p2) = (point()?, point()?);
                let lhs = tau_op(&g, &p1)? * tau_op(&g, &p2)?;
                let phase = Complex64::from_polar(1.0, 0.5 * g.h * symplectic_form(&p1, &p2));
                let rhs = tau_op(&g, &p1.add(&p2))? * phase;
                product = product.max(max_diff(&lhs, &rhs));
            }
        }
        let g = QuantumGrid::new(1, 64, 40.0, 0.1)?;
        let rho = DensityMatrix::coherent_packet(&g, &[1.9], &[0.7], 3.0)?;
        let m1 = measure_observable(&g, route_symbol, &rho)?;
        let m2 = measure_observable_superposition(&g, route_symbol, &rho)?;
        let routes = (m1 - m2).norm();
        let operators = (weyl_quantize(&g, route_symbol) - weyl_quantize_superposition(&g, route_symbol)?).norm();
        let ok = involution <= 1e-10 && product <= 1e-10 && routes <= 1e-6 && operators <= 1e-6;
        Ok((
            ok,
            format!("involution {involution:.1e}, τ product law {product:.1e}, m_h routes {routes:.1e}, operator routes {operators:.1e} (d=1, n=64)"),
        ))
    })();
    verdict(7, "Weyl algebra", outcome, start.elapsed(), None);
}

#[test]
fn c08_kernel_vs_fock_oracle() {
    study_verdict(8, "K_P against truncated Fock space", Study::FockOracle, None);
}

#[test]
fn c09_radial_symbol_invariance() {
    let _g = serial();
    let start = Instant::now();
    let outcome = (|| -> Result<(bool, String)> {
        let cfg = ShortTimeConfig::default();
        let mut ok = true;
        let mut parts = Vec::new();
        for h in [0.2, 0.1, 0.05] {
            let r = radial_symbol_drift(&cfg, h, 4)?;
            ok &= r.drift <= 10.0 * r.e6_budget;
            parts.push(format!("h={h}: drift {:.2e} vs E6 {:.2e}", r.drift, r.e6_budget));
        }
        Ok((ok, parts.join(", ")))
    })();
    verdict(9, "radial symbol invariance", outcome, start.elapsed(), None);
}

#[test]
fn c10_short_time_comparison() {
    let _g = serial();
    let start = Instant::now();
    let outcome = (|| -> Result<(bool, String)> {
        let rows = short_time_comparison(&ShortTimeConfig::default())?;
        let ok = rows.windows(2).all(|w| w[1].d < w[0].d);
        let table = rows.iter().map(|r| format!("h={}: D {:.2e} (E6 shape {:.2e})", r.h, r.d, r.e6_shape)).collect::<Vec<_>>().join(", ");
        Ok((ok, format!("α = 0.8; {table}")))
    })();
    verdict(10, "short-time comparison", outcome, start.elapsed(), Some(Duration::from_secs(600)));
}

#[test]
fn c11_field_covariance() {
    study_verdict(11, "field covariance", Study::FieldCheck, Some(Duration::from_secs(120)));
}

#[test]
fn c12_renewal_trend() {
    let _g = serial();
    let start = Instant::now();
    let outcome = (|| -> Result<(bool, String)> {
        let rows = renewal_trend(&RenewalConfig::default())?;
        let ok = rows.windows(2).all(|w| w[1].tv < w[0].tv);
        let table = rows
            .iter()
            .map(|r| format!("h={}: TV {:.3} (back-scatter MC {:.3}±{:.3}, Boltzmann {:.3})", r.h, r.tv, r.backscatter_mc, r.backscatter_se, r.backscatter_boltzmann))
            .collect::<Vec<_>>()
            .join(", ");
        Ok((ok, format!("trend check, not a theorem reproduction; {table}")))
    })();
    verdict(12, "renewal trend", outcome, start.elapsed(), None);
}
