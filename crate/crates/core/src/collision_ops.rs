//! Scattering rate, sharp gain/loss operators on energy shells, their
//! time-shifted variants, and the Lorentzian-mollified rates.
//!
//! The energy-shell delta is reduced by the coarea identity
//! ∫ f(ξ') δ(|ξ|² − |ξ'|²) dξ' = (|ξ|^{d−2}/2) ∫_{S^{d−1}} f(|ξ|ω) dω.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canon;
use crate::error::{invalid, LabError, Result};
use crate::kinetic_grid::{angular_rule, DualObservable, PhaseGrid};
use crate::quadrature::{self, graded_rule, lorentzian};
use crate::spectral::{self, LatticeFft};
use crate::stats::loglog_slope;

/// Covariance profile Ĝ = |V̂|² of the random field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// g₀ exp(−|η|²/(2ℓ²))
    Gaussian { amplitude: f64, width: f64 },
    /// Ĝ ≡ g₀; only meaningful on bounded velocity sets.
    Constant { amplitude: f64 },
}

impl Profile {
    pub fn gaussian(amplitude: f64, width: f64) -> Self {
        Profile::Gaussian { amplitude, width }
    }

    pub fn value(&self, eta: &[f64]) -> f64 {
        match *self {
            Profile::Gaussian { amplitude, width } => {
                let n2: f64 = eta.iter().map(|e| e * e).sum();
                amplitude * (-0.5 * n2 / (width * width)).exp()
            }
            Profile::Constant { amplitude } => amplitude,
        }
    }

    /// V̂ = √Ĝ, the real even choice.
    pub fn amplitude_root(&self, eta: &[f64]) -> f64 {
        self.value(eta).sqrt()
    }

    pub fn width(&self) -> Option<f64> {
        match *self {
            Profile::Gaussian { width, .. } => Some(width),
            Profile::Constant { .. } => None,
        }
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            Profile::Gaussian { amplitude, .. } | Profile::Constant { amplitude } => amplitude,
        }
    }

    /// ∫ Ĝ dη over ℝ^d.
    pub fn l1_norm(&self, dim: usize) -> f64 {
        match *self {
            Profile::Gaussian { amplitude, width } => amplitude * (2.0 * PI * width * width).powf(dim as f64 / 2.0),
            Profile::Constant { amplitude } => {
                if amplitude == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Profile::Gaussian { amplitude, width } => amplitude >= 0.0 && width > 0.0 && amplitude.is_finite(),
            Profile::Constant { amplitude } => amplitude >= 0.0 && amplitude.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("bad covariance profile {self:?}")))
        }
    }
}

/// σ(ξ, ξ') = 2π Ĝ(ξ' − ξ).
pub fn sigma(profile: &Profile, xi: &[f64], xi_p: &[f64]) -> f64 {
    let diff: Vec<f64> = xi_p.iter().zip(xi).map(|(a, b)| a - b).collect();
    2.0 * PI * profile.value(&diff)
}

/// Lorentzian κ^ζ(r) = ζ / (π (r² + ζ²)).
pub fn kappa_zeta(r: f64, zeta: f64) -> Result<f64> {
    if !(zeta > 0.0) {
        return Err(invalid(format!("mollifier width must be positive, got {zeta}")));
    }
    Ok(lorentzian(r, zeta))
}

/// Width ζ and target exponent γ of the Lorentzian mollifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierParams {
    pub zeta: f64,
    pub gamma: f64,
}

impl MollifierParams {
    pub fn new(zeta: f64, gamma: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta < 1.0) || !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid("mollifier parameters need ζ ∈ (0,1) and γ ∈ (0,1)"));
        }
        Ok(Self { zeta, gamma })
    }
}

/// Per-shell collision data on a phase grid.
#[derive(Clone, Debug)]
pub struct ScatteringData {
    grid: Arc<PhaseGrid>,
    profile: Profile,
    kernels: Vec<Vec<f64>>,
    gains: Vec<Vec<f64>>,
    losses: Vec<Vec<f64>>,
    fft: LatticeFft,
}

#[derive(Serialize)]
struct ShellDump<'a> {
    speed: f64,
    n: usize,
    kernel: &'a [f64],
    loss: &'a [f64],
}

#[derive(Serialize)]
struct ScatteringDump<'a> {
    profile: &'a Profile,
    dim: usize,
    shells: Vec<ShellDump<'a>>,
}

/// `out_j += Σ_k mat_{jk} in_k` on the velocity blocks of one shell.
pub(crate) fn apply_shell_matrix(ns: usize, offset: usize, n: usize, mat: &[f64], input: &[f64], out: &mut [f64]) {
    let out_shell = &mut out[offset * ns..(offset + n) * ns];
    out_shell.par_chunks_mut(ns).enumerate().for_each(|(j, oj)| {
        for k in 0..n {
            let a = mat[j * n + k];
            if a == 0.0 {
                continue;
            }
            let ik = &input[(offset + k) * ns..(offset + k + 1) * ns];
            for (o, x) in oj.iter_mut().zip(ik) {
                *o += a * x;
            }
        }
    });
}

impl ScatteringData {
    pub fn new(grid: Arc<PhaseGrid>, profile: Profile) -> Result<Self> {
        profile.validate()?;
        let d = grid.dim as i32;
        let mut kernels = Vec::new();
        let mut gains = Vec::new();
        let mut losses = Vec::new();
        for shell in &grid.shells {
            let n = shell.len();
            let pts: Vec<Vec<f64>> =
                shell.directions.iter().map(|w| w.iter().map(|c| c * shell.speed).collect()).collect();
            let mut kern = vec![0.0; n * n];
            for j in 0..n {
                for k in j..n {
                    let s = sigma(&profile, &pts[j], &pts[k]);
                    kern[j * n + k] = s;
                    kern[k * n + j] = s;
                }
            }
            let pre = shell.speed.powi(d - 2) / 2.0;
            let gain: Vec<f64> = (0..n * n).map(|i| pre * shell.weights[i % n] * kern[i]).collect();
            let loss: Vec<f64> = (0..n).map(|j| gain[j * n..(j + 1) * n].iter().sum()).collect();
            kernels.push(kern);
            gains.push(gain);
            losses.push(loss);
        }
        let fft = LatticeFft::new(grid.dim, grid.nx);
        Ok(Self { grid, profile, kernels, gains, losses, fft })
    }

    pub fn grid(&self) -> &Arc<PhaseGrid> {
        &self.grid
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub(crate) fn fft(&self) -> &LatticeFft {
        &self.fft
    }

    /// Σ^{(m)}, row-major.
    pub fn kernel(&self, m: usize) -> &[f64] {
        &self.kernels[m]
    }

    /// Gain matrix (r^{d−2}/2) w_k Σ_{jk}, row-major.
    pub fn gain_matrix(&self, m: usize) -> &[f64] {
        &self.gains[m]
    }

    /// Loss rates c_{m,j}.
    pub fn loss_rates(&self, m: usize) -> &[f64] {
        &self.losses[m]
    }

    /// Dual generator Q^{(m)} = gain − diag(c), row-major.
    pub fn generator(&self, m: usize) -> Vec<f64> {
        let n = self.losses[m].len();
        let mut q = self.gains[m].clone();
        for j in 0..n {
            q[j * n + j] -= self.losses[m][j];
        }
        q
    }

    /// Adjoint of Q^{(m)} for the pairing weights w_j (acts on densities).
    pub fn primal_generator(&self, m: usize) -> Vec<f64> {
        let q = self.generator(m);
        let w = &self.grid.shells[m].weights;
        let n = w.len();
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                out[j * n + k] = w[k] * q[k * n + j] / w[j];
            }
        }
        out
    }

    fn check_grid(&self, b: &DualObservable) -> Result<()> {
        if PhaseGrid::same_as(&self.grid, b.grid()) {
            Ok(())
        } else {
            Err(LabError::GridMismatch)
        }
    }

    pub fn q_plus(&self, b: &DualObservable) -> Result<DualObservable> {
        self.check_grid(b)?;
        let g = &self.grid;
        let ns = g.n_space();
        let mut out = vec![0.0; g.len()];
        for m in 0..g.shells.len() {
            apply_shell_matrix(ns, g.shell_offset(m), g.shells[m].len(), &self.gains[m], b.values(), &mut out);
        }
        Ok(DualObservable::from_raw(g.clone(), out))
    }

    pub fn q_minus(&self, b: &DualObservable) -> Result<DualObservable> {
        self.check_grid(b)?;
        let g = &self.grid;
        let ns = g.n_space();
        let mut out = b.values().to_vec();
        for m in 0..g.shells.len() {
            let off = g.shell_offset(m);
            for (j, c) in self.losses[m].iter().enumerate() {
                for x in &mut out[(off + j) * ns..(off + j + 1) * ns] {
                    *x *= c;
                }
            }
        }
        Ok(DualObservable::from_raw(g.clone(), out))
    }

    /// Q b = Q₊ b − Q₋ b.
    pub fn collide(&self, b: &DualObservable) -> Result<DualObservable> {
        let p = self.q_plus(b)?;
        let l = self.q_minus(b)?;
        let v = p.values().iter().zip(l.values()).map(|(a, c)| a - c).collect();
        Ok(DualObservable::from_raw(self.grid.clone(), v))
    }

    /// Q_{+,t} b(x, ξ) = ∫ σ δ b(x − 2t(ξ' − ξ), ξ') dξ', shifts applied spectrally.
    pub fn q_plus_shifted(&self, b: &DualObservable, t: f64) -> Result<DualObservable> {
        self.check_grid(b)?;
        if t == 0.0 {
            return self.q_plus(b);
        }
        let g = &self.grid;
        let ns = g.n_space();
        let nv = g.n_velocity();
        let spectra: Vec<Vec<Complex64>> = (0..nv)
            .into_par_iter()
            .map(|v| {
                let mut buf: Vec<Complex64> = b.velocity_block(v).iter().map(|&x| Complex64::new(x, 0.0)).collect();
                self.fft.forward(&mut buf);
                buf
            })
            .collect();
        let mut out = vec![0.0; g.len()];
        out.par_chunks_mut(ns).enumerate().for_each(|(v, ov)| {
            let (m, j) = g.velocity_node(v);
            let shell = &g.shells[m];
            let n = shell.len();
            let off = g.shell_offset(m);
            let xi = g.velocity(v);
            let mut acc = vec![Complex64::new(0.0, 0.0); ns];
            let mut idx = vec![0usize; g.dim];
            for kk in 0..n {
                let a = self.gains[m][j * n + kk];
                if a == 0.0 {
                    continue;
                }
                let xp: Vec<f64> = shell.directions[kk].iter().map(|c| c * shell.speed).collect();
                // value at x + s with s = −2t(ξ' − ξ)
                let s: Vec<f64> = xp.iter().zip(&xi).map(|(p, q)| -2.0 * t * (p - q)).collect();
                let axis: Vec<Vec<Complex64>> = s.iter().map(|&sa| spectral::axis_phases(g.nx, g.box_len, sa)).collect();
                let spec = &spectra[off + kk];
                for (i, z) in acc.iter_mut().enumerate() {
                    spectral::unravel(i, g.dim, g.nx, &mut idx);
                    let mut ph = axis[0][idx[0]] * a;
                    for ax in 1..g.dim {
                        ph *= axis[ax][idx[ax]];
                    }
                    *z += ph * spec[i];
                }
            }
            self.fft.inverse(&mut acc);
            for (o, z) in ov.iter_mut().zip(&acc) {
                *o = z.re;
            }
        });
        Ok(DualObservable::from_raw(g.clone(), out))
    }

    /// Q^ζ_{+,s} b(x, ξ) = 2π ∫ Ĝ(η) b(x − 2sη, ξ − η) κ^ζ(η² − 2ξ·η) dη at shell points,
    /// with b extended radially constant within `tube` of each shell and zero outside.
    pub fn q_plus_zeta_shifted(&self, b: &DualObservable, shift_time: f64, zeta: f64, tube: f64) -> Result<DualObservable> {
        self.check_grid(b)?;
        kappa_zeta(0.0, zeta)?;
        let g = &self.grid;
        self.check_tube(tube)?;
        let ns = g.n_space();
        let nv = g.n_velocity();
        let d = g.dim;
        let s = shift_time;
        let spectra: Vec<Vec<Complex64>> = (0..nv)
            .into_par_iter()
            .map(|v| {
                let mut buf: Vec<Complex64> = b.velocity_block(v).iter().map(|&x| Complex64::new(x, 0.0)).collect();
                self.fft.forward(&mut buf);
                buf
            })
            .collect();
        let mut out = vec![0.0; g.len()];
        out.par_chunks_mut(ns).enumerate().for_each(|(v, ov)| {
            let xi = g.velocity(v);
            let r0 = g.shells[g.velocity_node(v).0].speed;
            let mut acc = vec![Complex64::new(0.0, 0.0); ns];
            let mut idx = vec![0usize; d];
            for (mp, shell) in g.shells.iter().enumerate() {
                let rule = graded_rule(shell.speed - tube, shell.speed + tube, r0, zeta / (8.0 * r0), 0.05);
                let off = g.shell_offset(mp);
                for (kk, om) in shell.directions.iter().enumerate() {
                    let spec = &spectra[off + kk];
                    // phase per axis accumulated over the radial rule
                    let mut total = vec![Complex64::new(0.0, 0.0); ns];
                    let mut any = false;
                    for &(rho, q) in &rule {
                        let eta: Vec<f64> = xi.iter().zip(om).map(|(a, o)| a - rho * o).collect();
                        let wgt = 2.0
                            * PI
                            * shell.weights[kk]
                            * q
                            * rho.powi(d as i32 - 1)
                            * self.profile.value(&eta)
                            * lorentzian(rho * rho - r0 * r0, zeta);
                        if wgt == 0.0 {
                            continue;
                        }
                        any = true;
                        if s == 0.0 {
                            total[0] += wgt;
                            continue;
                        }
                        let axis: Vec<Vec<Complex64>> =
                            (0..d).map(|a| spectral::axis_phases(g.nx, g.box_len, -2.0 * s * eta[a])).collect();
                        for (i, z) in total.iter_mut().enumerate() {
                            spectral::unravel(i, d, g.nx, &mut idx);
                            let mut ph = axis[0][idx[0]];
                            for ax in 1..d {
                                ph *= axis[ax][idx[ax]];
                            }
                            *z += wgt * ph;
                        }
                    }
                    if !any {
                        continue;
                    }
                    if s == 0.0 {
                        let w = total[0];
                        for (z, sp) in acc.iter_mut().zip(spec) {
                            *z += w * sp;
                        }
                    } else {
                        for ((z, sp), t) in acc.iter_mut().zip(spec).zip(&total) {
                            *z += t * sp;
                        }
                    }
                }
            }
            self.fft.inverse(&mut acc);
            for (o, z) in ov.iter_mut().zip(&acc) {
                *o = z.re;
            }
        });
        Ok(DualObservable::from_raw(g.clone(), out))
    }

    fn check_tube(&self, tube: f64) -> Result<()> {
        let g = &self.grid;
        if !(tube > 0.0) {
            return Err(LabError::SupportViolation("tube half-width must be positive".into()));
        }
        for (i, s) in g.shells.iter().enumerate() {
            if s.speed - tube <= g.r_inner || s.speed + tube >= g.r_outer {
                return Err(LabError::SupportViolation(format!(
                    "tube around speed {} leaves the annulus ({}, {})",
                    s.speed, g.r_inner, g.r_outer
                )));
            }
            if i + 1 < g.shells.len() && s.speed + tube > g.shells[i + 1].speed - tube {
                return Err(LabError::SupportViolation("tubes of neighbouring shells overlap".into()));
            }
        }
        Ok(())
    }

    /// JSON dump: profile parameters and per-shell matrices (row-major).
    pub fn to_json(&self) -> Result<String> {
        let shells = self
            .grid
            .shells
            .iter()
            .enumerate()
            .map(|(m, s)| ShellDump { speed: s.speed, n: s.len(), kernel: &self.kernels[m], loss: &self.losses[m] })
            .collect();
        canon::to_canonical_json(&ScatteringDump { profile: &self.profile, dim: self.grid.dim, shells })
    }
}

fn default_angular(dim: usize) -> usize {
    match dim {
        1 => 2,
        2 => 256,
        _ => 40,
    }
}

/// Sharp loss rate c(ξ) = 2π ∫ Ĝ(η + ξ) δ(η² − ξ²) dη via a fine angular rule.
pub fn loss_rate(profile: &Profile, xi: &[f64]) -> Result<f64> {
    let d = xi.len();
    let (dirs, w, _) = angular_rule(d, default_angular(d))?;
    let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s: f64 = dirs
        .iter()
        .zip(&w)
        .map(|(om, wj)| {
            let eta: Vec<f64> = xi.iter().zip(om).map(|(a, o)| a + r * o).collect();
            wj * profile.value(&eta)
        })
        .sum();
    Ok(2.0 * PI * r.powi(d as i32 - 2) / 2.0 * s)
}

const C_ZETA_TOL: f64 = 1e-8;

/// c^ζ(ξ) = 2π ∫ Ĝ(η) κ^ζ(η² − 2ξ·η) dη on a tensor Gauss–Legendre rule over
/// [−6ℓ, 6ℓ]^d, doubling nodes from `start_nodes` until successive values agree
/// to 1e−8 (relative to max(1, |c|)).
pub fn c_zeta_tensor(profile: &Profile, xi: &[f64], zeta: f64, start_nodes: usize, max_nodes: usize) -> Result<f64> {
    kappa_zeta(0.0, zeta)?;
    if profile.amplitude() == 0.0 {
        return Ok(0.0);
    }
    profile.width().ok_or_else(|| invalid("tensor rule needs a decaying profile"))?;
    let mut n = start_nodes.max(2);
    let mut prev = c_zeta_tensor_fixed(profile, xi, zeta, n);
    let mut err = f64::INFINITY;
    while 2 * n <= max_nodes {
        n *= 2;
        let cur = c_zeta_tensor_fixed(profile, xi, zeta, n);
        err = (cur - prev).abs();
        if err <= C_ZETA_TOL * cur.abs().max(1.0) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(LabError::Convergence { what: format!("c^ζ tensor rule at ζ={zeta} with {n} nodes per axis"), achieved: err })
}

/// One tensor Gauss–Legendre evaluation of c^ζ with `n` nodes per axis.
pub fn c_zeta_tensor_fixed(profile: &Profile, xi: &[f64], zeta: f64, n: usize) -> f64 {
    let d = xi.len();
    let ell = profile.width().unwrap_or(1.0);
    let rule = quadrature::gl_rule(n, -6.0 * ell, 6.0 * ell);
    let partial: Vec<f64> = rule
        .par_iter()
        .map(|&(e0, w0)| {
            let mut acc = 0.0;
            let mut eta = vec![e0; d];
            match d {
                1 => acc += w0 * integrand(profile, xi, &eta, zeta),
                2 => {
                    for &(e1, w1) in &rule {
                        eta[1] = e1;
                        acc += w0 * w1 * integrand(profile, xi, &eta, zeta);
                    }
                }
                _ => {
                    for &(e1, w1) in &rule {
                        eta[1] = e1;
                        for &(e2, w2) in &rule {
                            eta[2] = e2;
                            acc += w0 * w1 * w2 * integrand(profile, xi, &eta, zeta);
                        }
                    }
                }
            }
            acc
        })
        .collect();
    2.0 * PI * partial.iter().sum::<f64>()
}

fn integrand(profile: &Profile, xi: &[f64], eta: &[f64], zeta: f64) -> f64 {
    let e2: f64 = eta.iter().map(|e| e * e).sum();
    let xe: f64 = eta.iter().zip(xi).map(|(a, b)| a * b).sum();
    profile.value(eta) * lorentzian(e2 - 2.0 * xe, zeta)
}

/// c^ζ with the default tensor rule (64 nodes per axis, doubled up to 4096 in
/// d ≤ 2 and 512 in d = 3).
pub fn c_zeta(profile: &Profile, xi: &[f64], zeta: f64) -> Result<f64> {
    let max = if xi.len() <= 2 { 4096 } else { 512 };
    c_zeta_tensor(profile, xi, zeta, 64, max)
}

/// c^ζ in polar coordinates centred at ξ: η = ξ + ρω turns the mollifier
/// argument into ρ² − |ξ|², so the ρ-rule can be graded onto the shell.
/// Resolves arbitrarily small ζ.
pub fn c_zeta_polar(profile: &Profile, xi: &[f64], zeta: f64) -> Result<f64> {
    kappa_zeta(0.0, zeta)?;
    let d = xi.len();
    let ell = profile.width().ok_or_else(|| invalid("polar rule needs a decaying profile"))?;
    let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (dirs, w, _) = angular_rule(d, default_angular(d))?;
    let rule = graded_rule(0.0, r + 9.0 * ell, r, zeta / (8.0 * r.max(1e-3)), 0.2 * ell);
    let parts: Vec<f64> = dirs
        .par_iter()
        .zip(w.par_iter())
        .map(|(om, wj)| {
            let mut acc = 0.0;
            let mut eta = vec![0.0; d];
            for &(rho, q) in &rule {
                for a in 0..d {
                    eta[a] = xi[a] + rho * om[a];
                }
                acc += q * rho.powi(d as i32 - 1) * profile.value(&eta) * lorentzian(rho * rho - r * r, zeta);
            }
            wj * acc
        })
        .collect();
    Ok(2.0 * PI * parts.iter().sum::<f64>())
}

/// Rapidly decaying scalar test functions for the mollifier study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Zero,
    Gaussian { center: f64, width: f64 },
    /// r · exp(−(r/a)^8): linear near the origin.
    WindowedLinear { half_width: f64 },
}

impl TestFunction {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            TestFunction::Zero => 0.0,
            TestFunction::Gaussian { center, width } => (-0.5 * ((r - center) / width).powi(2)).exp(),
            TestFunction::WindowedLinear { half_width } => r * (-(r / half_width).powi(8)).exp(),
        }
    }

    /// Interval outside which |f| < 1e−17 (relative).
    pub fn support(&self) -> (f64, f64) {
        match *self {
            TestFunction::Zero => (-1.0, 1.0),
            TestFunction::Gaussian { center, width } => (center - 9.0 * width, center + 9.0 * width),
            TestFunction::WindowedLinear { half_width } => (-1.8 * half_width, 1.8 * half_width),
        }
    }

    pub fn scale(&self) -> f64 {
        match *self {
            TestFunction::Zero => 1.0,
            TestFunction::Gaussian { width, .. } => width,
            TestFunction::WindowedLinear { half_width } => 0.25 * half_width,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MollifierRow {
    pub zeta: f64,
    pub sup_error: f64,
    /// Order-one error (derivative), when measured.
    pub sup_error_d1: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MollifierStudy {
    pub rows: Vec<MollifierRow>,
    /// Log-log slope of the order-zero error; NaN when errors vanish.
    pub slope: f64,
    pub slope_d1: Option<f64>,
}

fn finish_study(rows: Vec<MollifierRow>) -> MollifierStudy {
    let z: Vec<f64> = rows.iter().map(|r| r.zeta).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.sup_error).collect();
    let slope = if e.iter().all(|&x| x > 0.0) && rows.len() >= 2 { loglog_slope(&z, &e) } else { f64::NAN };
    let slope_d1 = if rows.iter().all(|r| r.sup_error_d1.map_or(false, |x| x > 0.0)) && rows.len() >= 2 {
        let e1: Vec<f64> = rows.iter().map(|r| r.sup_error_d1.unwrap_or(0.0)).collect();
        Some(loglog_slope(&z, &e1))
    } else {
        None
    };
    MollifierStudy { rows, slope, slope_d1 }
}

/// sup over `n_eval` points of `window` of |f ∗ κ^ζ − f| for each ζ, and of the
/// derivative error |(f ∗ κ^ζ)' − f'| by centred differences.
pub fn mollifier_convergence_study(f: &TestFunction, zetas: &[f64], window: (f64, f64), n_eval: usize) -> Result<MollifierStudy> {
    let (lo, hi) = f.support();
    let cap = 0.1 * f.scale();
    let conv = |x: f64, z: f64| quadrature::lorentz_convolve(|r| f.eval(r), x, z, lo, hi, cap);
    let h = 1e-3 * f.scale();
    let mut rows = Vec::new();
    for &z in zetas {
        kappa_zeta(0.0, z)?;
        let pts: Vec<f64> =
            (0..n_eval).map(|i| window.0 + (window.1 - window.0) * i as f64 / (n_eval.max(2) - 1) as f64).collect();
        let errs: Vec<(f64, f64)> = pts
            .par_iter()
            .map(|&x| {
                let e0 = (conv(x, z) - f.eval(x)).abs();
                let dconv = (conv(x + h, z) - conv(x - h, z)) / (2.0 * h);
                let df = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
                (e0, (dconv - df).abs())
            })
            .collect();
        let e0 = errs.iter().map(|e| e.0).fold(0.0, f64::max);
        let e1 = errs.iter().map(|e| e.1).fold(0.0, f64::max);
        rows.push(MollifierRow { zeta: z, sup_error: e0, sup_error_d1: Some(e1) });
    }
    Ok(finish_study(rows))
}

/// |c^ζ(ξ) − c(ξ)| for each ζ (polar route), plus the radial-derivative error
/// by centred differences with step `1e−3 |ξ|`.
pub fn c_zeta_convergence(profile: &Profile, xi: &[f64], zetas: &[f64]) -> Result<MollifierStudy> {
    let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let h = 1e-3 * r;
    let scaled = |s: f64| -> Vec<f64> { xi.iter().map(|x| x * s).collect() };
    let (xp, xm) = (scaled((r + h) / r), scaled((r - h) / r));
    let c0 = loss_rate(profile, xi)?;
    let dc = (loss_rate(profile, &xp)? - loss_rate(profile, &xm)?) / (2.0 * h);
    let mut rows = Vec::new();
    for &z in zetas {
        let e0 = (c_zeta_polar(profile, xi, z)? - c0).abs();
        let dcz = (c_zeta_polar(profile, &xp, z)? - c_zeta_polar(profile, &xm, z)?) / (2.0 * h);
        rows.push(MollifierRow { zeta: z, sup_error: e0, sup_error_d1: Some((dcz - dc).abs()) });
    }
    Ok(finish_study(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic_grid::{sphere_area, GridSpec};
    use proptest::prelude::*;

    fn grid(dim: usize, nx: usize, l: f64, speeds: Vec<f64>, angular: usize) -> Arc<PhaseGrid> {
        PhaseGrid::new(&GridSpec { dim, box_len: l, nx, r_inner: 0.4, r_outer: 1.6, speeds, angular }).unwrap()
    }

    fn generic(g: &Arc<PhaseGrid>) -> DualObservable {
        let l = g.box_len;
        DualObservable::from_fn(g.clone(), |x, xi| {
            let a = 2.0 * PI / l;
            (a * x[0] + 0.3 * xi[0]).sin() * (1.0 + 0.5 * (a * x[1] - xi[1]).cos()) + 0.2 * xi[0] * xi[1]
        })
    }

    #[test]
    fn sigma_examples() {
        let p = Profile::gaussian(1.0, 1.0);
        assert!((sigma(&p, &[0.3, 0.1], &[0.3, 0.1]) - 2.0 * PI).abs() < 1e-15);
        let want = 2.311_454_699_581_843_4;
        assert!((sigma(&p, &[1.0, 0.0], &[0.0, 1.0]) - want).abs() < 1e-14);
        // from V̂(η) = exp(−|η|²/4): |V̂(ξ − ξ')|² with |ξ − ξ'|² = 2
        let vhat = (-2.0f64 / 4.0).exp();
        assert!((2.0 * PI * vhat * vhat - want).abs() < 1e-14);
        assert!((p.amplitude_root(&[1.0, -1.0]) - vhat).abs() < 1e-15);
    }

    #[test]
    fn constant_kernel_on_unit_sphere() {
        let g = grid(3, 4, 1.0, vec![1.0], 6);
        let g0 = 0.7;
        let sd = ScatteringData::new(g.clone(), Profile::Constant { amplitude: g0 }).unwrap();
        let one = DualObservable::from_fn(g.clone(), |_, _| 1.0);
        let qp = sd.q_plus(&one).unwrap();
        let qm = sd.q_minus(&one).unwrap();
        let want = 4.0 * PI * PI * g0;
        assert!(qp.values().iter().all(|v| (v - want).abs() < 1e-12));
        assert!(qm.values().iter().all(|v| (v - want).abs() < 1e-12));
        assert!(sd.loss_rates(0).iter().all(|c| (c - want).abs() < 1e-12));
    }

    #[test]
    fn gain_of_shell_constant_equals_loss() {
        let g = grid(2, 8, 3.0, vec![0.7, 1.0, 1.3], 12);
        let sd = ScatteringData::new(g.clone(), Profile::gaussian(0.8, 0.6)).unwrap();
        let b = DualObservable::from_fn(g.clone(), |x, xi| {
            let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
            (x[0] + r).sin() + r * r
        });
        let q = sd.collide(&b).unwrap();
        assert!(q.sup_norm() < 1e-12 * b.sup_norm().max(1.0) * 10.0);
        let zero = sd.q_plus(&DualObservable::zeros(g.clone())).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
        let qp = sd.q_plus(&b).unwrap();
        for v in 0..g.n_velocity() {
            let (m, j) = g.velocity_node(v);
            let c = sd.loss_rates(m)[j];
            assert!((qp.at(3, v) - c * b.at(3, v)).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_shell_reduction_matches_mollified_delta() {
        // ∫ f(ξ') δ_ε(|ξ'|² − r²) dξ' computed radially with a narrow Gaussian δ_ε
        let f = |x: &[f64]| {
            let s: f64 = x.iter().enumerate().map(|(i, v)| (v - 0.2 * i as f64).powi(2)).sum();
            (-s).exp() * (1.0 + x[0])
        };
        for d in [2usize, 3] {
            let r: f64 = 0.9;
            let (dirs, w, _) = angular_rule(d, if d == 2 { 64 } else { 16 }).unwrap();
            let reduced: f64 = r.powi(d as i32 - 2) / 2.0
                * dirs
                    .iter()
                    .zip(&w)
                    .map(|(om, wj)| wj * f(&om.iter().map(|o| r * o).collect::<Vec<_>>()))
                    .sum::<f64>();
            let eps = 1e-4;
            let half = 12.0 * eps / (2.0 * r);
            let rule = quadrature::gl_rule(400, r - half, r + half);
            let mut moll = 0.0;
            for (om, wj) in dirs.iter().zip(&w) {
                for &(rho, q) in &rule {
                    let u = rho * rho - r * r;
                    let delta = (-0.5 * (u / eps).powi(2)).exp() / ((2.0 * PI).sqrt() * eps);
                    let pt: Vec<f64> = om.iter().map(|o| rho * o).collect();
                    moll += wj * q * rho.powi(d as i32 - 1) * delta * f(&pt);
                }
            }
            assert!((moll - reduced).abs() < 1e-6 * reduced.abs(), "d={d}: {moll} vs {reduced}");
        }
    }

    #[test]
    fn sharp_loss_rate_closed_forms() {
        let p = Profile::gaussian(1.0, 1.0);
        // 2π² e^{−1} I₀(1) and 4π² e^{−1} sinh(1)
        assert!((loss_rate(&p, &[1.0, 0.0]).unwrap() - 9.193_726_145_911_692).abs() < 1e-12);
        assert!((loss_rate(&p, &[1.0, 0.0, 0.0]).unwrap() - 17.067_797_388_069_222).abs() < 1e-11);
        // a fine shell grid reproduces it through c_{m,j}
        let g = grid(2, 4, 1.0, vec![1.0], 64);
        let sd = ScatteringData::new(g, p).unwrap();
        assert!(sd.loss_rates(0).iter().all(|c| (c - 9.193_726_145_911_692).abs() < 1e-12));
    }

    #[test]
    fn kappa_examples() {
        let z = 0.3;
        assert!((kappa_zeta(0.0, z).unwrap() - 1.0 / (PI * z)).abs() < 1e-15);
        assert!((kappa_zeta(z, z).unwrap() - 1.0 / (2.0 * PI * z)).abs() < 1e-15);
        assert!(kappa_zeta(1.0, 0.0).is_err());
        assert!(kappa_zeta(1.0, -1.0).is_err());
        let int = quadrature::graded_rule(-100.0, 100.0, 0.0, 0.25, 1.0)
            .iter()
            .map(|&(r, w)| w * kappa_zeta(r, 1.0).unwrap())
            .sum::<f64>();
        assert!((int - 0.993_634_014_470_183_5).abs() < 1e-12);
        assert!((int - (1.0 - 2.0 / (PI * 100.0))).abs() < 1e-5);
    }

    #[test]
    fn mollifier_params_ranges() {
        assert!(MollifierParams::new(0.1, 0.9).is_ok());
        assert!(MollifierParams::new(1.0, 0.5).is_err());
        assert!(MollifierParams::new(0.1, 1.0).is_err());
    }

    #[test]
    fn c_zeta_tensor_matches_polar_route() {
        let p = Profile::gaussian(1.0, 1.0);
        let t = c_zeta(&p, &[1.0, 0.0], 0.1).unwrap();
        let q = c_zeta_polar(&p, &[1.0, 0.0], 0.1).unwrap();
        assert!((t - q).abs() < 1e-6, "{t} vs {q}");
        assert_eq!(c_zeta(&Profile::gaussian(0.0, 1.0), &[1.0, 0.0], 0.1).unwrap(), 0.0);
        // the tensor rule cannot resolve a very narrow shell and says so
        match c_zeta_tensor(&p, &[1.0, 0.0], 1e-4, 64, 256) {
            Err(LabError::Convergence { achieved, .. }) => assert!(achieved > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn c_zeta_polar_in_three_dims_matches_tensor() {
        let p = Profile::gaussian(0.5, 0.8);
        let xi = [0.6, -0.3, 0.5];
        let t = c_zeta_tensor(&p, &xi, 0.3, 32, 512).unwrap();
        let q = c_zeta_polar(&p, &xi, 0.3).unwrap();
        assert!((t - q).abs() < 1e-6 * q, "{t} vs {q}");
    }

    #[test]
    fn c_zeta_rate_toward_sharp_rate() {
        let p = Profile::gaussian(1.0, 1.0);
        let st = c_zeta_convergence(&p, &[1.0, 0.0], &[1e-1, 1e-2, 1e-3, 1e-4]).unwrap();
        assert!(st.slope >= 0.7, "slope {}", st.slope);
        let st3 = c_zeta_convergence(&p, &[0.0, 0.8, 0.6], &[1e-1, 1e-2, 1e-3, 1e-4]).unwrap();
        assert!(st3.slope >= 0.7, "slope {}", st3.slope);
    }

    #[test]
    fn mollifier_study_examples() {
        let zs = [1e-1, 1e-2, 1e-3];
        let st = mollifier_convergence_study(&TestFunction::Gaussian { center: 0.0, width: 1.0 }, &zs, (-3.0, 3.0), 61).unwrap();
        assert!((0.7..=1.1).contains(&st.slope), "slope {}", st.slope);
        let z = mollifier_convergence_study(&TestFunction::Zero, &zs, (-1.0, 1.0), 5).unwrap();
        assert!(z.rows.iter().all(|r| r.sup_error == 0.0));
    }

    #[test]
    fn windowed_linear_against_direct_convolution() {
        // trapezoid sum on a very fine uniform grid as the oracle
        let f = TestFunction::WindowedLinear { half_width: 2.0 };
        let zeta = 0.05;
        let st = mollifier_convergence_study(&f, &[zeta], (-0.5, 0.5), 11).unwrap();
        let (lo, hi) = f.support();
        let n = 400_000;
        let h = (hi - lo) / n as f64;
        let mut worst: f64 = 0.0;
        for i in 0..11 {
            let x = -0.5 + i as f64 * 0.1;
            let mut s = 0.0;
            for k in 0..=n {
                let r = lo + k as f64 * h;
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                s += w * f.eval(r) * lorentzian(x - r, zeta);
            }
            worst = worst.max((s * h - f.eval(x)).abs());
        }
        assert!((st.rows[0].sup_error - worst).abs() < 1e-7, "{} vs {worst}", st.rows[0].sup_error);
    }

    fn trig_eval(g: &PhaseGrid, block: &[f64], y: &[f64]) -> f64 {
        // direct DFT of the block, then the interpolant at y
        let n = g.nx;
        let k = spectral::wavenumbers(n, g.box_len);
        let ns = g.n_space();
        let mut total = 0.0;
        let mut mi = vec![0usize; g.dim];
        let mut xi = vec![0usize; g.dim];
        for m in 0..ns {
            spectral::unravel(m, g.dim, n, &mut mi);
            let mut c = Complex64::new(0.0, 0.0);
            for i in 0..ns {
                spectral::unravel(i, g.dim, n, &mut xi);
                let ph: f64 = (0..g.dim).map(|a| k[mi[a]] * xi[a] as f64 * g.spacing()).sum();
                c += block[i] * Complex64::from_polar(1.0, -ph);
            }
            let ph: f64 = (0..g.dim).map(|a| k[mi[a]] * y[a]).sum();
            total += (c * Complex64::from_polar(1.0, ph)).re;
        }
        total / ns as f64
    }

    #[test]
    fn shifted_gain_examples() {
        let g = grid(2, 10, 4.0, vec![1.0], 6);
        let sd = ScatteringData::new(g.clone(), Profile::gaussian(1.0, 0.7)).unwrap();
        let b = generic(&g);
        let q0 = sd.q_plus(&b).unwrap();
        assert!(sd.q_plus_shifted(&b, 0.0).unwrap().max_abs_diff(&q0) < 1e-14);
        let flat = DualObservable::from_fn(g.clone(), |_, xi| xi[0] + 2.0 * xi[1] * xi[1]);
        let a = sd.q_plus_shifted(&flat, 0.37).unwrap();
        assert!(a.max_abs_diff(&sd.q_plus(&flat).unwrap()) < 1e-12);

        let t = 0.1;
        let got = sd.q_plus_shifted(&b, t).unwrap();
        let shell = &g.shells[0];
        let n = shell.len();
        let mut worst: f64 = 0.0;
        for i in [0usize, 17, 55, 99] {
            let x = g.position(i);
            for j in 0..n {
                let xi = g.velocity(j);
                let mut s = 0.0;
                for kk in 0..n {
                    let xp = g.velocity(kk);
                    let y: Vec<f64> = (0..2).map(|a| x[a] - 2.0 * t * (xp[a] - xi[a])).collect();
                    s += shell.weights[kk] * sigma(sd.profile(), &xi, &xp) * trig_eval(&g, b.velocity_block(kk), &y);
                }
                s *= shell.speed.powi(0) / 2.0;
                worst = worst.max((s - got.at(i, j)).abs());
            }
        }
        assert!(worst < 1e-8, "max diff {worst}");
    }

    #[test]
    fn mollified_gain_errors_and_zero_profile() {
        let g = grid(2, 8, 4.0, vec![1.0], 8);
        let b = generic(&g);
        let sd0 = ScatteringData::new(g.clone(), Profile::gaussian(0.0, 1.0)).unwrap();
        assert_eq!(sd0.q_plus_zeta_shifted(&b, 0.1, 0.05, 0.3).unwrap().sup_norm(), 0.0);
        let sd = ScatteringData::new(g.clone(), Profile::gaussian(1.0, 1.0)).unwrap();
        assert!(matches!(sd.q_plus_zeta_shifted(&b, 0.1, 0.05, 0.7), Err(LabError::SupportViolation(_))));
        assert!(sd.q_plus_zeta_shifted(&b, 0.1, 0.0, 0.3).is_err());
    }

    #[test]
    fn mollified_gain_tends_to_sharp_gain() {
        let g = grid(2, 8, 4.0, vec![1.0], 16);
        let sd = ScatteringData::new(g.clone(), Profile::gaussian(1.0, 1.0)).unwrap();
        let b = generic(&g);
        let sharp0 = sd.q_plus(&b).unwrap();
        let sharp_t = sd.q_plus_shifted(&b, -0.05).unwrap();
        let mut errs = Vec::new();
        let zs = [1e-2, 1e-3, 1e-4];
        for &z in &zs {
            let m0 = sd.q_plus_zeta_shifted(&b, 0.0, z, 0.5).unwrap();
            errs.push(m0.max_abs_diff(&sharp0));
            // the displayed shift x − 2sη is the sharp shift with t = −s
            let mt = sd.q_plus_zeta_shifted(&b, 0.05, z, 0.5).unwrap();
            assert!(mt.max_abs_diff(&sharp_t) < 50.0 * z, "ζ={z}");
        }
        assert!(errs.windows(2).all(|w| w[1] < w[0]));
        assert!(loglog_slope(&zs, &errs) > 0.7);
    }

    #[test]
    fn mollified_gain_single_point_against_polar_riemann_sums() {
        let g = grid(2, 8, 4.0, vec![1.0], 32);
        let sd = ScatteringData::new(g.clone(), Profile::gaussian(1.0, 1.0)).unwrap();
        let l = g.box_len;
        let bf = move |x: &[f64], xi: &[f64]| {
            let a = 2.0 * PI / l;
            (a * x[0]).cos() * (1.0 + 0.5 * xi[1] * xi[0]) + 0.3 * (a * x[1]).sin() * xi[0]
        };
        let b = DualObservable::from_fn(g.clone(), bf);
        let (zeta, s, tube) = (0.1, 0.15, 0.45);
        let got = sd.q_plus_zeta_shifted(&b, s, zeta, tube).unwrap();
        let (i, v) = (19usize, 5usize);
        let x = g.position(i);
        let xi = g.velocity(v);
        let midpoint = |nr: usize, nt: usize| {
            let (lo, hi) = (1.0 - tube, 1.0 + tube);
            let hr = (hi - lo) / nr as f64;
            let ht = 2.0 * PI / nt as f64;
            let mut acc = 0.0;
            for a in 0..nr {
                let rho = lo + (a as f64 + 0.5) * hr;
                for c in 0..nt {
                    let th = (c as f64 + 0.5) * ht;
                    let om = [th.cos(), th.sin()];
                    let eta = [xi[0] - rho * om[0], xi[1] - rho * om[1]];
                    let y = [x[0] - 2.0 * s * eta[0], x[1] - 2.0 * s * eta[1]];
                    acc += rho * Profile::gaussian(1.0, 1.0).value(&eta) * lorentzian(rho * rho - 1.0, zeta) * bf(&y, &om);
                }
            }
            2.0 * PI * acc * hr * ht
        };
        let coarse = midpoint(2000, 256);
        let fine = midpoint(4000, 512);
        let oracle = (4.0 * fine - coarse) / 3.0;
        let rel = (got.at(i, v) - oracle).abs() / oracle.abs();
        assert!(rel < 1e-4, "rel {rel}: {} vs {oracle}", got.at(i, v));
    }

    #[test]
    fn json_dump_lists_row_major_kernels() {
        let g = grid(2, 4, 1.0, vec![1.0], 5);
        let sd = ScatteringData::new(g, Profile::gaussian(1.0, 1.0)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&sd.to_json().unwrap()).unwrap();
        assert_eq!(v["profile"]["kind"], "gaussian");
        let k = v["shells"][0]["kernel"].as_array().unwrap();
        assert_eq!(k.len(), 25);
        assert!((k[1].as_f64().unwrap() - sd.kernel(0)[1]).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn kernels_symmetric_and_generator_kills_constants(
            g0 in 0.0f64..3.0, ell in 0.2f64..3.0, dim in 2usize..4, n in 3usize..9, r in 0.5f64..1.5
        ) {
            let g = PhaseGrid::new(&GridSpec { dim, box_len: 1.0, nx: 4, r_inner: 0.4, r_outer: 1.6, speeds: vec![r], angular: n }).unwrap();
            let sd = ScatteringData::new(g.clone(), Profile::gaussian(g0, ell)).unwrap();
            let k = sd.kernel(0);
            let m = g.shells[0].len();
            for j in 0..m {
                for l in 0..m {
                    prop_assert_eq!(k[j * m + l], k[l * m + j]);
                }
            }
            let q = sd.generator(0);
            for j in 0..m {
                let row: f64 = q[j * m..(j + 1) * m].iter().sum();
                prop_assert!(row.abs() <= 1e-12 * (1.0 + sd.loss_rates(0)[j]));
            }
            let w = &g.shells[0].weights;
            let qp = sd.primal_generator(0);
            for l in 0..m {
                let col: f64 = (0..m).map(|j| w[j] * qp[j * m + l]).sum();
                prop_assert!(col.abs() <= 1e-12 * (1.0 + sd.loss_rates(0)[l]) * sphere_area(dim));
            }
        }
    }
}
