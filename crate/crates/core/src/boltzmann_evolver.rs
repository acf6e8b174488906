//! Transport, per-shell collision exponentials, Trotter products for the
//! dual (observable) and primal (measure) sides, and the interaction-picture
//! system ∂_t b = Q_t b.
//!
//! The characteristic speed is 2ξ: dual transport is b(x, ξ) ↦ b(x + 2tξ, ξ).

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision_ops::{apply_shell_matrix, ScatteringData};
use crate::error::{invalid, LabError, Result};
use crate::expm::{expm, nonneg_series_exp};
use crate::kinetic_grid::{DualObservable, PhaseGrid, PhaseMeasure};
use crate::spectral::{self, LatticeFft};
use crate::stats::loglog_slope;

/// How a field is shifted along x.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportScheme {
    /// Exact Fourier phase shift (band-limited interpolation).
    Spectral,
    /// Multilinear interpolation: sign preserving and mass preserving, exact
    /// for shifts that are whole cells.
    Monotone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimalScheme {
    /// Adjoint of the dual Trotter product with the full shell exponential.
    Trotter,
    /// Adjoint of transport ∘ e^{τQ₊} ∘ e^{−τQ₋} with monotone transport.
    PositivitySplit,
}

/// Per-shell E^{(m)}(τ) = exp(τ Q^{(m)}) and its weighted adjoint.
#[derive(Clone, Debug)]
pub struct ShellPropagator {
    tau: f64,
    sizes: Vec<usize>,
    dual: Vec<Vec<f64>>,
    primal: Vec<Vec<f64>>,
}

fn weighted_adjoint(mat: &[f64], w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            out[j * n + k] = w[k] * mat[k * n + j] / w[j];
        }
    }
    out
}

impl ShellPropagator {
    pub fn new(sd: &ScatteringData, tau: f64) -> Self {
        let g = sd.grid();
        let mut dual = Vec::new();
        let mut primal = Vec::new();
        let mut sizes = Vec::new();
        for (m, shell) in g.shells.iter().enumerate() {
            let n = shell.len();
            let e = expm(&sd.generator(m), n, tau);
            primal.push(weighted_adjoint(&e, &shell.weights));
            dual.push(e);
            sizes.push(n);
        }
        Self { tau, sizes, dual, primal }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dual_matrix(&self, m: usize) -> &[f64] {
        &self.dual[m]
    }

    /// exp(τ Q^{(m),primal}): acts on measure densities.
    pub fn primal_matrix(&self, m: usize) -> &[f64] {
        &self.primal[m]
    }

    fn apply(&self, mats: &[Vec<f64>], ns: usize, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; input.len()];
        let mut off = 0;
        for (m, &n) in self.sizes.iter().enumerate() {
            apply_shell_matrix(ns, off, n, &mats[m], input, &mut out);
            off += n;
        }
        out
    }

    pub fn apply_dual(&self, b: &DualObservable) -> DualObservable {
        let ns = b.grid().n_space();
        DualObservable::from_raw(b.grid().clone(), self.apply(&self.dual, ns, b.values()))
    }

    pub fn apply_primal(&self, mu: &PhaseMeasure) -> PhaseMeasure {
        let ns = mu.grid().n_space();
        PhaseMeasure::from_raw(mu.grid().clone(), self.apply(&self.primal, ns, mu.values()))
    }
}

fn apply_shells_complex(sizes: &[usize], mats: &[Vec<f64>], ns: usize, input: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); input.len()];
    let mut off = 0;
    for (m, &n) in sizes.iter().enumerate() {
        let mat = &mats[m];
        out[off * ns..(off + n) * ns].par_chunks_mut(ns).enumerate().for_each(|(j, oj)| {
            for k in 0..n {
                let a = mat[j * n + k];
                if a == 0.0 {
                    continue;
                }
                let ik = &input[(off + k) * ns..(off + k + 1) * ns];
                for (o, x) in oj.iter_mut().zip(ik) {
                    *o += a * x;
                }
            }
        });
        off += n;
    }
    out
}

/// One-axis linear-interpolation shift of a periodic block: f ↦ f(· + s)
/// along `axis`, or its transpose.
fn monotone_axis(block: &[f64], dim: usize, n: usize, axis: usize, shift_cells: f64, adjoint: bool) -> Vec<f64> {
    let q = shift_cells.floor();
    let a = shift_cells - q;
    let q = q as isize;
    let stride = n.pow((dim - 1 - axis) as u32);
    let ni = n as isize;
    let mut out = vec![0.0; block.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = ((i / stride) % n) as isize;
        let base = i - (pos as usize) * stride;
        let (p0, p1) = if adjoint { (pos - q, pos - q - 1) } else { (pos + q, pos + q + 1) };
        let v0 = block[base + p0.rem_euclid(ni) as usize * stride];
        let v1 = block[base + p1.rem_euclid(ni) as usize * stride];
        *o = if a == 0.0 { v0 } else { (1.0 - a) * v0 + a * v1 };
    }
    out
}

fn monotone_shift(block: &[f64], grid: &PhaseGrid, shift: &[f64], adjoint: bool) -> Vec<f64> {
    let h = grid.spacing();
    let mut cur = block.to_vec();
    for (axis, s) in shift.iter().enumerate() {
        if *s != 0.0 {
            cur = monotone_axis(&cur, grid.dim, grid.nx, axis, s / h, adjoint);
        }
    }
    cur
}

/// Exact spectral transport b ↦ b(x + 2tξ, ξ).
pub fn transport(b: &DualObservable, t: f64) -> DualObservable {
    let g = b.grid();
    let fft = LatticeFft::new(g.dim, g.nx);
    let out = spectral_transport(&fft, g, b.values(), t, false);
    DualObservable::from_raw(g.clone(), out)
}

fn velocity_shift(g: &PhaseGrid, v: usize, t: f64) -> Vec<f64> {
    g.velocity(v).iter().map(|x| 2.0 * t * x).collect()
}

fn to_spectra(fft: &LatticeFft, ns: usize, values: &[f64]) -> Vec<Complex64> {
    let mut spec: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    spec.par_chunks_mut(ns).for_each(|c| fft.forward(c));
    spec
}

fn from_spectra(fft: &LatticeFft, ns: usize, mut spec: Vec<Complex64>) -> Vec<f64> {
    spec.par_chunks_mut(ns).for_each(|c| fft.inverse(c));
    spec.iter().map(|z| z.re).collect()
}

/// Lattice phase tables for the shift 2tξ_v (or its transpose).
fn phase_tables(g: &PhaseGrid, t: f64, adjoint: bool) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(g.len());
    for v in 0..g.n_velocity() {
        let s = velocity_shift(g, v, t);
        let ph = spectral::shift_phases(g.dim, g.nx, g.box_len, &s);
        out.extend(ph.into_iter().map(|z| if adjoint { z.conj() } else { z }));
    }
    out
}

fn spectral_transport(fft: &LatticeFft, g: &PhaseGrid, values: &[f64], t: f64, adjoint: bool) -> Vec<f64> {
    let ns = g.n_space();
    let mut spec = to_spectra(fft, ns, values);
    let ph = phase_tables(g, t, adjoint);
    spec.par_iter_mut().zip(ph.par_iter()).for_each(|(z, p)| *z *= p);
    from_spectra(fft, ns, spec)
}

/// One row of a trajectory dump.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub min_value: f64,
    pub anisotropy: f64,
    pub shell_marginals: Vec<f64>,
}

impl TrajectoryRow {
    pub fn of(step: usize, time: f64, mu: &PhaseMeasure) -> Self {
        Self {
            step,
            time,
            mass: mu.mass(),
            min_value: mu.min_value(),
            anisotropy: mu.angular_anisotropy(),
            shell_marginals: mu.shell_marginals(),
        }
    }
}

/// Self-refinement Trotter error table.
#[derive(Clone, Debug, Serialize)]
pub struct TrotterStudy {
    pub steps: Vec<usize>,
    pub errors: Vec<f64>,
    /// error(N) / error(2N) for consecutive entries.
    pub ratios: Vec<f64>,
    pub slope: f64,
    pub reference_steps: usize,
}

#[derive(Clone, Debug)]
pub struct BoltzmannEvolver {
    sd: ScatteringData,
    scheme: TransportScheme,
}

impl BoltzmannEvolver {
    pub fn new(sd: ScatteringData, scheme: TransportScheme) -> Self {
        Self { sd, scheme }
    }

    pub fn scattering(&self) -> &ScatteringData {
        &self.sd
    }

    pub fn grid(&self) -> &Arc<PhaseGrid> {
        self.sd.grid()
    }

    pub fn scheme(&self) -> TransportScheme {
        self.scheme
    }

    fn check(&self, g: &Arc<PhaseGrid>) -> Result<()> {
        if PhaseGrid::same_as(self.grid(), g) {
            Ok(())
        } else {
            Err(LabError::GridMismatch)
        }
    }

    fn shift_values(&self, values: &[f64], t: f64, scheme: TransportScheme, adjoint: bool) -> Vec<f64> {
        let g = self.grid();
        match scheme {
            TransportScheme::Spectral => spectral_transport(self.sd.fft(), g, values, t, adjoint),
            TransportScheme::Monotone => {
                let ns = g.n_space();
                let mut out = vec![0.0; values.len()];
                out.par_chunks_mut(ns).enumerate().for_each(|(v, o)| {
                    let s = velocity_shift(g, v, t);
                    o.copy_from_slice(&monotone_shift(&values[v * ns..(v + 1) * ns], g, &s, adjoint));
                });
                out
            }
        }
    }

    /// b ↦ b(x + 2tξ, ξ) with the evolver's transport scheme.
    pub fn transport(&self, b: &DualObservable, t: f64) -> Result<DualObservable> {
        self.check(b.grid())?;
        Ok(DualObservable::from_raw(self.grid().clone(), self.shift_values(b.values(), t, self.scheme, false)))
    }

    /// (e^{τQ} e^{2τξ·∂x})^N b with τ = T/N.
    pub fn dual_trotter(&self, b: &DualObservable, total: f64, n: usize) -> Result<DualObservable> {
        self.check(b.grid())?;
        if n == 0 {
            return Err(invalid("Trotter step count must be at least 1"));
        }
        let g = self.grid();
        let tau = total / n as f64;
        let prop = ShellPropagator::new(&self.sd, tau);
        let ns = g.n_space();
        let out = match self.scheme {
            TransportScheme::Spectral => {
                let fft = self.sd.fft();
                let ph = phase_tables(g, tau, false);
                let mut spec = to_spectra(fft, ns, b.values());
                for _ in 0..n {
                    spec.par_iter_mut().zip(ph.par_iter()).for_each(|(z, p)| *z *= p);
                    spec = apply_shells_complex(&prop.sizes, &prop.dual, ns, &spec);
                }
                from_spectra(fft, ns, spec)
            }
            TransportScheme::Monotone => {
                let mut cur = b.values().to_vec();
                for _ in 0..n {
                    cur = self.shift_values(&cur, tau, TransportScheme::Monotone, false);
                    cur = prop.apply(&prop.dual, ns, &cur);
                }
                cur
            }
        };
        Ok(DualObservable::from_raw(g.clone(), out))
    }

    /// Primal evolution by the adjoint scheme; `every` > 0 records a trajectory row
    /// every `every` steps (and at the end).
    pub fn primal_trajectory(
        &self,
        mu: &PhaseMeasure,
        total: f64,
        n: usize,
        scheme: PrimalScheme,
        every: usize,
    ) -> Result<(PhaseMeasure, Vec<TrajectoryRow>)> {
        self.check(mu.grid())?;
        if n == 0 {
            return Err(invalid("step count must be at least 1"));
        }
        let g = self.grid().clone();
        let ns = g.n_space();
        let tau = total / n as f64;
        let mut rows = Vec::new();
        let record = |step: usize, vals: &[f64], rows: &mut Vec<TrajectoryRow>| {
            if every > 0 && (step % every == 0 || step == n) {
                let m = PhaseMeasure::from_raw(g.clone(), vals.to_vec());
                rows.push(TrajectoryRow::of(step, step as f64 * tau, &m));
            }
        };
        let mut cur = mu.values().to_vec();
        record(0, &cur, &mut rows);
        match scheme {
            PrimalScheme::Trotter => {
                let prop = ShellPropagator::new(&self.sd, tau);
                match self.scheme {
                    TransportScheme::Spectral if every == 0 => {
                        let fft = self.sd.fft();
                        let ph = phase_tables(&g, tau, true);
                        let mut spec = to_spectra(fft, ns, &cur);
                        for _ in 0..n {
                            spec = apply_shells_complex(&prop.sizes, &prop.primal, ns, &spec);
                            spec.par_iter_mut().zip(ph.par_iter()).for_each(|(z, p)| *z *= p);
                        }
                        cur = from_spectra(fft, ns, spec);
                    }
                    sch => {
                        for step in 1..=n {
                            cur = prop.apply(&prop.primal, ns, &cur);
                            cur = self.shift_values(&cur, tau, sch, true);
                            record(step, &cur, &mut rows);
                        }
                    }
                }
            }
            PrimalScheme::PositivitySplit => {
                let gains: Vec<Vec<f64>> = (0..g.shells.len())
                    .map(|m| {
                        let (p, _) = nonneg_series_exp(self.sd.gain_matrix(m), g.shells[m].len(), tau);
                        weighted_adjoint(&p, &g.shells[m].weights)
                    })
                    .collect();
                let sizes: Vec<usize> = g.shells.iter().map(|s| s.len()).collect();
                let damp: Vec<f64> =
                    (0..g.shells.len()).flat_map(|m| self.sd.loss_rates(m).iter().map(|c| (-tau * c).exp()).collect::<Vec<_>>()).collect();
                for step in 1..=n {
                    cur = self.shift_values(&cur, tau, TransportScheme::Monotone, true);
                    let mut next = vec![0.0; cur.len()];
                    let mut off = 0;
                    for (m, &sz) in sizes.iter().enumerate() {
                        apply_shell_matrix(ns, off, sz, &gains[m], &cur, &mut next);
                        off += sz;
                    }
                    next.par_chunks_mut(ns).zip(damp.par_iter()).for_each(|(c, d)| c.iter_mut().for_each(|x| *x *= d));
                    cur = next;
                    record(step, &cur, &mut rows);
                }
            }
        }
        Ok((PhaseMeasure::from_raw(g, cur), rows))
    }

    pub fn primal_evolve(&self, mu: &PhaseMeasure, total: f64, n: usize, scheme: PrimalScheme) -> Result<PhaseMeasure> {
        Ok(self.primal_trajectory(mu, total, n, scheme, 0)?.0)
    }

    /// transport(τ) ∘ e^{τQ₊} ∘ e^{−τQ₋} with monotone transport; maps b ≥ 0 to b ≥ 0.
    pub fn positivity_split_step(&self, b: &DualObservable, tau: f64) -> Result<DualObservable> {
        self.check(b.grid())?;
        if tau < 0.0 {
            return Err(invalid("split step needs τ ≥ 0"));
        }
        let g = self.grid();
        let ns = g.n_space();
        let mut cur = vec![0.0; b.values().len()];
        let mut off = 0;
        for m in 0..g.shells.len() {
            for (j, c) in self.sd.loss_rates(m).iter().enumerate() {
                let f = (-tau * c).exp();
                let v = off + j;
                for (o, x) in cur[v * ns..(v + 1) * ns].iter_mut().zip(b.velocity_block(v)) {
                    *o = f * x;
                }
            }
            off += g.shells[m].len();
        }
        let mut next = vec![0.0; cur.len()];
        let mut off = 0;
        for m in 0..g.shells.len() {
            let n = g.shells[m].len();
            let (p, _) = nonneg_series_exp(self.sd.gain_matrix(m), n, tau);
            apply_shell_matrix(ns, off, n, &p, &cur, &mut next);
            off += n;
        }
        let out = self.shift_values(&next, tau, TransportScheme::Monotone, false);
        Ok(DualObservable::from_raw(g.clone(), out))
    }

    /// Integrates ∂_s b = Q_s b (Q_s = Q_{+,s} − Q₋) from t₀ to t with classical RK4.
    /// Runs `steps` and `2·steps`; returns the finer result, or an instability
    /// error when the two disagree by more than `1e−6 (1 + ‖b‖∞)`.
    pub fn gq_evolve(&self, b: &DualObservable, t: f64, t0: f64, steps: usize) -> Result<DualObservable> {
        self.check(b.grid())?;
        if t < t0 {
            return Err(invalid("gq_evolve needs t ≥ t₀"));
        }
        let coarse = self.rk4(b, t, t0, steps.max(1))?;
        let fine = self.rk4(b, t, t0, 2 * steps.max(1))?;
        let diff = coarse.max_abs_diff(&fine);
        if !diff.is_finite() || diff > 1e-6 * (1.0 + b.sup_norm()) {
            return Err(LabError::Instability(format!(
                "RK4 with {} and {} steps differ by {diff:e}",
                steps,
                2 * steps
            )));
        }
        Ok(fine)
    }

    fn rhs(&self, b: &[f64], s: f64) -> Result<Vec<f64>> {
        let g = self.grid();
        let bb = DualObservable::from_raw(g.clone(), b.to_vec());
        let p = self.sd.q_plus_shifted(&bb, s)?;
        let l = self.sd.q_minus(&bb)?;
        Ok(p.values().iter().zip(l.values()).map(|(a, c)| a - c).collect())
    }

    fn rk4(&self, b: &DualObservable, t: f64, t0: f64, n: usize) -> Result<DualObservable> {
        let h = (t - t0) / n as f64;
        let mut y = b.values().to_vec();
        let axpy = |y: &[f64], k: &[f64], a: f64| -> Vec<f64> { y.iter().zip(k).map(|(p, q)| p + a * q).collect() };
        for i in 0..n {
            let s = t0 + i as f64 * h;
            let k1 = self.rhs(&y, s)?;
            let k2 = self.rhs(&axpy(&y, &k1, 0.5 * h), s + 0.5 * h)?;
            let k3 = self.rhs(&axpy(&y, &k2, 0.5 * h), s + 0.5 * h)?;
            let k4 = self.rhs(&axpy(&y, &k3, h), s + h)?;
            for (idx, v) in y.iter_mut().enumerate() {
                *v += h / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
            }
            if y.iter().any(|x| !x.is_finite()) {
                return Err(LabError::Instability("non-finite values in RK4".into()));
            }
        }
        Ok(DualObservable::from_raw(self.grid().clone(), y))
    }

    /// b_t = e^{tQ} e^{2tξ·∂x} b.
    pub fn pulled_back_symbol(&self, b: &DualObservable, t: f64) -> Result<DualObservable> {
        let moved = self.transport(b, t)?;
        Ok(ShellPropagator::new(&self.sd, t).apply_dual(&moved))
    }

    /// Sup errors of `dual_trotter` at each N against the same scheme at
    /// 64 × max(N) steps.
    pub fn trotter_error_study(&self, b: &DualObservable, total: f64, steps: &[usize]) -> Result<TrotterStudy> {
        let nmax = *steps.iter().max().ok_or_else(|| invalid("empty step ladder"))?;
        let reference_steps = 64 * nmax;
        let reference = self.dual_trotter(b, total, reference_steps)?;
        let errors: Vec<f64> = steps
            .iter()
            .map(|&n| self.dual_trotter(b, total, n).map(|x| x.max_abs_diff(&reference)))
            .collect::<Result<_>>()?;
        let ratios = errors.windows(2).map(|w| w[0] / w[1]).collect();
        let xs: Vec<f64> = steps.iter().map(|&n| n as f64).collect();
        let slope = loglog_slope(&xs, &errors);
        Ok(TrotterStudy { steps: steps.to_vec(), errors, ratios, slope, reference_steps })
    }
}

/// Smallest nonzero decay rate of shell `m`: the spectral gap of Q^{(m)},
/// which is self-adjoint for the angular weights.
pub fn spectral_gap(sd: &ScatteringData, m: usize) -> f64 {
    let eig = symmetrized_eigen(sd, m);
    let mut rates: Vec<f64> = eig.eigenvalues.iter().map(|l| -l).collect();
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let tol = 1e-9 * rates.last().copied().unwrap_or(1.0).abs().max(1.0);
    rates.into_iter().find(|r| *r > tol).unwrap_or(0.0)
}

/// Eigen-decomposition of W^{1/2} Q^{(m)} W^{−1/2}.
pub fn symmetrized_eigen(sd: &ScatteringData, m: usize) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let w = &sd.grid().shells[m].weights;
    let n = w.len();
    let q = sd.generator(m);
    let s = DMatrix::from_fn(n, n, |j, k| w[j].sqrt() * q[j * n + k] / w[k].sqrt());
    let s = (&s + s.transpose()) * 0.5;
    SymmetricEigen::new(s)
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let nshell = rows.first().map_or(0, |r| r.shell_marginals.len());
    let mut header = String::from("step,time,mass,min_value,anisotropy");
    for m in 0..nshell {
        header.push_str(&format!(",shell_{m}"));
    }
    writeln!(f, "{header}")?;
    for r in rows {
        let mut line = format!("{},{:.17e},{:.17e},{:.17e},{:.17e}", r.step, r.time, r.mass, r.min_value, r.anisotropy);
        for x in &r.shell_marginals {
            line.push_str(&format!(",{:.17e}", x));
        }
        writeln!(f, "{line}")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SnapshotHeader<'a> {
    kind: &'a str,
    time: f64,
    dtype: &'a str,
    layout: &'a str,
    shape: [usize; 2],
    grid: &'a PhaseGrid,
}

/// Writes `<stem>.bin` (little-endian f64, velocity-major) and `<stem>.json`.
pub fn write_snapshot(stem: &Path, kind: &str, time: f64, grid: &PhaseGrid, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(stem.with_extension("bin"), bytes)?;
    let header = SnapshotHeader {
        kind,
        time,
        dtype: "f64-le",
        layout: "values[v * n_space + i], v over shells then angular nodes, i row-major over x",
        shape: [grid.n_velocity(), grid.n_space()],
        grid,
    };
    std::fs::write(stem.with_extension("json"), crate::canon::to_canonical_json(&header)?)?;
    Ok(())
}
