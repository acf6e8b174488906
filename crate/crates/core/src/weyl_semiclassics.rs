//! Weyl calculus on a small periodic spatial grid: symplectic Fourier
//! transform, phase-space translations, dense Weyl quantization and the
//! measurement functional computed two ways.
//!
//! Quantum states live on `n^d` points `x_j = jδ` of a periodic box of side
//! `L`. Symbols take the macroscopic position `y = hx` as first argument, so
//! a symbol is sampled on `y_i = hδ·i` (period `hL`) and on the momentum
//! lattice `k = 2πm/L`.
//!
//! `b ≥ 0` does not make `b^W` a nonnegative operator; nothing here assumes it.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, LabError, Result};
use crate::spectral::{dft_axes, signed_index};

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Phase-space point `(p_x, p_ξ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymplecticPoint {
    pub px: Vec<f64>,
    pub pxi: Vec<f64>,
}

impl SymplecticPoint {
    pub fn new(px: Vec<f64>, pxi: Vec<f64>) -> Result<Self> {
        if px.len() != pxi.len() || px.is_empty() {
            return Err(invalid("point components must have equal, nonzero length"));
        }
        if px.iter().chain(&pxi).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite phase-space point"));
        }
        Ok(Self { px, pxi })
    }

    pub fn zero(dim: usize) -> Self {
        Self { px: vec![0.0; dim], pxi: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.px.len()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            px: self.px.iter().zip(&other.px).map(|(a, b)| a + b).collect(),
            pxi: self.pxi.iter().zip(&other.pxi).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Symplectic form `σ(X₁, X₂) = ξ₁·x₂ − x₁·ξ₂`.
pub fn symplectic_form(a: &SymplecticPoint, b: &SymplecticPoint) -> f64 {
    let mut s = 0.0;
    for k in 0..a.dim() {
        s += a.pxi[k] * b.px[k] - a.px[k] * b.pxi[k];
    }
    s
}

/// Doubly periodic phase-space lattice: `n` points per axis, spacing `dx` in
/// each position axis and `dxi` in each frequency axis. Values are stored
/// row-major over `(x_1..x_d, ξ_1..ξ_d)`, FFT order on every axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseLattice {
    pub dim: usize,
    pub n: usize,
    pub dx: f64,
    pub dxi: f64,
}

impl PhaseLattice {
    pub fn len(&self) -> usize {
        self.n.pow(2 * self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lattice on which the symplectic Fourier transform lands.
    pub fn dual(&self) -> Self {
        let nf = self.n as f64;
        Self { dim: self.dim, n: self.n, dx: 2.0 * PI / (nf * self.dxi), dxi: 2.0 * PI / (nf * self.dx) }
    }

    /// Signed coordinates of a flat index.
    pub fn point(&self, idx: usize) -> SymplecticPoint {
        let d = self.dim;
        let mut px = vec![0.0; d];
        let mut pxi = vec![0.0; d];
        let mut rem = idx;
        for axis in (0..2 * d).rev() {
            let m = signed_index(rem % self.n, self.n) as f64;
            rem /= self.n;
            if axis < d {
                px[axis] = m * self.dx;
            } else {
                pxi[axis - d] = m * self.dxi;
            }
        }
        SymplecticPoint { px, pxi }
    }

    pub fn sample(&self, f: impl Fn(&SymplecticPoint) -> f64) -> Vec<Complex64> {
        (0..self.len()).map(|i| Complex64::new(f(&self.point(i)), 0.0)).collect()
    }
}

/// `F^σ b(X) = ∫ e^{−iσ(X,X')} b(X') dX'/(2π)^d`, returned on `lat.dual()`.
pub fn symplectic_fourier(lat: &PhaseLattice, values: &[Complex64]) -> Result<Vec<Complex64>> {
    if values.len() != lat.len() {
        return Err(LabError::GridMismatch);
    }
    let d = lat.dim;
    let n = lat.n;
    // x' pairs with p_ξ through e^{−i p_ξ x'}, ξ' with p_x through e^{+i p_x ξ'}
    let mut data = values.to_vec();
    let mut axes = vec![true; d];
    axes.extend(std::iter::repeat_n(false, d));
    dft_axes(&mut data, n, &axes);
    let scale = (lat.dx * lat.dxi / (2.0 * PI)).powi(d as i32);
    // result is indexed (p_ξ.., p_x..); swap halves to (p_x.., p_ξ..)
    let half = n.pow(d as u32);
    let mut out = vec![C0; data.len()];
    for a in 0..half {
        for b in 0..half {
            out[b * half + a] = data[a * half + b] * scale;
        }
    }
    Ok(out)
}

/// Spatial grid for dense quantum operators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantumGrid {
    pub dim: usize,
    pub n: usize,
    pub box_len: f64,
    pub h: f64,
}

impl QuantumGrid {
    pub fn new(dim: usize, n: usize, box_len: f64, h: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(invalid("dense quantum grids support d = 1 or 2"));
        }
        if n < 2 {
            return Err(invalid("need at least two points per axis"));
        }
        if !(box_len > 0.0 && box_len.is_finite()) {
            return Err(invalid("box length must be positive"));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid("h must be positive"));
        }
        Ok(Self { dim, n, box_len, h })
    }

    pub fn spacing(&self) -> f64 {
        self.box_len / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn multi(&self, mut idx: usize) -> [usize; 2] {
        let mut out = [0; 2];
        for axis in (0..self.dim).rev() {
            out[axis] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    pub(crate) fn flat(&self, m: &[i64]) -> usize {
        let n = self.n as i64;
        m[..self.dim].iter().fold(0usize, |acc, &v| acc * self.n + v.rem_euclid(n) as usize)
    }

    pub fn position(&self, idx: usize) -> Vec<f64> {
        let m = self.multi(idx);
        (0..self.dim).map(|a| m[a] as f64 * self.spacing()).collect()
    }

    /// Momenta of a flat index in FFT order.
    pub fn momentum(&self, idx: usize) -> Vec<f64> {
        let m = self.multi(idx);
        (0..self.dim)
            .map(|a| 2.0 * PI * signed_index(m[a], self.n) as f64 / self.box_len)
            .collect()
    }

    /// Lattice of symbol samples `(y, k)`.
    pub fn symbol_lattice(&self) -> PhaseLattice {
        PhaseLattice { dim: self.dim, n: self.n, dx: self.h * self.spacing(), dxi: 2.0 * PI / self.box_len }
    }

    /// Integer steps `(p_x/δ, h p_ξ L/2π)` of a commensurate point.
    pub fn lattice_steps(&self, p: &SymplecticPoint) -> Result<(Vec<i64>, Vec<i64>)> {
        if p.dim() != self.dim {
            return Err(LabError::GridMismatch);
        }
        let dx = self.spacing();
        let dk = 2.0 * PI / self.box_len;
        let mut a = Vec::with_capacity(self.dim);
        let mut m = Vec::with_capacity(self.dim);
        for k in 0..self.dim {
            let sa = p.px[k] / dx;
            let sm = self.h * p.pxi[k] / dk;
            if (sa - sa.round()).abs() > 1e-9 * sa.abs().max(1.0) {
                return Err(LabError::Incommensurate(format!("p_x = {} is not on the spatial lattice", p.px[k])));
            }
            if (sm - sm.round()).abs() > 1e-9 * sm.abs().max(1.0) {
                return Err(LabError::Incommensurate(format!("h p_ξ = {} is not on the momentum lattice", self.h * p.pxi[k])));
            }
            a.push(sa.round() as i64);
            m.push(sm.round() as i64);
        }
        Ok((a, m))
    }
}

/// `τ^h_P = e^{i(p_ξ·hx − p_x·D_x)}` acting on grid states:
/// `(τψ)(x) = e^{ih p_ξ·(x − p_x/2)} ψ(x − p_x)`.
pub fn tau_op(grid: &QuantumGrid, p: &SymplecticPoint) -> Result<DMatrix<Complex64>> {
    let n = grid.len();
    let mut out = DMatrix::from_element(n, n, C0);
    for_each_tau_entry(grid, p, |row, col, z| out[(row, col)] = z)?;
    Ok(out)
}

/// Same operator in the momentum basis: `û(ξ) ↦ e^{−ip_x·(ξ − hp_ξ/2)} û(ξ − hp_ξ)`.
pub fn tau_op_fourier(grid: &QuantumGrid, p: &SymplecticPoint) -> Result<DMatrix<Complex64>> {
    let (_, m) = grid.lattice_steps(p)?;
    let n = grid.len();
    let mut out = DMatrix::from_element(n, n, C0);
    for j in 0..n {
        let xi = grid.momentum(j);
        let mj = grid.multi(j);
        let src: Vec<i64> = (0..grid.dim).map(|k| mj[k] as i64 - m[k]).collect();
        let phase: f64 = -(0..grid.dim).map(|k| p.px[k] * (xi[k] - 0.5 * grid.h * p.pxi[k])).sum::<f64>();
        out[(j, grid.flat(&src))] = Complex64::from_polar(1.0, phase);
    }
    Ok(out)
}

/// Unitary DFT matrix taking position coefficients to FFT-ordered momentum
/// coefficients.
pub fn fourier_matrix(grid: &QuantumGrid) -> DMatrix<Complex64> {
    let n = grid.len();
    let norm = (n as f64).sqrt().recip();
    DMatrix::from_fn(n, n, |k, j| {
        let xi = grid.momentum(k);
        let x = grid.position(j);
        let ph: f64 = xi.iter().zip(&x).map(|(a, b)| a * b).sum();
        Complex64::from_polar(norm, -ph)
    })
}

/// Dense `b^W(hx, D_x)` by midpoint-symbol quadrature of the Weyl kernel.
/// The pair `(x, x')` uses the periodic image of `x'` nearest to `x` and the
/// midpoint is reduced into the box, so the symbol is read as `hL`-periodic
/// in position; at an exact half-period separation both images are averaged.
pub fn weyl_quantize(grid: &QuantumGrid, b: impl Fn(&[f64], &[f64]) -> f64) -> DMatrix<Complex64> {
    let n = grid.len();
    let d = grid.dim;
    let l = grid.box_len;
    let mut out = DMatrix::from_element(n, n, C0);
    let momenta: Vec<Vec<f64>> = (0..n).map(|k| grid.momentum(k)).collect();
    let tie = 1e-9 * grid.spacing();
    for j in 0..n {
        let x = grid.position(j);
        for jp in 0..n {
            let xp = grid.position(jp);
            // candidate image shifts per axis, with weights
            let mut images: Vec<(Vec<f64>, f64)> = vec![(Vec::with_capacity(d), 1.0)];
            for k in 0..d {
                let diff = x[k] - xp[k];
                let shifts = if (diff.abs() - 0.5 * l).abs() < tie {
                    vec![0.0, diff.signum() * l]
                } else {
                    vec![l * (diff / l).round()]
                };
                let w = 1.0 / shifts.len() as f64;
                let mut next = Vec::with_capacity(images.len() * shifts.len());
                for (v, wt) in &images {
                    for s in &shifts {
                        let mut v = v.clone();
                        v.push(xp[k] + s);
                        next.push((v, wt * w));
                    }
                }
                images = next;
            }
            let mut acc = C0;
            for (img, wt) in &images {
                let mid: Vec<f64> = (0..d).map(|k| grid.h * (0.5 * (x[k] + img[k])).rem_euclid(l)).collect();
                for xi in &momenta {
                    let ph: f64 = (0..d).map(|k| xi[k] * (x[k] - img[k])).sum();
                    acc += Complex64::from_polar(wt * b(&mid, xi), ph);
                }
            }
            out[(j, jp)] = acc / n as f64;
        }
    }
    out
}

/// Samples a symbol on the `(y, k)` lattice, with `y = h·x_j ∈ [0, hL)`
/// matching the grid positions and `k` signed.
pub fn sample_symbol(grid: &QuantumGrid, b: impl Fn(&[f64], &[f64]) -> f64) -> (PhaseLattice, Vec<Complex64>) {
    let lat = grid.symbol_lattice();
    let half = grid.len();
    let mut vals = Vec::with_capacity(lat.len());
    for i in 0..half {
        let y: Vec<f64> = grid.position(i).iter().map(|x| grid.h * x).collect();
        for j in 0..half {
            vals.push(Complex64::new(b(&y, &grid.momentum(j)), 0.0));
        }
    }
    (lat, vals)
}

/// Commensurate lattice points `P` with their weights `F^σb(P) dP/(2π)^d`.
/// A Nyquist coordinate is split evenly between its two signed
/// representatives, so real symbols give Hermitian sums.
fn superposition_terms(grid: &QuantumGrid, b: impl Fn(&[f64], &[f64]) -> f64) -> Result<Vec<(SymplecticPoint, Complex64)>> {
    let (_, vals) = sample_symbol(grid, b);
    superposition_terms_from_samples(grid, &vals)
}

/// As the closure form, for symbol values already sampled on
/// `grid.symbol_lattice()` in the layout of [`sample_symbol`].
pub fn superposition_terms_from_samples(grid: &QuantumGrid, vals: &[Complex64]) -> Result<Vec<(SymplecticPoint, Complex64)>> {
    let lat = grid.symbol_lattice();
    let fb = symplectic_fourier(&lat, vals)?;
    let dual = lat.dual();
    let w = (dual.dx * dual.dxi / (2.0 * PI)).powi(grid.dim as i32);
    let even = grid.n % 2 == 0;
    let nyq_x = 0.5 * grid.n as f64 * dual.dx;
    let nyq_xi = 0.5 * grid.n as f64 * dual.dxi;
    let mut out = Vec::with_capacity(dual.len());
    for (i, f) in fb.iter().enumerate() {
        if f.norm() == 0.0 {
            continue;
        }
        let mut pts = vec![dual.point(i)];
        if even {
            for k in 0..grid.dim {
                let mut extra = Vec::new();
                for p in &pts {
                    if (p.px[k] - nyq_x).abs() < 1e-9 * nyq_x {
                        let mut q = p.clone();
                        q.px[k] = -nyq_x;
                        extra.push(q);
                    }
                }
                pts.extend(extra);
                let mut extra = Vec::new();
                for p in &pts {
                    if (p.pxi[k] - nyq_xi).abs() < 1e-9 * nyq_xi {
                        let mut q = p.clone();
                        q.pxi[k] = -nyq_xi;
                        extra.push(q);
                    }
                }
                pts.extend(extra);
            }
        }
        let share = f * w / pts.len() as f64;
        out.extend(pts.into_iter().map(|p| (p, share)));
    }
    Ok(out)
}

/// `∫ F^σb(P) τ^h_P dP` summed over the commensurate lattice. Each `τ^h_P`
/// has one entry per row, so terms are accumulated entrywise.
pub fn weyl_quantize_superposition(grid: &QuantumGrid, b: impl Fn(&[f64], &[f64]) -> f64) -> Result<DMatrix<Complex64>> {
    let n = grid.len();
    let mut out = DMatrix::from_element(n, n, C0);
    for (p, c) in superposition_terms(grid, b)? {
        for_each_tau_entry(grid, &p, |row, col, z| out[(row, col)] += c * z)?;
    }
    Ok(out)
}

fn for_each_tau_entry(grid: &QuantumGrid, p: &SymplecticPoint, mut f: impl FnMut(usize, usize, Complex64)) -> Result<()> {
    let (a, _) = grid.lattice_steps(p)?;
    let mut src = [0i64; 2];
    for j in 0..grid.len() {
        let x = grid.position(j);
        let mj = grid.multi(j);
        let mut phase = 0.0;
        for k in 0..grid.dim {
            src[k] = mj[k] as i64 - a[k];
            phase += grid.h * p.pxi[k] * (x[k] - 0.5 * p.px[k]);
        }
        f(j, grid.flat(&src), Complex64::from_polar(1.0, phase));
    }
    Ok(())
}

/// State on the grid: Hermitian, positive semidefinite, trace at most one.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    matrix: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(invalid("density matrix must be square"));
        }
        let herm = (&matrix - matrix.adjoint()).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        if herm > 1e-12 {
            return Err(LabError::Invariant(format!("not Hermitian: {herm:e}")));
        }
        let tr = matrix.trace().re;
        if !(0.0..=1.0 + 1e-12).contains(&tr) {
            return Err(LabError::Invariant(format!("trace {tr} outside [0, 1]")));
        }
        let sym = (&matrix + matrix.adjoint()) * Complex64::new(0.5, 0.0);
        let min = sym.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-10 {
            return Err(LabError::Invariant(format!("negative eigenvalue {min:e}")));
        }
        Ok(Self { matrix })
    }

    /// `|ψ⟩⟨ψ|` for grid coefficients normalized so `Σ|ψ_j|² = 1`.
    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(invalid("state vector has zero norm"));
        }
        let v = nalgebra::DVector::from_iterator(psi.len(), psi.iter().map(|z| z / norm));
        Self::new(&v * v.adjoint())
    }

    /// Gaussian packet at macroscopic position `y0` and momentum `xi0`, with
    /// position width `width` in grid units (`√(1/h)` gives equal spreads
    /// `√h` in `y` and `ξ`).
    pub fn coherent_packet(grid: &QuantumGrid, y0: &[f64], xi0: &[f64], width: f64) -> Result<Self> {
        let l = grid.box_len;
        let psi: Vec<Complex64> = (0..grid.len())
            .map(|j| {
                let x = grid.position(j);
                let mut e = 0.0;
                let mut ph = 0.0;
                for k in 0..grid.dim {
                    let mut dx = x[k] - y0[k] / grid.h;
                    dx -= l * (dx / l).round();
                    e -= dx * dx / (2.0 * width * width);
                    ph += xi0[k] * dx;
                }
                Complex64::from_polar(e.exp(), ph)
            })
            .collect();
        Self::pure(&psi)
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }
}

/// `m_h(b, ρ) = Tr[b^W ρ]`; the imaginary part is returned for checking.
pub fn measure_observable(grid: &QuantumGrid, b: impl Fn(&[f64], &[f64]) -> f64, rho: &DensityMatrix) -> Result<Complex64> {
    if rho.matrix.nrows() != grid.len() {
        return Err(LabError::GridMismatch);
    }
    let bw = weyl_quantize(grid, b);
    Ok((bw * &rho.matrix).trace())
}

/// `m_h(b, ρ) = ∫ F^σb(P) Tr[τ^h_P ρ] dP` without forming `b^W`.
pub fn measure_observable_superposition(
    grid: &QuantumGrid,
    b: impl Fn(&[f64], &[f64]) -> f64,
    rho: &DensityMatrix,
) -> Result<Complex64> {
    let (_, vals) = sample_symbol(grid, b);
    measure_samples(grid, &vals, rho)
}

/// Superposition route for a symbol given by its lattice samples.
pub fn measure_samples(grid: &QuantumGrid, vals: &[Complex64], rho: &DensityMatrix) -> Result<Complex64> {
    if rho.matrix.nrows() != grid.len() {
        return Err(LabError::GridMismatch);
    }
    let mut total = C0;
    for (p, c) in superposition_terms_from_samples(grid, vals)? {
        // Tr[τρ] = Σ_j τ_{j,j−a} ρ_{j−a, j}
        let mut tr = C0;
        for_each_tau_entry(grid, &p, |row, col, z| tr += z * rho.matrix[(col, row)])?;
        total += c * tr;
    }
    Ok(total)
}

/// One row of the semiclassical concentration demo.
#[derive(Clone, Debug, serde::Serialize)]
pub struct PacketRow {
    pub h: f64,
    pub measured: f64,
    pub target: f64,
    pub error: f64,
}

/// `m_h(b, ρ^h)` for coherent packets concentrating at `(y0, xi0)`. The box
/// holds `y ∈ [0, y_len)` and the grid spacing is `spacing` in `x` units.
pub fn coherent_packet_study(
    b: impl Fn(&[f64], &[f64]) -> f64 + Copy,
    y0: f64,
    xi0: f64,
    y_len: f64,
    spacing: f64,
    hs: &[f64],
) -> Result<Vec<PacketRow>> {
    let target = b(&[y0], &[xi0]);
    hs.iter()
        .map(|&h| {
            let box_len = y_len / h;
            let n = (box_len / spacing).round() as usize;
            let grid = QuantumGrid::new(1, n, box_len, h)?;
            let rho = DensityMatrix::coherent_packet(&grid, &[y0], &[xi0], h.sqrt().recip())?;
            let m = measure_observable(&grid, b, &rho)?.re;
            Ok(PacketRow { h, measured: m, target, error: (m - target).abs() })
        })
        .collect()
}
