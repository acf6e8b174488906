//! Sampled Gaussian random fields, split-step Schrödinger propagation and the
//! Monte-Carlo channel with independent fields on each renewal interval.
//!
//! Time is macroscopic: a step of length τ applies e^{−i(τ/h)H} with
//! H = −Δ + V^h and V^h = √h V. Fields carry covariance hG on the torus,
//! G(x) = ∫ Ĝ(k) e^{ik·x} dk periodized by the lattice sum.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boltzmann_evolver::{BoltzmannEvolver, PrimalScheme, TransportScheme};
use crate::coherent_dynamics::QuantumScales;
use crate::collision_ops::{Profile, ScatteringData};
use crate::error::{invalid, LabError, Result};
use crate::kinetic_grid::{GridSpec, PhaseGrid, PhaseMeasure};
use crate::spectral::{unravel, wavenumbers, LatticeFft};
use crate::stats::{mean_and_se, pairwise_sum};

const C0: Complex64 = Complex64::new(0.0, 0.0);
/// Largest kinetic or potential phase allowed in one split step (radians).
pub const MAX_STEP_PHASE: f64 = 0.5;

/// Periodic lattice shared by fields and wave functions.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub dim: usize,
    pub n: usize,
    pub box_len: f64,
    fft: LatticeFft,
    /// |k|² per lattice index, FFT order.
    k2: Vec<f64>,
}

impl Lattice {
    pub fn new(dim: usize, n: usize, box_len: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(invalid(format!("Monte-Carlo lattices are d = 1 or 2, got {dim}")));
        }
        if n < 2 || !(box_len > 0.0) {
            return Err(invalid("need n ≥ 2 and a positive box length"));
        }
        let ks = wavenumbers(n, box_len);
        let fft = LatticeFft::new(dim, n);
        let mut idx = vec![0; dim];
        let k2 = (0..fft.len())
            .map(|j| {
                unravel(j, dim, n, &mut idx);
                idx.iter().map(|&m| ks[m] * ks[m]).sum()
            })
            .collect();
        Ok(Self { dim, n, box_len, fft, k2 })
    }

    pub fn len(&self) -> usize {
        self.fft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        self.box_len / self.n as f64
    }

    pub fn k_max_sqr(&self) -> f64 {
        self.k2.iter().copied().fold(0.0, f64::max)
    }

    /// Wave vector of lattice index `j` (FFT order).
    pub fn wave_vector(&self, j: usize) -> Vec<f64> {
        let ks = wavenumbers(self.n, self.box_len);
        let mut idx = vec![0; self.dim];
        unravel(j, self.dim, self.n, &mut idx);
        idx.iter().map(|&m| ks[m]).collect()
    }

    fn partner(&self, j: usize) -> usize {
        let mut idx = vec![0; self.dim];
        unravel(j, self.dim, self.n, &mut idx);
        idx.iter().fold(0, |acc, &m| acc * self.n + (self.n - m) % self.n)
    }
}

/// Spectral sampler of V^h = √h V ∗ W on the torus. Stream (sample, interval)
/// is a fixed ChaCha block range, so draws never depend on scheduling.
#[derive(Clone, Debug)]
pub struct FieldSampler {
    lattice: Lattice,
    h: f64,
    seed: u64,
    /// √(h (2π/L)^d Ĝ(k)) per lattice index.
    amplitudes: Vec<f64>,
}

impl FieldSampler {
    pub fn new(lattice: Lattice, profile: &Profile, h: f64, seed: u64) -> Result<Self> {
        profile.validate()?;
        if !(h > 0.0) {
            return Err(invalid(format!("h must be positive, got {h}")));
        }
        let cell = (2.0 * PI / lattice.box_len).powi(lattice.dim as i32);
        let amplitudes = (0..lattice.len()).map(|j| (h * cell * profile.value(&lattice.wave_vector(j))).sqrt()).collect();
        Ok(Self { lattice, h, seed, amplitudes })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stream(&self, sample: u64, interval: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(sample);
        rng.set_word_pos((interval as u128) << 36);
        rng
    }

    /// Real field V^h for draw `(sample, interval)`.
    pub fn sample_field(&self, sample: u64, interval: u64) -> Vec<f64> {
        let lat = &self.lattice;
        let mut rng = self.stream(sample, interval);
        let mut coef = vec![C0; lat.len()];
        for j in 0..lat.len() {
            let p = lat.partner(j);
            let a = self.amplitudes[j];
            if p == j {
                let g: f64 = StandardNormal.sample(&mut rng);
                coef[j] = Complex64::new(a * g, 0.0);
            } else if j < p {
                let g1: f64 = StandardNormal.sample(&mut rng);
                let g2: f64 = StandardNormal.sample(&mut rng);
                let z = Complex64::new(g1, g2) * (a / 2f64.sqrt());
                coef[j] = z;
                coef[p] = z.conj();
            }
        }
        lat.fft.inverse(&mut coef);
        let scale = lat.len() as f64;
        coef.iter().map(|z| z.re * scale).collect()
    }

    /// hG_per at lattice displacement `lag` (in cells).
    pub fn covariance(&self, lag: &[i64]) -> f64 {
        let lat = &self.lattice;
        let dx = lat.spacing();
        (0..lat.len())
            .map(|j| {
                let k = lat.wave_vector(j);
                let phase: f64 = k.iter().zip(lag).map(|(k, &l)| k * l as f64 * dx).sum();
                self.amplitudes[j] * self.amplitudes[j] * phase.cos()
            })
            .sum()
    }
}

/// Wave function on the lattice, ℓ²-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveState {
    pub psi: Vec<Complex64>,
}

impl WaveState {
    pub fn new(lattice: &Lattice, psi: Vec<Complex64>) -> Result<Self> {
        if psi.len() != lattice.len() {
            return Err(LabError::GridMismatch);
        }
        let nrm = norm(&psi);
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Err(invalid("wave function must be nonzero and finite"));
        }
        Ok(Self { psi: psi.into_iter().map(|z| z / nrm).collect() })
    }

    /// exp(−|x−x₀|²/(4σ²) + ik₀·x) on the nearest periodic images.
    pub fn gaussian_packet(lattice: &Lattice, center: &[f64], momentum: &[f64], sigma: f64) -> Result<Self> {
        if center.len() != lattice.dim || momentum.len() != lattice.dim || !(sigma > 0.0) {
            return Err(invalid("packet needs d-vectors and a positive width"));
        }
        let (n, dx, l) = (lattice.n, lattice.spacing(), lattice.box_len);
        let mut idx = vec![0; lattice.dim];
        let psi = (0..lattice.len())
            .map(|j| {
                unravel(j, lattice.dim, n, &mut idx);
                let mut r2 = 0.0;
                let mut ph = 0.0;
                for a in 0..lattice.dim {
                    let x = idx[a] as f64 * dx;
                    let d = (x - center[a]) - l * ((x - center[a]) / l).round();
                    r2 += d * d;
                    ph += momentum[a] * x;
                }
                Complex64::from_polar((-r2 / (4.0 * sigma * sigma)).exp(), ph)
            })
            .collect();
        Self::new(lattice, psi)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.psi)
    }

    /// |ψ̂(k)|² in FFT order (unitary transform).
    pub fn momentum_distribution(&self, lattice: &Lattice) -> Vec<f64> {
        let mut spec = self.psi.clone();
        lattice.fft.forward(&mut spec);
        let s = 1.0 / lattice.len() as f64;
        spec.iter().map(|z| z.norm_sqr() * s).collect()
    }

    /// Position variance of |ψ|² along axis `a`, taken about the mean on the
    /// unwrapped box [0, L).
    pub fn position_variance(&self, lattice: &Lattice, axis: usize) -> f64 {
        let mut idx = vec![0; lattice.dim];
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (j, z) in self.psi.iter().enumerate() {
            unravel(j, lattice.dim, lattice.n, &mut idx);
            let x = idx[axis] as f64 * lattice.spacing();
            m1 += z.norm_sqr() * x;
            m2 += z.norm_sqr() * x * x;
        }
        m2 - m1 * m1
    }
}

fn norm(psi: &[Complex64]) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Precomputed Strang factors for one step length.
#[derive(Clone, Debug)]
pub struct SplitStepper {
    lattice: Lattice,
    tau: f64,
    h: f64,
    kinetic: Vec<Complex64>,
}

impl SplitStepper {
    /// Fails with `PhaseViolation` if the kinetic phase τ max|k|²/h exceeds
    /// [`MAX_STEP_PHASE`].
    pub fn new(lattice: &Lattice, tau: f64, h: f64) -> Result<Self> {
        if !(tau >= 0.0) || !(h > 0.0) {
            return Err(invalid("need τ ≥ 0 and h > 0"));
        }
        let phase = tau * lattice.k_max_sqr() / h;
        if phase > MAX_STEP_PHASE {
            return Err(LabError::PhaseViolation { phase, limit: MAX_STEP_PHASE });
        }
        let kinetic = lattice.k2.iter().map(|k2| Complex64::from_polar(1.0, -tau * k2 / h)).collect();
        Ok(Self { lattice: lattice.clone(), tau, h, kinetic })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn potential_factors(&self, v: &[f64]) -> Result<Vec<Complex64>> {
        if v.len() != self.lattice.len() {
            return Err(LabError::GridMismatch);
        }
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let phase = self.tau * vmax / self.h;
        if phase > MAX_STEP_PHASE {
            return Err(LabError::PhaseViolation { phase, limit: MAX_STEP_PHASE });
        }
        Ok(v.iter().map(|x| Complex64::from_polar(1.0, -0.5 * self.tau * x / self.h)).collect())
    }

    /// `steps` Strang steps e^{−i(τ/2h)V} e^{i(τ/h)Δ} e^{−i(τ/2h)V}; half
    /// potential steps of neighbouring steps are merged.
    pub fn run(&self, state: &mut WaveState, v: &[f64], steps: usize) -> Result<()> {
        if state.psi.len() != self.lattice.len() {
            return Err(LabError::GridMismatch);
        }
        if steps == 0 {
            return Ok(());
        }
        let half = self.potential_factors(v)?;
        let full: Vec<Complex64> = half.iter().map(|z| z * z).collect();
        let psi = &mut state.psi;
        psi.iter_mut().zip(&half).for_each(|(p, f)| *p *= f);
        for s in 0..steps {
            self.lattice.fft.forward(psi);
            psi.iter_mut().zip(&self.kinetic).for_each(|(p, f)| *p *= f);
            self.lattice.fft.inverse(psi);
            let pot = if s + 1 == steps { &half } else { &full };
            psi.iter_mut().zip(pot).for_each(|(p, f)| *p *= f);
        }
        Ok(())
    }
}

/// One Strang step of length τ.
pub fn split_step(lattice: &Lattice, state: &mut WaveState, v: &[f64], tau: f64, h: f64) -> Result<()> {
    SplitStepper::new(lattice, tau, h)?.run(state, v, 1)
}

/// Number of equal substeps keeping both phases within [`MAX_STEP_PHASE`] over time `t`.
pub fn substeps(lattice: &Lattice, v_max: f64, t: f64, h: f64) -> usize {
    let phase = t * lattice.k_max_sqr().max(v_max) / h;
    ((phase / MAX_STEP_PHASE).ceil() as usize).max(1)
}

/// Evolve for macroscopic time `t` in a frozen potential.
pub fn propagate(lattice: &Lattice, state: &mut WaveState, v: &[f64], t: f64, h: f64) -> Result<()> {
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let m = substeps(lattice, vmax, t, h);
    SplitStepper::new(lattice, t / m as f64, h)?.run(state, v, m)
}

/// Weighted pure states; `samples` field draws contributed equally.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub samples: usize,
    pub members: Vec<(f64, WaveState)>,
}

impl Ensemble {
    pub fn pure(state: WaveState) -> Self {
        Self { samples: 1, members: vec![(1.0, state)] }
    }

    pub fn new(members: Vec<(f64, WaveState)>) -> Result<Self> {
        if members.is_empty() || members.iter().any(|(w, _)| !(*w >= 0.0)) {
            return Err(invalid("ensemble weights must be nonnegative and nonempty"));
        }
        Ok(Self { samples: 1, members })
    }

    pub fn trace(&self) -> f64 {
        pairwise_sum(&self.members.iter().map(|(w, s)| w * s.norm().powi(2)).collect::<Vec<_>>())
    }

    /// Momentum distribution of the averaged state.
    pub fn momentum_distribution(&self, lattice: &Lattice) -> Vec<f64> {
        let per: Vec<Vec<f64>> = self.members.iter().map(|(w, s)| s.momentum_distribution(lattice).iter().map(|p| w * p).collect()).collect();
        (0..lattice.len()).map(|j| pairwise_sum(&per.iter().map(|p| p[j]).collect::<Vec<_>>())).collect()
    }

    /// Expectation of `f` for each field draw (members grouped by draw), rescaled
    /// so the sample mean is the ensemble expectation.
    pub fn per_sample(&self, f: impl Fn(&WaveState) -> f64 + Sync) -> Vec<f64> {
        let chunk = self.members.len() / self.samples;
        self.members
            .chunks(chunk)
            .map(|c| c.iter().map(|(w, s)| w * f(s)).sum::<f64>() * self.samples as f64)
            .collect()
    }
}

/// G^h_t by Monte Carlo: each member evolved under `n_samples` independent
/// fields (interval 0 of each stream).
pub fn channel(ens: &Ensemble, sampler: &FieldSampler, t: f64, n_samples: usize) -> Result<Ensemble> {
    renewal(ens, sampler, t, 1, n_samples)
}

/// (G^h_{Δt})^N with a fresh field per (sample, interval).
pub fn renewal_evolve(ens: &Ensemble, sampler: &FieldSampler, scales: &QuantumScales, n_samples: usize) -> Result<Ensemble> {
    if (scales.h - sampler.h()).abs() > 1e-15 * scales.h {
        return Err(invalid("sampler and scales disagree on h"));
    }
    renewal(ens, sampler, scales.dt(), scales.steps, n_samples)
}

fn renewal(ens: &Ensemble, sampler: &FieldSampler, dt: f64, intervals: usize, n_samples: usize) -> Result<Ensemble> {
    if n_samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    if ens.samples != 1 {
        return Err(invalid("channels act on deterministic ensembles"));
    }
    let lat = sampler.lattice();
    let h = sampler.h();
    let per: Vec<Result<Vec<(f64, WaveState)>>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut states: Vec<WaveState> = ens.members.iter().map(|(_, st)| st.clone()).collect();
            for k in 0..intervals as u64 {
                let v = sampler.sample_field(s, k);
                for st in states.iter_mut() {
                    propagate(lat, st, &v, dt, h)?;
                }
            }
            Ok(ens.members.iter().zip(states).map(|((w, _), st)| (w / n_samples as f64, st)).collect())
        })
        .collect();
    let mut members = Vec::with_capacity(n_samples * ens.members.len());
    for p in per {
        members.extend(p?);
    }
    Ok(Ensemble { samples: n_samples, members })
}

#[derive(Clone, Debug, Serialize)]
pub struct CovarianceRow {
    pub lag: i64,
    pub empirical: f64,
    pub se: f64,
    pub exact: f64,
    /// |empirical − exact| / se
    pub z: f64,
}

/// Empirical hG at lags along `axis`: per draw, the spatial average of
/// V(x)V(x + lag·δ e_axis); mean and standard error over draws.
pub fn covariance_check(sampler: &FieldSampler, axis: usize, lags: &[i64], n_samples: usize) -> Result<Vec<CovarianceRow>> {
    let lat = sampler.lattice();
    let (n, dim) = (lat.n, lat.dim);
    if axis >= dim || n_samples < 2 {
        return Err(invalid("covariance check needs a valid axis and at least two draws"));
    }
    let stats: Vec<Vec<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|s| {
            let v = sampler.sample_field(s, 0);
            let mut idx = vec![0; dim];
            lags.iter()
                .map(|&l| {
                    let mut acc = 0.0;
                    for j in 0..v.len() {
                        unravel(j, dim, n, &mut idx);
                        let jj = idx.iter().enumerate().fold(0, |a, (ax, &m)| {
                            let m = if ax == axis { (m as i64 + l).rem_euclid(n as i64) as usize } else { m };
                            a * n + m
                        });
                        acc += v[j] * v[jj];
                    }
                    acc / v.len() as f64
                })
                .collect()
        })
        .collect();
    Ok(lags.iter()
        .enumerate()
        .map(|(a, &lag)| {
            let xs: Vec<f64> = stats.iter().map(|r| r[a]).collect();
            let (mean, se) = mean_and_se(&xs);
            let mut full = vec![0i64; dim];
            full[axis] = lag;
            let exact = sampler.covariance(&full);
            CovarianceRow { lag, empirical: mean, se, exact, z: (mean - exact).abs() / se }
        })
        .collect())
}

/// Renewal trend study at d = 1: Monte-Carlo momentum marginal against the
/// Boltzmann marginal evolved from the same initial momentum distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalConfig {
    pub hs: Vec<f64>,
    pub alpha: f64,
    /// Target macroscopic time; each h uses N = round(T / h^α) intervals.
    pub total_time: f64,
    /// Lattice spacing; the box is max(`min_box_len`, 20σ) rounded up to whole cells.
    pub spacing: f64,
    pub min_box_len: f64,
    pub profile: Profile,
    pub packet_momentum: f64,
    /// Packet width σ = `packet_width` · h^{−1/2}.
    pub packet_width: f64,
    pub r_inner: f64,
    pub r_outer: f64,
    pub samples: usize,
    pub bin_width: f64,
    /// Set from the run seed by the experiment driver.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for RenewalConfig {
    fn default() -> Self {
        Self {
            hs: vec![0.2, 0.1, 0.05],
            alpha: 0.8,
            total_time: 1.0,
            spacing: 1.0 / 3.0,
            min_box_len: 128.0,
            profile: Profile::gaussian(2.0, 2.0),
            packet_momentum: 2.0,
            packet_width: 3.0,
            r_inner: 0.5,
            r_outer: 3.5,
            samples: 1000,
            bin_width: 0.5,
            seed: 17,
        }
    }
}

impl RenewalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hs.is_empty() || self.hs.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(invalid("h ladder must be nonempty and strictly decreasing"));
        }
        if !(self.alpha > 0.75 && self.alpha < 1.0) {
            return Err(invalid(format!("α must lie in (3/4, 1), got {}", self.alpha)));
        }
        if !(self.total_time > 0.0 && self.bin_width > 0.0 && self.packet_width > 0.0 && self.spacing > 0.0) || self.samples == 0 {
            return Err(invalid("renewal study needs positive time, width, bins and samples"));
        }
        if !(0.0 <= self.r_inner && self.r_inner < self.r_outer) {
            return Err(invalid("annulus needs r_inner < r_outer"));
        }
        self.profile.validate()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrendRow {
    pub h: f64,
    pub intervals: usize,
    pub dt: f64,
    pub total_time: f64,
    /// Binned total-variation distance between the two momentum marginals.
    pub tv: f64,
    pub backscatter_mc: f64,
    pub backscatter_se: f64,
    pub backscatter_boltzmann: f64,
}

pub fn renewal_trend(cfg: &RenewalConfig) -> Result<Vec<TrendRow>> {
    cfg.validate()?;
    cfg.hs.iter().map(|&h| renewal_trend_at(cfg, h)).collect()
}

pub fn renewal_trend_at(cfg: &RenewalConfig, h: f64) -> Result<TrendRow> {
    let sigma = cfg.packet_width / h.sqrt();
    let n = smooth_size((cfg.min_box_len.max(20.0 * sigma) / cfg.spacing).ceil() as usize);
    let box_len = n as f64 * cfg.spacing;
    let lat = Lattice::new(1, n, box_len)?;
    let dt = h.powf(cfg.alpha);
    let intervals = ((cfg.total_time / dt).round() as usize).max(1);
    let total = intervals as f64 * dt;
    let sampler = FieldSampler::new(lat.clone(), &cfg.profile, h, cfg.seed)?;
    let psi0 = WaveState::gaussian_packet(&lat, &[0.5 * box_len], &[cfg.packet_momentum], sigma)?;
    let p0 = psi0.momentum_distribution(&lat);
    let ks: Vec<f64> = (0..lat.len()).map(|j| lat.wave_vector(j)[0]).collect();

    // Boltzmann side: one shell per lattice speed in the annulus, homogeneous in x
    let mut speeds: Vec<f64> = ks.iter().copied().filter(|&k| k > cfg.r_inner && k < cfg.r_outer).collect();
    speeds.sort_by(f64::total_cmp);
    let nx = 4;
    let pg = PhaseGrid::new(&GridSpec {
        dim: 1,
        box_len: 1.0,
        nx,
        r_inner: cfg.r_inner,
        r_outer: cfg.r_outer,
        speeds: speeds.clone(),
        angular: 2,
    })?;
    let outside: f64 = ks.iter().zip(&p0).filter(|(k, _)| !(k.abs() > cfg.r_inner && k.abs() < cfg.r_outer)).map(|(_, p)| p).sum();
    if outside > 1e-12 {
        return Err(LabError::SupportViolation(format!("initial momentum mass {outside:e} outside the annulus")));
    }
    let node_of = |k: f64| -> Option<usize> {
        let m = pg.shells.iter().position(|sh| (sh.speed - k.abs()).abs() <= 1e-12 * sh.speed)?;
        Some(pg.shell_offset(m) + if k > 0.0 { 0 } else { 1 })
    };
    let mut values = vec![0.0; pg.len()];
    for (j, &k) in ks.iter().enumerate() {
        if let Some(v) = node_of(k) {
            for i in 0..nx {
                values[v * nx + i] = p0[j] / nx as f64 / (pg.cell_volume() * pg.velocity_weight(v));
            }
        }
    }
    let mu0 = PhaseMeasure::new(pg.clone(), values)?;
    let sd = ScatteringData::new(pg.clone(), cfg.profile.clone())?;
    let ev = BoltzmannEvolver::new(sd, TransportScheme::Spectral);
    let mu_t = ev.primal_evolve(&mu0, total, intervals, PrimalScheme::Trotter)?;
    let vel = mu_t.velocity_marginal();
    let p_boltz: Vec<f64> = ks.iter().map(|&k| node_of(k).map_or(0.0, |v| vel[v])).collect();

    // Monte-Carlo side
    let ens = renewal(&Ensemble::pure(psi0), &sampler, dt, intervals, cfg.samples)?;
    let p_mc = ens.momentum_distribution(&lat);
    let back = ens.per_sample(|s| {
        s.momentum_distribution(&lat).iter().zip(&ks).filter(|(_, &k)| k < 0.0).map(|(p, _)| p).sum()
    });
    let (backscatter_mc, backscatter_se) = mean_and_se(&back);
    let backscatter_boltzmann: f64 = p_boltz.iter().zip(&ks).filter(|(_, &k)| k < 0.0).map(|(p, _)| p).sum();

    Ok(TrendRow {
        h,
        intervals,
        dt,
        total_time: total,
        tv: binned_tv(&ks, &p_mc, &p_boltz, cfg.bin_width),
        backscatter_mc,
        backscatter_se,
        backscatter_boltzmann,
    })
}

/// Smallest 2^a 3^b ≥ `n` (a ≥ 1), a fast FFT length.
fn smooth_size(n: usize) -> usize {
    let mut best = usize::MAX;
    let mut p2 = 2;
    while p2 < 2 * n.max(2) {
        let mut m = p2;
        while m < n {
            m *= 3;
        }
        best = best.min(m);
        p2 *= 2;
    }
    best
}

/// ½ Σ_bins |P(bin) − Q(bin)| with bins [jw, (j+1)w).
pub fn binned_tv(ks: &[f64], p: &[f64], q: &[f64], width: f64) -> f64 {
    let mut bins: std::collections::BTreeMap<i64, f64> = std::collections::BTreeMap::new();
    for ((&k, &a), &b) in ks.iter().zip(p).zip(q) {
        *bins.entry((k / width).floor() as i64).or_insert(0.0) += a - b;
    }
    0.5 * bins.values().map(|d| d.abs()).sum::<f64>()
}
