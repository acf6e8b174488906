//! Phase-space lattice: periodic box in x times a few speed shells in ξ,
//! each shell carrying an angular quadrature. Fields are stored velocity
//! node major, so `values[v * n_space + i]`.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::canon;
use crate::error::{invalid, LabError, Result};

/// Construction parameters for a [`PhaseGrid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub box_len: f64,
    pub nx: usize,
    pub r_inner: f64,
    pub r_outer: f64,
    pub speeds: Vec<f64>,
    /// d=2: number of equispaced angles. d=3: Gauss–Legendre nodes in cos θ
    /// (the azimuth gets twice as many).
    pub angular: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Shell {
    pub speed: f64,
    /// r^{d-1} Δr for multi-shell grids, 1 for a single shell.
    pub radial_factor: f64,
    pub directions: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl Shell {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseGrid {
    pub dim: usize,
    pub box_len: f64,
    pub nx: usize,
    pub r_inner: f64,
    pub r_outer: f64,
    /// Polynomial degree (trigonometric degree in d=2) integrated exactly by
    /// every angular rule.
    pub angular_degree: usize,
    pub shells: Vec<Shell>,
}

pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => panic!("unsupported dimension {dim}"),
    }
}

pub(crate) fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let n = NonZeroUsize::new(n.max(1)).expect("nonzero");
    GaussLegendre::new(n).as_node_weight_pairs().to_vec()
}

/// Directions and weights of the angular rule on S^{d-1}.
pub fn angular_rule(dim: usize, n: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>, usize)> {
    match dim {
        // S⁰ = {±1}; the two-point rule is exact for every function
        1 => Ok((vec![vec![1.0], vec![-1.0]], vec![1.0, 1.0], 1)),
        2 => {
            if n < 2 {
                return Err(invalid("need at least two angular nodes"));
            }
            let w = 2.0 * PI / n as f64;
            let dirs = (0..n)
                .map(|j| {
                    let th = 2.0 * PI * j as f64 / n as f64;
                    vec![th.cos(), th.sin()]
                })
                .collect();
            Ok((dirs, vec![w; n], n - 1))
        }
        3 => {
            if n < 1 {
                return Err(invalid("need at least one polar node"));
            }
            let nphi = 2 * n;
            let wphi = 2.0 * PI / nphi as f64;
            let mut dirs = Vec::with_capacity(n * nphi);
            let mut weights = Vec::with_capacity(n * nphi);
            for (ct, wt) in gauss_legendre(n) {
                let st = (1.0 - ct * ct).max(0.0).sqrt();
                for p in 0..nphi {
                    let ph = 2.0 * PI * p as f64 / nphi as f64;
                    dirs.push(vec![st * ph.cos(), st * ph.sin(), ct]);
                    weights.push(wt * wphi);
                }
            }
            Ok((dirs, weights, 2 * n - 1))
        }
        _ => Err(invalid(format!("phase grid dimension must be 1, 2 or 3, got {dim}"))),
    }
}

impl PhaseGrid {
    pub fn new(spec: &GridSpec) -> Result<Arc<Self>> {
        let GridSpec { dim, box_len, nx, r_inner, r_outer, ref speeds, angular } = *spec;
        if !(box_len > 0.0 && box_len.is_finite()) {
            return Err(invalid("box length must be positive"));
        }
        if nx < 4 {
            return Err(invalid("need at least 4 points per axis"));
        }
        if !(0.0 < r_inner && r_inner < r_outer && r_outer.is_finite()) {
            return Err(invalid("annulus must satisfy 0 < r < r' < inf"));
        }
        if speeds.is_empty() {
            return Err(invalid("at least one speed shell is required"));
        }
        for w in speeds.windows(2) {
            if w[1] <= w[0] {
                return Err(invalid("speeds must be strictly increasing"));
            }
        }
        if speeds.iter().any(|&r| !(r > r_inner && r < r_outer)) {
            return Err(invalid("every speed must lie strictly inside (r, r')"));
        }
        let (dirs, weights, degree) = angular_rule(dim, angular)?;
        let m = speeds.len();
        let shells = speeds
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let radial_factor = if m == 1 {
                    1.0
                } else {
                    let lo = if i == 0 { r_inner } else { 0.5 * (speeds[i - 1] + r) };
                    let hi = if i + 1 == m { r_outer } else { 0.5 * (r + speeds[i + 1]) };
                    r.powi(dim as i32 - 1) * (hi - lo)
                };
                Shell { speed: r, radial_factor, directions: dirs.clone(), weights: weights.clone() }
            })
            .collect();
        Ok(Arc::new(Self { dim, box_len, nx, r_inner, r_outer, angular_degree: degree, shells }))
    }

    pub fn n_space(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn n_velocity(&self) -> usize {
        self.shells.iter().map(Shell::len).sum()
    }

    pub fn len(&self) -> usize {
        self.n_space() * self.n_velocity()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        self.box_len / self.nx as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// First velocity index of shell `m`.
    pub fn shell_offset(&self, m: usize) -> usize {
        self.shells[..m].iter().map(Shell::len).sum()
    }

    /// (shell, angular index) of velocity node `v`.
    pub fn velocity_node(&self, v: usize) -> (usize, usize) {
        let mut off = 0;
        for (m, s) in self.shells.iter().enumerate() {
            if v < off + s.len() {
                return (m, v - off);
            }
            off += s.len();
        }
        panic!("velocity index {v} out of range");
    }

    pub fn velocity(&self, v: usize) -> Vec<f64> {
        let (m, j) = self.velocity_node(v);
        let s = &self.shells[m];
        s.directions[j].iter().map(|c| c * s.speed).collect()
    }

    /// Quadrature weight attached to velocity node `v` (shell measure × w_j).
    pub fn velocity_weight(&self, v: usize) -> f64 {
        let (m, j) = self.velocity_node(v);
        self.shells[m].radial_factor * self.shells[m].weights[j]
    }

    pub fn position(&self, i: usize) -> Vec<f64> {
        let mut idx = vec![0usize; self.dim];
        crate::spectral::unravel(i, self.dim, self.nx, &mut idx);
        idx.iter().map(|&k| k as f64 * self.spacing()).collect()
    }

    pub fn max_speed(&self) -> f64 {
        self.shells.iter().map(|s| s.speed).fold(0.0, f64::max)
    }

    /// Sufficient condition against wrap-around: a support of diameter
    /// `support_extent`, streamed at speed 2|ξ| for `total_time`, still fits
    /// strictly inside one period.
    pub fn check_no_wrap(&self, support_extent: f64, total_time: f64) -> Result<()> {
        let reach = support_extent + 2.0 * total_time.abs() * self.max_speed();
        if reach < self.box_len {
            Ok(())
        } else {
            Err(LabError::SupportViolation(format!(
                "support {support_extent} streamed for t={total_time} reaches {reach} >= box {}",
                self.box_len
            )))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        canon::to_canonical_json(self)
    }

    pub(crate) fn same_as(a: &Arc<Self>, b: &Arc<Self>) -> bool {
        Arc::ptr_eq(a, b) || **a == **b
    }
}

fn check_same(a: &Arc<PhaseGrid>, b: &Arc<PhaseGrid>) -> Result<()> {
    if PhaseGrid::same_as(a, b) {
        Ok(())
    } else {
        Err(LabError::GridMismatch)
    }
}

/// Real test symbol b(x, ξ) sampled on a phase grid.
#[derive(Clone, Debug)]
pub struct DualObservable {
    grid: Arc<PhaseGrid>,
    values: Vec<f64>,
    support: Vec<bool>,
}

fn support_mask(grid: &PhaseGrid, values: &[f64]) -> Vec<bool> {
    let ns = grid.n_space();
    (0..grid.n_velocity()).map(|v| values[v * ns..(v + 1) * ns].iter().any(|&x| x != 0.0)).collect()
}

impl DualObservable {
    pub fn from_values(grid: Arc<PhaseGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!("expected {} values, got {}", grid.len(), values.len())));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(invalid("observable values must be finite"));
        }
        let support = support_mask(&grid, &values);
        Ok(Self { grid, values, support })
    }

    pub fn zeros(grid: Arc<PhaseGrid>) -> Self {
        let n = grid.len();
        let support = vec![false; grid.n_velocity()];
        Self { grid, values: vec![0.0; n], support }
    }

    pub fn from_fn(grid: Arc<PhaseGrid>, f: impl Fn(&[f64], &[f64]) -> f64) -> Self {
        let ns = grid.n_space();
        let xs: Vec<Vec<f64>> = (0..ns).map(|i| grid.position(i)).collect();
        let mut values = Vec::with_capacity(grid.len());
        for v in 0..grid.n_velocity() {
            let xi = grid.velocity(v);
            values.extend(xs.iter().map(|x| f(x, &xi)));
        }
        Self::from_values(grid, values).expect("from_fn produced non-finite values")
    }

    pub(crate) fn from_raw(grid: Arc<PhaseGrid>, values: Vec<f64>) -> Self {
        let support = support_mask(&grid, &values);
        Self { grid, values, support }
    }

    pub fn grid(&self) -> &Arc<PhaseGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Velocity nodes on which b is not identically zero.
    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn at(&self, i: usize, v: usize) -> f64 {
        self.values[v * self.grid.n_space() + i]
    }

    pub fn velocity_block(&self, v: usize) -> &[f64] {
        let ns = self.grid.n_space();
        &self.values[v * ns..(v + 1) * ns]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Nonnegative measure with density μ(x, r_m ω_j) against
/// cell volume × shell measure × angular weight.
#[derive(Clone, Debug)]
pub struct PhaseMeasure {
    grid: Arc<PhaseGrid>,
    values: Vec<f64>,
}

impl PhaseMeasure {
    pub fn new(grid: Arc<PhaseGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!("expected {} values, got {}", grid.len(), values.len())));
        }
        if values.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(invalid("measure weights must be finite and nonnegative"));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<PhaseGrid>, f: impl Fn(&[f64], &[f64]) -> f64) -> Result<Self> {
        let b = DualObservable::from_fn(grid.clone(), f);
        Self::new(grid, b.values)
    }

    /// Mass `mass` concentrated in spatial cell `i` at velocity node `v`.
    pub fn point_mass(grid: Arc<PhaseGrid>, i: usize, v: usize, mass: f64) -> Self {
        let mut values = vec![0.0; grid.len()];
        values[v * grid.n_space() + i] = mass / (grid.cell_volume() * grid.velocity_weight(v));
        Self { grid, values }
    }

    /// Evolution outputs: signs are whatever the scheme produced.
    pub(crate) fn from_raw(grid: Arc<PhaseGrid>, values: Vec<f64>) -> Self {
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<PhaseGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, i: usize, v: usize) -> f64 {
        self.values[v * self.grid.n_space() + i]
    }

    pub fn mass(&self) -> f64 {
        self.shell_marginals().iter().sum()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mass carried by each speed shell.
    pub fn shell_marginals(&self) -> Vec<f64> {
        let g = &self.grid;
        let ns = g.n_space();
        let cell = g.cell_volume();
        (0..g.shells.len())
            .map(|m| {
                let off = g.shell_offset(m);
                (0..g.shells[m].len())
                    .map(|j| {
                        let v = off + j;
                        let s: f64 = self.values[v * ns..(v + 1) * ns].iter().sum();
                        s * cell * g.velocity_weight(v)
                    })
                    .sum()
            })
            .collect()
    }

    /// Weighted L² distance of the x-summed velocity density from its
    /// per-shell angular mean; decays like the slowest angular mode.
    pub fn angular_anisotropy(&self) -> f64 {
        let g = &self.grid;
        let marg = self.velocity_marginal();
        let mut acc = 0.0;
        for m in 0..g.shells.len() {
            let off = g.shell_offset(m);
            let vs = off..off + g.shells[m].len();
            let wsum: f64 = vs.clone().map(|v| g.velocity_weight(v)).sum();
            let mean = vs.clone().map(|v| marg[v]).sum::<f64>() / wsum;
            acc += vs.map(|v| (marg[v] / g.velocity_weight(v) - mean).powi(2) * g.velocity_weight(v)).sum::<f64>();
        }
        acc.sqrt()
    }

    /// Mass per velocity node, summed over x.
    pub fn velocity_marginal(&self) -> Vec<f64> {
        let g = &self.grid;
        let ns = g.n_space();
        (0..g.n_velocity())
            .map(|v| self.values[v * ns..(v + 1) * ns].iter().sum::<f64>() * g.cell_volume() * g.velocity_weight(v))
            .collect()
    }
}

/// ∫ b dμ by the grid quadrature.
pub fn pair(mu: &PhaseMeasure, b: &DualObservable) -> Result<f64> {
    check_same(&mu.grid, &b.grid)?;
    let g = &mu.grid;
    let ns = g.n_space();
    let mut total = 0.0;
    for v in 0..g.n_velocity() {
        let r = v * ns..(v + 1) * ns;
        let s: f64 = mu.values[r.clone()].iter().zip(&b.values[r]).map(|(a, c)| a * c).sum();
        total += s * g.velocity_weight(v);
    }
    Ok(total * g.cell_volume())
}

const D1_STENCIL: [(isize, f64); 4] = [(-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)];

/// Fourth-order centered first derivative along `axis` of one periodic block.
fn diff_axis(block: &[f64], dim: usize, n: usize, axis: usize, h: f64) -> Vec<f64> {
    let stride = n.pow((dim - 1 - axis) as u32);
    let mut out = vec![0.0; block.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = (i / stride) % n;
        let base = i - pos * stride;
        let mut acc = 0.0;
        for &(off, c) in &D1_STENCIL {
            let p = (pos as isize + off).rem_euclid(n as isize) as usize;
            acc += c * block[base + p * stride];
        }
        *o = acc / (12.0 * h);
    }
    out
}

fn multi_indices(dim: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; dim]];
    let mut frontier = out.clone();
    for _ in 0..n {
        let mut next = Vec::new();
        for a in &frontier {
            for ax in 0..dim {
                // nondecreasing last-incremented axis avoids duplicates
                let last = a.iter().rposition(|&k| k > 0).unwrap_or(0);
                if ax < last {
                    continue;
                }
                let mut b = a.clone();
                b[ax] += 1;
                next.push(b);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// max_{|α| ≤ n} sup |∂_x^α b| with fourth-order periodic differences.
pub fn sup_norm_family(b: &DualObservable, n: usize) -> Result<f64> {
    if n > 4 {
        return Err(LabError::DerivativeOrder(n));
    }
    let g = &b.grid;
    let h = g.spacing();
    let mut best: f64 = 0.0;
    for v in 0..g.n_velocity() {
        let block = b.velocity_block(v);
        for alpha in multi_indices(g.dim, n) {
            let mut cur = block.to_vec();
            for (axis, &k) in alpha.iter().enumerate() {
                for _ in 0..k {
                    cur = diff_axis(&cur, g.dim, g.nx, axis, h);
                }
            }
            best = cur.iter().fold(best, |m, x| m.max(x.abs()));
        }
    }
    Ok(best)
}
