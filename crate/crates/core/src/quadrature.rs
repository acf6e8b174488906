//! Composite Gauss–Legendre rules, including panels graded geometrically
//! toward a sharp feature (Lorentzian peak, integrable endpoint singularity).

use std::sync::OnceLock;

use crate::kinetic_grid::gauss_legendre;

const PANEL_NODES: usize = 16;

fn base_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_NODES))
}

/// Append the 16-point rule on [a, b] to `out`.
pub fn push_panel(a: f64, b: f64, out: &mut Vec<(f64, f64)>) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    for &(x, w) in base_rule() {
        out.push((mid + half * x, half * w));
    }
}

/// Gauss–Legendre rule with `n` nodes on [a, b].
pub fn gl_rule(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    gauss_legendre(n).into_iter().map(|(x, w)| (mid + half * x, half * w)).collect()
}

/// Panel edges from `from` toward `to`, starting with width `first` and
/// doubling until `cap`.
fn graded_edges(from: f64, to: f64, first: f64, cap: f64) -> Vec<f64> {
    let len = (to - from).abs();
    let dir = if to >= from { 1.0 } else { -1.0 };
    let mut edges = vec![0.0];
    let mut h = first.min(cap).max(len * 1e-14);
    let mut pos = 0.0;
    while pos < len {
        pos = (pos + h).min(len);
        edges.push(pos);
        h = (2.0 * h).min(cap);
    }
    edges.into_iter().map(|e| from + dir * e).collect()
}

/// Composite rule on [lo, hi] with panels graded toward `center` (clamped to
/// the interval) from width `first` up to `cap`.
pub fn graded_rule(lo: f64, hi: f64, center: f64, first: f64, cap: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if hi <= lo {
        return out;
    }
    let c = center.clamp(lo, hi);
    for (from, to) in [(c, hi), (c, lo)] {
        if (to - from).abs() > 0.0 {
            let e = graded_edges(from, to, first, cap);
            for w in e.windows(2) {
                let (a, b) = if w[0] < w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
                push_panel(a, b, &mut out);
            }
        }
    }
    out
}

/// Lorentzian κ^ζ(r) = ζ / (π (r² + ζ²)); no validation.
#[inline]
pub fn lorentzian(r: f64, zeta: f64) -> f64 {
    zeta / (std::f64::consts::PI * (r * r + zeta * zeta))
}

/// (f ∗ κ^ζ)(x) for f supported in [lo, hi].
pub fn lorentz_convolve(f: impl Fn(f64) -> f64, x: f64, zeta: f64, lo: f64, hi: f64, cap: f64) -> f64 {
    graded_rule(lo, hi, x, 0.25 * zeta, cap).iter().map(|&(r, w)| w * f(r) * lorentzian(x - r, zeta)).sum()
}
