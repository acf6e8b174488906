//! Dense matrix exponentials for the per-shell collision generators.

use nalgebra::DMatrix;

/// exp(τA) for a row-major n×n matrix, by scaling and squaring with Padé
/// approximants (nalgebra's implementation).
pub fn expm(a: &[f64], n: usize, tau: f64) -> Vec<f64> {
    let m = DMatrix::from_row_slice(n, n, a) * tau;
    let e = m.exp();
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            out[j * n + k] = e[(j, k)];
        }
    }
    out
}

/// Remainder target of [`nonneg_series_exp`], relative to e^{τ‖A‖∞}.
pub const SERIES_TOL: f64 = 1e-16;

/// exp(τA) for an entrywise nonnegative A by its Taylor series. Every partial
/// sum is nonnegative, so the result is too. Returns the matrix and the bound
/// Σ_{k>K} (τ‖A‖)^k / k! on the ∞-norm of the dropped tail.
pub fn nonneg_series_exp(a: &[f64], n: usize, tau: f64) -> (Vec<f64>, f64) {
    debug_assert!(a.iter().all(|&x| x >= 0.0) && tau >= 0.0);
    let norm = (0..n).map(|j| a[j * n..(j + 1) * n].iter().sum::<f64>()).fold(0.0, f64::max) * tau;
    let mut sum = vec![0.0; n * n];
    let mut term = vec![0.0; n * n];
    for j in 0..n {
        sum[j * n + j] = 1.0;
        term[j * n + j] = 1.0;
    }
    let mut scalar_term = 1.0;
    let mut k = 0usize;
    loop {
        k += 1;
        let mut next = vec![0.0; n * n];
        for j in 0..n {
            for l in 0..n {
                let t = term[j * n + l];
                if t == 0.0 {
                    continue;
                }
                for c in 0..n {
                    next[j * n + c] += t * a[l * n + c];
                }
            }
        }
        let f = tau / k as f64;
        for (s, (t, x)) in sum.iter_mut().zip(term.iter_mut().zip(next)) {
            *t = x * f;
            *s += *t;
        }
        scalar_term *= norm / k as f64;
        // geometric tail bound once k+1 > norm
        let ratio = norm / (k + 1) as f64;
        if ratio < 1.0 {
            let tail = scalar_term * ratio / (1.0 - ratio);
            if tail <= SERIES_TOL * norm.exp() || tail == 0.0 {
                return (sum, tail);
            }
        }
    }
}
