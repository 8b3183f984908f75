//! Small dense helpers for causal time×time matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `Θ X` for the step matrix `Θ[t,s] = h_s·1[t>s]`: row `t` is `Σ_{s<t} h_s X[s,:]`.
pub(crate) fn step_mul(steps: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = x.shape();
    debug_assert_eq!(steps.len(), rows);
    let mut out = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        let mut acc = 0.0;
        for r in 0..rows {
            out[(r, c)] = acc;
            acc += steps[r] * x[(r, c)];
        }
    }
    out
}

/// Strictly lower-triangular part.
pub(crate) fn strict_lower(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for c in 0..out.ncols() {
        for r in 0..=c.min(out.nrows() - 1) {
            out[(r, c)] = 0.0;
        }
    }
    out
}

/// Solves `L Y = B` for lower-triangular `L` by forward substitution.
pub(crate) fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    check_diagonal(l, what)?;
    let y = l
        .solve_lower_triangular(b)
        .ok_or_else(|| Error::IllConditioned(format!("{what}: zero pivot")))?;
    if y.iter().all(|v| v.is_finite()) {
        Ok(y)
    } else {
        Err(Error::IllConditioned(format!("{what}: non-finite solution")))
    }
}

pub(crate) fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    check_diagonal(l, what)?;
    let y = l
        .solve_lower_triangular(b)
        .ok_or_else(|| Error::IllConditioned(format!("{what}: zero pivot")))?;
    if y.iter().all(|v| v.is_finite()) {
        Ok(y)
    } else {
        Err(Error::IllConditioned(format!("{what}: non-finite solution")))
    }
}

fn check_diagonal(l: &DMatrix<f64>, what: &str) -> Result<()> {
    let n = l.nrows();
    for i in 0..n {
        let d = l[(i, i)];
        if !(d.is_finite() && d.abs() > 1e-12) {
            return Err(Error::IllConditioned(format!("{what}: pivot {i} is {d:e}")));
        }
    }
    Ok(())
}

/// Largest absolute entrywise difference.
pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `a ← (1 - damping)·a + damping·b`.
pub(crate) fn relax(a: &mut DMatrix<f64>, b: &DMatrix<f64>, damping: f64) {
    a.zip_apply(b, |x, y| *x = (1.0 - damping) * *x + damping * y);
}

/// `acc ← acc + a·x`.
pub(crate) fn add_scaled(acc: &mut DMatrix<f64>, a: f64, x: &DMatrix<f64>) {
    acc.zip_apply(x, |s, v| *s += a * v);
}

/// Extends a correlation-like matrix to `t × t` by clamping indices, so new
/// rows and columns repeat the last known time.
pub(crate) fn extend_hold(small: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
    let n = small.nrows();
    if n == 0 {
        return DMatrix::zeros(t, t);
    }
    DMatrix::from_fn(t, t, |r, c| small[(r.min(n - 1), c.min(n - 1))])
}

/// Extends a response-like matrix to `t × t`: known block kept, identity on
/// the new diagonal, zeros elsewhere.
pub(crate) fn extend_identity(small: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
    let n = small.nrows();
    DMatrix::from_fn(t, t, |r, c| {
        if r < n && c < n {
            small[(r, c)]
        } else if r == c {
            1.0
        } else {
            0.0
        }
    })
}
