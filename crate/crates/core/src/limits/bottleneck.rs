//! Late-time loss floors set by a finite parameter count or dataset size.
//!
//! Both resources enter through the same scalar equation
//! `1 = (1/R) Σ_k λ_k r / (1 + λ_k r)`, whose root `r` acts as an effective
//! ridge: the limiting loss is `Σ_k λ_k (w*_k)² / (1 + λ_k r)²`.

use serde::{Deserialize, Serialize};

use crate::analysis::{fit_series, FitResult};
use crate::error::{Error, Result};
use crate::spectra::SpectrumTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    /// Model size `N`, root `r₃`.
    Params,
    /// Dataset size `P`, root `r₁`.
    Samples,
}

/// Root of the bottleneck equation for resource size `size`.
///
/// Requires `size < M`: the left side is bounded by `M / size`.
pub fn solve_bottleneck_root(table: &SpectrumTable, size: f64, tol: f64) -> Result<f64> {
    if !(size > 0.0 && tol > 0.0) {
        return Err(Error::invalid("resource size and tolerance must be positive"));
    }
    if size >= table.len() as f64 {
        return Err(Error::NoSolution(format!(
            "resource {size} is not below the mode count {}",
            table.len()
        )));
    }
    let lam = table.eigenvalues();
    let residual = |r: f64| -> f64 {
        let s: f64 = lam.iter().rev().map(|l| l * r / (1.0 + l * r)).sum();
        s / size - 1.0
    };
    let mut hi = 1.0;
    while residual(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NoSolution("bracket overflow".into()));
        }
    }
    let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let root = 0.5 * (lo + hi);
    let res = residual(root).abs();
    if res >= tol {
        return Err(Error::NonConvergence {
            iterations: 200,
            residual: res,
        });
    }
    Ok(root)
}

/// `r₃` at model size `n`.
pub fn solve_r3(table: &SpectrumTable, n: f64, tol: f64) -> Result<f64> {
    solve_bottleneck_root(table, n, tol)
}

/// `r₁` at dataset size `p`.
pub fn solve_r1(table: &SpectrumTable, p: f64, tol: f64) -> Result<f64> {
    solve_bottleneck_root(table, p, tol)
}

/// `Σ_k λ_k (w*_k)² / (1 + λ_k r)²`.
pub fn limiting_loss(table: &SpectrumTable, r: f64) -> f64 {
    table
        .eigenvalues()
        .iter()
        .zip(table.target_weights_sq())
        .rev()
        .map(|(l, w)| l * w / (1.0 + l * r).powi(2))
        .sum()
}

pub fn asymptotic_loss_vs_n(table: &SpectrumTable, n: f64) -> Result<f64> {
    Ok(limiting_loss(table, solve_r3(table, n, 1e-10)?))
}

pub fn asymptotic_loss_vs_p(table: &SpectrumTable, p: f64) -> Result<f64> {
    Ok(limiting_loss(table, solve_r1(table, p, 1e-10)?))
}

/// Roots and floors over a resource grid with their power-law fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckReport {
    pub resource: Resource,
    pub sizes: Vec<f64>,
    pub r_values: Vec<f64>,
    pub limiting_loss: Vec<f64>,
    /// Fit of `r` against size; `exponent` is minus the slope.
    pub r_fit: FitResult,
    pub loss_fit: FitResult,
}

impl BottleneckReport {
    /// Slope of `log r` against `log size`.
    pub fn r_slope(&self) -> f64 {
        -self.r_fit.exponent
    }

    /// Slope of `log L∞` against `log size`.
    pub fn loss_slope(&self) -> f64 {
        -self.loss_fit.exponent
    }

    /// CSV with header `size,r,limiting_loss`.
    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "size,r,limiting_loss")?;
        for i in 0..self.sizes.len() {
            writeln!(out, "{},{:e},{:e}", self.sizes[i], self.r_values[i], self.limiting_loss[i])?;
        }
        Ok(())
    }
}

pub fn bottleneck_scan(table: &SpectrumTable, resource: Resource, sizes: &[f64]) -> Result<BottleneckReport> {
    let r_values = sizes
        .iter()
        .map(|&s| solve_bottleneck_root(table, s, 1e-10))
        .collect::<Result<Vec<_>>>()?;
    let limiting: Vec<f64> = r_values.iter().map(|&r| limiting_loss(table, r)).collect();
    let window = sizes
        .first()
        .zip(sizes.last())
        .map(|(a, b)| (*a, *b))
        .ok_or_else(|| Error::invalid("empty resource grid"))?;
    Ok(BottleneckReport {
        resource,
        sizes: sizes.to_vec(),
        r_fit: fit_series(sizes, &r_values, Some(window))?,
        loss_fit: fit_series(sizes, &limiting, Some(window))?,
        r_values,
        limiting_loss: limiting,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::log_grid;
    use crate::spectra::SourceCapacitySpec;

    #[test]
    fn two_mode_root() {
        let table = SpectrumTable::from_parts(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!((solve_r3(&table, 1.0, 1e-12).unwrap() - 1.0).abs() < 1e-9);
        assert!((solve_r1(&table, 1.0, 1e-12).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(solve_r3(&table, 2.0, 1e-12), Err(Error::NoSolution(_))));
    }

    #[test]
    fn zero_ridge_recovers_trace() {
        let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.5, 100).unwrap()).unwrap();
        assert!((limiting_loss(&table, 0.0) - table.total_signal()).abs() < 1e-12);
    }

    #[test]
    fn root_grows_like_power_alpha() {
        let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.5, 100_000).unwrap()).unwrap();
        let rep = bottleneck_scan(&table, Resource::Params, &log_grid(10.0, 1e3, 4)).unwrap();
        assert!((rep.r_slope() - 2.0).abs() < 0.05, "{}", rep.r_slope());
        assert!((rep.loss_slope() + 1.0).abs() < 0.1, "{}", rep.loss_slope());
        assert!(rep.r_values.windows(2).all(|w| w[1] > w[0]));
        assert!(rep.limiting_loss.windows(2).all(|w| w[1] < w[0]));
    }
}
