//! Power-law eigenvalue and target spectra.
//!
//! Eigenvalues follow `λ_k = k^{-α}` and the squared target weights
//! `(w*_k)² = k^{α - αβ - 1}`, so that the per-mode signal
//! `λ_k (w*_k)² = k^{-αβ - 1}`. All prefactors are one.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest mode count [`SourceCapacitySpec::default_cutoff`] will pick.
pub const MAX_DEFAULT_MODES: usize = 1 << 22;

/// Capacity `alpha`, source `beta` and the number of retained modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceCapacitySpec {
    pub alpha: f64,
    pub beta: f64,
    pub mode_cutoff: usize,
}

impl SourceCapacitySpec {
    pub fn new(alpha: f64, beta: f64, mode_cutoff: usize) -> Result<Self> {
        let spec = Self {
            alpha,
            beta,
            mode_cutoff,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec with the mode count chosen so the full trace is converged to 0.1%.
    pub fn with_default_cutoff(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(alpha, beta, Self::default_cutoff(alpha, beta))
    }

    /// Smallest `M` whose neglected tail `Σ_{k>M} k^{-αβ-1} ≈ M^{-αβ}/(αβ)`
    /// is below 0.1% of the (≥ 1) full trace, capped at [`MAX_DEFAULT_MODES`].
    pub fn default_cutoff(alpha: f64, beta: f64) -> usize {
        let p = alpha * beta;
        if !(p.is_finite() && p > 0.0) {
            return MAX_DEFAULT_MODES;
        }
        let m = (1.0e3 / p).powf(1.0 / p).ceil();
        if m.is_finite() && m < MAX_DEFAULT_MODES as f64 {
            (m as usize).max(1)
        } else {
            MAX_DEFAULT_MODES
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 1.0) {
            return Err(Error::invalid(format!(
                "capacity alpha must be > 1, got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid(format!(
                "source beta must be > 0, got {}",
                self.beta
            )));
        }
        if self.mode_cutoff < 1 {
            return Err(Error::invalid("mode_cutoff must be at least 1"));
        }
        Ok(())
    }

    /// Exponent of the per-mode signal `λ_k (w*_k)² = k^{-(αβ+1)}`.
    pub fn signal_exponent(&self) -> f64 {
        self.alpha * self.beta + 1.0
    }
}

/// Eigenvalues and squared target weights for modes `k = 1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTable {
    eigenvalues: Vec<f64>,
    target_weights_sq: Vec<f64>,
}

impl SpectrumTable {
    /// Power-law table from a validated spec.
    pub fn build(spec: &SourceCapacitySpec) -> Result<Self> {
        spec.validate()?;
        let weight_exp = spec.alpha - spec.alpha * spec.beta - 1.0;
        let (eigenvalues, target_weights_sq) = (1..=spec.mode_cutoff)
            .map(|k| {
                let k = k as f64;
                (k.powf(-spec.alpha), k.powf(weight_exp))
            })
            .unzip();
        Ok(Self {
            eigenvalues,
            target_weights_sq,
        })
    }

    /// Table from explicit vectors. Eigenvalues must be positive and
    /// nonincreasing; squared weights nonnegative.
    pub fn from_parts(eigenvalues: Vec<f64>, target_weights_sq: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() || eigenvalues.len() != target_weights_sq.len() {
            return Err(Error::invalid(
                "eigenvalue and weight vectors must be nonempty and equally long",
            ));
        }
        if eigenvalues.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::invalid("eigenvalues must be finite and positive"));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("eigenvalues must be nonincreasing"));
        }
        if target_weights_sq.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::invalid("squared target weights must be finite and >= 0"));
        }
        Ok(Self {
            eigenvalues,
            target_weights_sq,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn target_weights_sq(&self) -> &[f64] {
        &self.target_weights_sq
    }

    /// Positive square roots of the target weights.
    pub fn target_weights(&self) -> Vec<f64> {
        self.target_weights_sq.iter().map(|w| w.sqrt()).collect()
    }

    /// `λ_k (w*_k)²` for every mode.
    pub fn signal(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .zip(&self.target_weights_sq)
            .map(|(l, w)| l * w)
            .collect()
    }

    /// `Σ_k λ_k (w*_k)²`, the loss of the zero predictor.
    pub fn total_signal(&self) -> f64 {
        self.tail_sum_from(0)
    }

    fn tail_sum_from(&self, start: usize) -> f64 {
        // smallest terms first
        self.eigenvalues[start..]
            .iter()
            .zip(&self.target_weights_sq[start..])
            .rev()
            .map(|(l, w)| l * w)
            .sum()
    }

    /// `Σ_{k > k_star} λ_k (w*_k)²`.
    pub fn tail_loss(&self, k_star: usize) -> Result<f64> {
        if k_star > self.len() {
            return Err(Error::invalid(format!(
                "k_star {} exceeds mode count {}",
                k_star,
                self.len()
            )));
        }
        Ok(self.tail_sum_from(k_star))
    }

    /// Truncated RKHS norm `Σ_k (w*_k)²`, or [`RkhsNorm::Divergent`] when the
    /// untruncated series diverges (`β ≤ 1`).
    pub fn rkhs_norm(&self, spec: &SourceCapacitySpec) -> Result<RkhsNorm> {
        spec.validate()?;
        if spec.mode_cutoff != self.len() {
            return Err(Error::invalid(format!(
                "table has {} modes but spec asks for {}",
                self.len(),
                spec.mode_cutoff
            )));
        }
        let m = self.len();
        let last = m as f64;
        let lam_ok = (self.eigenvalues[m - 1] / last.powf(-spec.alpha) - 1.0).abs() < 1e-12;
        let w_exp = spec.alpha - spec.alpha * spec.beta - 1.0;
        let w_ok = (self.target_weights_sq[m - 1] / last.powf(w_exp) - 1.0).abs() < 1e-12;
        if !(lam_ok && w_ok) {
            return Err(Error::invalid("table was not built from this spec"));
        }
        if spec.beta <= 1.0 {
            return Ok(RkhsNorm::Divergent);
        }
        let truncated = self.target_weights_sq.iter().rev().sum();
        Ok(RkhsNorm::Finite {
            truncated,
            leading_estimate: 1.0 / (spec.alpha * (spec.beta - 1.0)),
        })
    }

    /// Two-column-plus-index CSV: `k,lambda,w_star_sq`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "k,lambda,w_star_sq")?;
        for (k, (l, w)) in self.eigenvalues.iter().zip(&self.target_weights_sq).enumerate() {
            writeln!(out, "{},{:e},{:e}", k + 1, l, w)?;
        }
        Ok(())
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// Result of [`SpectrumTable::rkhs_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RkhsNorm {
    Finite {
        /// Sum over the retained modes.
        truncated: f64,
        /// `1 / (α(β - 1))`, the integral approximation of the full series.
        leading_estimate: f64,
    },
    Divergent,
}

/// One coarse-grained group of consecutive modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeBin {
    /// Representative eigenvalue `Σλ² / Σλ`.
    pub lambda: f64,
    /// `Σ λ_k` over the bin.
    pub lambda_mass: f64,
    /// `Σ λ_k (w*_k)²` over the bin.
    pub signal_mass: f64,
    /// Number of modes folded into the bin.
    pub count: usize,
}

/// Modes grouped into geometrically growing bins in `k`.
///
/// Every sum `Σ_k λ_k F(λ_k)` becomes `Σ_b lambda_mass_b F(λ_b)` and every
/// `Σ_k λ_k (w*_k)² F(λ_k)` becomes `Σ_b signal_mass_b F(λ_b)`. When the
/// table has no more modes than the bin budget the grouping is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBins {
    bins: Vec<ModeBin>,
}

impl ModeBins {
    pub fn new(table: &SpectrumTable, max_bins: usize) -> Result<Self> {
        if max_bins == 0 {
            return Err(Error::invalid("bin budget must be positive"));
        }
        let m = table.len();
        let edges = geometric_edges(m, max_bins);
        let lam = table.eigenvalues();
        let wsq = table.target_weights_sq();
        let bins = edges
            .windows(2)
            .map(|w| {
                let (lo, hi) = (w[0], w[1]);
                let mut l1 = 0.0;
                let mut l2 = 0.0;
                let mut sig = 0.0;
                for k in (lo..hi).rev() {
                    l1 += lam[k];
                    l2 += lam[k] * lam[k];
                    sig += lam[k] * wsq[k];
                }
                ModeBin {
                    lambda: l2 / l1,
                    lambda_mass: l1,
                    signal_mass: sig,
                    count: hi - lo,
                }
            })
            .collect();
        Ok(Self { bins })
    }

    /// One bin per mode.
    pub fn exact(table: &SpectrumTable) -> Self {
        Self::new(table, table.len()).expect("nonempty table")
    }

    pub fn bins(&self) -> &[ModeBin] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn total_signal(&self) -> f64 {
        self.bins.iter().rev().map(|b| b.signal_mass).sum()
    }
}

/// Bin edges `0 = e_0 < e_1 < ... = m` with at most `max_bins` bins; leading
/// bins are single modes until geometric growth exceeds one mode per bin.
fn geometric_edges(m: usize, max_bins: usize) -> Vec<usize> {
    if m <= max_bins {
        return (0..=m).collect();
    }
    let build = |target: usize| -> Vec<usize> {
        let mut edges = vec![0usize];
        let log_m = (m as f64).ln();
        for j in 1..=target {
            let e = ((j as f64) * log_m / target as f64).exp().round() as usize;
            let e = e.clamp(1, m);
            if e > *edges.last().unwrap() {
                edges.push(e);
            }
        }
        if *edges.last().unwrap() != m {
            edges.push(m);
        }
        edges
    };
    // the dedup shrinks the count, so search for the largest target that fits
    let mut lo = max_bins;
    let mut hi = max_bins * 64;
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if build(mid).len() - 1 <= max_bins {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    build(lo)
}
