//! Infinite width and batch reduction of the online mean-field equations.
//!
//! With `N, B → ∞` the response `R₃` is the identity, both noise sources
//! vanish and every mode follows a deterministic recursion driven by two
//! time×time kernels: the feature correlation `C₂(t,s) = Σ_k λ_k² v⁰_k(t) v⁰_k(s)`
//! and the readout correlation `C_w`. The readout is the linear filter
//! `w = H_w v³` of a Gaussian process with covariance `C₂`, so
//! `C_w = H_w C₂ H_wᵀ` with `H_w = [I - ηγ Θ C₂⁽<⁾]⁻¹ Θ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{extend_hold, max_abs_diff, relax, solve_lower, solve_lower_vec, step_mul, strict_lower};
use crate::spectra::{ModeBins, SpectrumTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitConfig {
    pub learning_rate: f64,
    pub richness: f64,
    /// Number of discrete steps `T`; the solution covers `t = 0..T-1`.
    pub horizon: usize,
    pub tol: f64,
    pub damping: f64,
    pub max_iter: usize,
    pub max_bins: usize,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            richness: 0.0,
            horizon: 256,
            tol: 1e-10,
            damping: 1.0,
            max_iter: 500,
            max_bins: 256,
        }
    }
}

impl LimitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.richness.is_finite() && self.richness >= 0.0) {
            return Err(Error::invalid("richness must be >= 0"));
        }
        if self.horizon < 1 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("damping must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Deterministic `N, B → ∞` loss curve with its kernels.
#[derive(Debug, Clone)]
pub struct LimitSolution {
    pub learning_rate: f64,
    pub richness: f64,
    /// `L(t) = Σ_k λ_k v⁰_k(t)²` for `t = 0..T-1`.
    pub loss: Vec<f64>,
    pub c2: DMatrix<f64>,
    pub cw: DMatrix<f64>,
    pub bins: ModeBins,
    /// `v⁰_k(t) / w*_k`, one path per bin (identical for modes sharing a bin).
    pub error_paths: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
}

impl LimitSolution {
    /// Continuous time `η t` of every step.
    pub fn times(&self) -> Vec<f64> {
        (0..self.loss.len())
            .map(|t| t as f64 * self.learning_rate)
            .collect()
    }
}

pub fn solve_infinite_limit(table: &SpectrumTable, config: &LimitConfig) -> Result<LimitSolution> {
    config.validate()?;
    let bins = ModeBins::new(table, config.max_bins)?;
    if config.richness == 0.0 {
        return Ok(lazy_closed_form(bins, config));
    }
    // causal structure: a converged prefix stays converged, so grow the horizon
    let mut horizon = config.horizon.min(32);
    let mut c2 = DMatrix::zeros(0, 0);
    let mut cw = DMatrix::zeros(0, 0);
    let mut iterations = 0;
    loop {
        c2 = extend_hold(&c2, horizon);
        cw = extend_hold(&cw, horizon);
        let (paths, iters, residual) = iterate(&bins, config, &mut c2, &mut cw)?;
        iterations += iters;
        if horizon == config.horizon {
            let loss = loss_from_paths(&bins, &paths, horizon);
            if loss.iter().any(|l| !l.is_finite()) {
                return Err(Error::IllConditioned("non-finite loss".into()));
            }
            return Ok(LimitSolution {
                learning_rate: config.learning_rate,
                richness: config.richness,
                loss,
                c2,
                cw,
                bins,
                error_paths: paths,
                iterations,
                residual,
            });
        }
        horizon = (horizon * 2).min(config.horizon);
    }
}

fn lazy_closed_form(bins: ModeBins, config: &LimitConfig) -> LimitSolution {
    let t_len = config.horizon;
    let eta = config.learning_rate;
    let paths: Vec<Vec<f64>> = bins
        .bins()
        .iter()
        .map(|b| (0..t_len).map(|t| (1.0 - eta * b.lambda).powi(t as i32)).collect())
        .collect();
    let mut c2 = DMatrix::zeros(t_len, t_len);
    for (b, p) in bins.bins().iter().zip(&paths) {
        let v = DVector::from_column_slice(p);
        c2.ger(b.lambda * b.signal_mass, &v, &v, 1.0);
    }
    let loss = loss_from_paths(&bins, &paths, t_len);
    LimitSolution {
        learning_rate: eta,
        richness: 0.0,
        loss,
        cw: filtered_covariance(&c2, eta, 0.0).expect("lazy filter is unit triangular").1,
        c2,
        bins,
        error_paths: paths,
        iterations: 0,
        residual: 0.0,
    }
}

fn loss_from_paths(bins: &ModeBins, paths: &[Vec<f64>], t_len: usize) -> Vec<f64> {
    (0..t_len)
        .map(|t| {
            bins.bins()
                .iter()
                .zip(paths)
                .rev()
                .map(|(b, p)| b.signal_mass * p[t] * p[t])
                .sum()
        })
        .collect()
}

/// Readout filter `H_w` and `C_w = H_w C₂ H_wᵀ` for a uniform step.
fn filtered_covariance(c2: &DMatrix<f64>, eta: f64, gamma: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let t_len = c2.nrows();
    let steps = vec![eta; t_len];
    let theta = step_mul(&steps, &DMatrix::identity(t_len, t_len));
    let mut lhs = step_mul(&steps, &strict_lower(c2));
    lhs.scale_mut(-eta * gamma);
    for i in 0..t_len {
        lhs[(i, i)] += 1.0;
    }
    let hw = solve_lower(&lhs, &theta, "readout filter")?;
    let cw = &hw * c2 * hw.transpose();
    Ok((hw, cw))
}

type Sweep = (Vec<Vec<f64>>, usize, f64);

fn iterate(
    bins: &ModeBins,
    config: &LimitConfig,
    c2: &mut DMatrix<f64>,
    cw: &mut DMatrix<f64>,
) -> Result<Sweep> {
    let t_len = c2.nrows();
    let eta = config.learning_rate;
    let gamma = config.richness;
    let ones = DVector::from_element(t_len, 1.0);
    let mut residual = f64::INFINITY;
    for iter in 1..=config.max_iter {
        let (hw, _) = filtered_covariance(c2, eta, gamma)?;
        let mut g = strict_lower(cw);
        g.scale_mut(eta * gamma);
        g += &hw;
        let mut paths = Vec::with_capacity(bins.len());
        let mut c2_new = DMatrix::zeros(t_len, t_len);
        for b in bins.bins() {
            let mut lhs = g.scale(b.lambda);
            for i in 0..t_len {
                lhs[(i, i)] += 1.0;
            }
            let x = solve_lower_vec(&lhs, &ones, "mode filter")?;
            c2_new.ger(b.lambda * b.signal_mass, &x, &x, 1.0);
            paths.push(x.as_slice().to_vec());
        }
        let (_, cw_new) = filtered_covariance(&c2_new, eta, gamma)?;
        residual = max_abs_diff(&c2_new, c2).max(max_abs_diff(&cw_new, cw));
        if !residual.is_finite() {
            return Err(Error::IllConditioned("non-finite kernels".into()));
        }
        relax(c2, &c2_new, config.damping);
        relax(cw, &cw_new, config.damping);
        if residual < config.tol {
            return Ok((paths, iter, residual));
        }
    }
    Err(Error::NonConvergence {
        iterations: config.max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::SourceCapacitySpec;

    fn table(alpha: f64, beta: f64, m: usize) -> SpectrumTable {
        SpectrumTable::build(&SourceCapacitySpec::new(alpha, beta, m).unwrap()).unwrap()
    }

    #[test]
    fn lazy_matches_geometric_decay() {
        let t = table(2.0, 0.4, 64);
        let cfg = LimitConfig {
            learning_rate: 0.3,
            horizon: 100,
            max_bins: 64,
            ..Default::default()
        };
        let sol = solve_infinite_limit(&t, &cfg).unwrap();
        for step in [0usize, 1, 10, 99] {
            let oracle: f64 = t
                .eigenvalues()
                .iter()
                .zip(t.target_weights_sq())
                .map(|(l, w)| l * w * (1.0 - 0.3 * l).powi(2 * step as i32))
                .sum();
            assert!((sol.loss[step] - oracle).abs() < 1e-10 * oracle.max(1.0));
        }
    }

    #[test]
    fn rich_iteration_matches_lazy_at_zero_coupling() {
        // the iterative path with vanishing richness reproduces the closed form
        let t = table(2.0, 0.4, 64);
        let cfg = LimitConfig {
            learning_rate: 0.3,
            richness: 1e-300,
            horizon: 50,
            max_bins: 64,
            ..Default::default()
        };
        let sol = solve_infinite_limit(&t, &cfg).unwrap();
        let lazy = solve_infinite_limit(&t, &LimitConfig { richness: 0.0, ..cfg }).unwrap();
        for (a, b) in sol.loss.iter().zip(&lazy.loss) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rich_learns_faster_and_starts_at_trace() {
        let t = table(2.0, 0.4, 2000);
        let cfg = LimitConfig {
            learning_rate: 0.2,
            richness: 0.75,
            horizon: 128,
            ..Default::default()
        };
        let rich = solve_infinite_limit(&t, &cfg).unwrap();
        let lazy = solve_infinite_limit(&t, &LimitConfig { richness: 0.0, ..cfg }).unwrap();
        assert!((rich.loss[0] - t.total_signal()).abs() < 1e-12);
        assert!(rich.loss[127] < lazy.loss[127]);
        assert!(rich.loss.iter().all(|&l| l >= 0.0));
        assert!(rich.residual < cfg.tol);
    }
}
