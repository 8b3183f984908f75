//! The rich-regime time exponent `χ` from the scalar self-consistency.
//!
//! The kernel grows as `t^{1-χ}` so mode `k` is learned on the time scale
//! where `λ_k (t + γ t^{2-χ})` reaches unity. The loss
//! `Σ_k λ_k (w*_k)² exp(-λ_k (t + γ t^{2-χ}))` then decays with some
//! exponent, and `χ` is the fixed point of that map.

use crate::analysis::fit_series;
use crate::error::{Error, Result};
use crate::spectra::{ModeBins, SpectrumTable};

#[derive(Debug, Clone, PartialEq)]
pub struct ChiConfig {
    pub richness: f64,
    /// Log-spaced times spanning at least three decades.
    pub t_grid: Vec<f64>,
    pub tol: f64,
    pub damping: f64,
    pub max_iter: usize,
    pub max_bins: usize,
}

impl ChiConfig {
    pub fn new(richness: f64, t_grid: Vec<f64>) -> Self {
        Self {
            richness,
            t_grid,
            tol: 1e-4,
            damping: 0.5,
            max_iter: 200,
            max_bins: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiSolution {
    pub chi: f64,
    pub history: Vec<f64>,
}

pub fn solve_chi(table: &SpectrumTable, config: &ChiConfig) -> Result<ChiSolution> {
    let grid = &config.t_grid;
    if grid.len() < 8 || grid[0] <= 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("time grid needs at least 8 increasing positive points"));
    }
    if grid[grid.len() - 1] / grid[0] < 1e3 {
        return Err(Error::invalid("time grid must span at least three decades"));
    }
    if !(config.richness >= 0.0 && config.tol > 0.0 && config.damping > 0.0 && config.damping <= 1.0) {
        return Err(Error::invalid("need richness >= 0, tol > 0, damping in (0, 1]"));
    }
    let bins = ModeBins::new(table, config.max_bins)?;
    // last 1.5 decades, without the final two points
    let fit_hi = grid[grid.len() - 3];
    let fit_lo = grid[grid.len() - 1] / 10f64.powf(1.5);
    let map = |chi: f64| -> Result<f64> {
        let loss: Vec<f64> = grid
            .iter()
            .map(|&t| {
                let tau = t + config.richness * t.powf(2.0 - chi);
                bins.bins()
                    .iter()
                    .rev()
                    .map(|b| b.signal_mass * (-b.lambda * tau).exp())
                    .sum()
            })
            .collect();
        Ok(fit_series(grid, &loss, Some((fit_lo, fit_hi)))?.exponent)
    };
    let beta_guess = map(1.0)?;
    let mut chi = beta_guess;
    let mut history = vec![chi];
    for _ in 0..config.max_iter {
        let next = (1.0 - config.damping) * chi + config.damping * map(chi)?;
        history.push(next);
        if (next - chi).abs() < config.tol {
            return Ok(ChiSolution { chi: next, history });
        }
        chi = next;
    }
    Err(Error::ChiOscillation { history })
}

/// Level series `χ₀ = β`, `χ_{n+1} = β (2 - χ_n)`; returns `levels + 1` entries.
pub fn bootstrap_chi(beta: f64, levels: usize) -> Vec<f64> {
    std::iter::successors(Some(beta), |c| Some(beta * (2.0 - c)))
        .take(levels + 1)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::log_grid;
    use crate::spectra::SourceCapacitySpec;

    #[test]
    fn bootstrap_levels() {
        let b = bootstrap_chi(0.5, 3);
        assert_eq!(b, vec![0.5, 0.75, 0.625, 0.6875]);
        assert!(bootstrap_chi(1.0, 10).iter().all(|&c| c == 1.0));
        let long = bootstrap_chi(0.3, 30);
        assert_eq!(long.len(), 31);
        assert!((long[30] - 0.6 / 1.3).abs() < 1e-6);
    }

    #[test]
    fn hard_task_fixed_point() {
        let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.4, 1_000_000).unwrap()).unwrap();
        let cfg = ChiConfig {
            tol: 1e-5,
            ..ChiConfig::new(1.0, log_grid(1.0, 1e6, 8))
        };
        let sol = solve_chi(&table, &cfg).unwrap();
        assert!((sol.chi - 4.0 / 7.0).abs() < 0.01, "{}", sol.chi);
    }

    #[test]
    fn short_grid_rejected() {
        let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.4, 100).unwrap()).unwrap();
        assert!(solve_chi(&table, &ChiConfig::new(1.0, log_grid(1.0, 100.0, 8))).is_err());
    }
}
