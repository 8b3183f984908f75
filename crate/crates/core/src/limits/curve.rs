//! Long-horizon loss curves assembled from the limit solvers.

use serde::{Deserialize, Serialize};

use super::bottleneck::asymptotic_loss_vs_n;
use super::infinite::{solve_infinite_limit, LimitConfig};
use super::markov::{integrate_markovian_at, log_times, MarkovConfig, MarkovTrace};
use crate::error::{Error, Result};
use crate::spectra::{ModeBins, SpectrumTable};
use crate::trajectory::{log_checkpoints, LossTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub learning_rate: f64,
    pub richness: f64,
    /// Discrete steps solved by the time×time iteration.
    pub horizon: usize,
    /// Flow time reached by the Markovian continuation.
    pub t_max: f64,
    pub max_bins: usize,
    pub points_per_decade: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            richness: 0.0,
            horizon: 1024,
            t_max: 1e5,
            max_bins: 128,
            points_per_decade: 16,
        }
    }
}

/// Infinite-width loss in flow time `η·step`: the discrete solution up to
/// `η·horizon`, continued by the Markovian flow to `t_max`.
pub fn limit_curve(table: &SpectrumTable, config: &CurveConfig) -> Result<LossTrajectory> {
    let limit = solve_infinite_limit(
        table,
        &LimitConfig {
            learning_rate: config.learning_rate,
            richness: config.richness,
            horizon: config.horizon,
            max_bins: config.max_bins,
            ..Default::default()
        },
    )?;
    let eta = config.learning_rate;
    let mut times = Vec::new();
    let mut loss = Vec::new();
    for s in log_checkpoints(config.horizon - 1, config.points_per_decade) {
        times.push(eta * s as f64);
        loss.push(limit.loss[s]);
    }
    let t_join = *times.last().expect("checkpoints include 0");
    if config.t_max > t_join {
        let tail: Vec<f64> = log_times(config.t_max, config.points_per_decade)
            .into_iter()
            .filter(|&t| t > t_join * 1.0001)
            .collect();
        if !tail.is_empty() {
            let trace = integrate_markovian_at(table, &markov_config(config), &tail)?;
            times.extend(trace.times);
            loss.extend(trace.loss);
        }
    }
    Ok(LossTrajectory::new(times, loss)?.with_meta(serde_json::json!({
        "solver": "infinite_limit+markovian",
        "learning_rate": eta,
        "richness": config.richness,
        "horizon": config.horizon,
        "t_max": config.t_max,
        "iterations": limit.iterations,
        "residual": limit.residual,
    })))
}

fn markov_config(config: &CurveConfig) -> MarkovConfig {
    MarkovConfig {
        richness: config.richness,
        t_max: config.t_max,
        points_per_decade: config.points_per_decade,
        max_bins: config.max_bins,
        ..Default::default()
    }
}

/// Finite-width loss surfaces `L(t, N)` built from limit quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitGrid {
    pub flow: MarkovTrace,
    /// `∫₀ᵗ` kernel scale, the effective lazy time of the rich flow.
    pub effective_time: Vec<f64>,
    pub curves: Vec<(f64, LossTrajectory)>,
}

/// `L(t, N) = L∞(t) + L_floor(N) + (1/N) Σ_k λ_k exp(-2 λ_k τ(t))`.
///
/// `L∞` is the Markovian flow, `L_floor` the model-bottleneck limit and the
/// last term the leading finite-width transient, driven by the effective
/// time `τ(t) = ∫ kernel scale`.
pub fn limit_loss_grid(
    table: &SpectrumTable,
    richness: f64,
    model_sizes: &[f64],
    t_max: f64,
    points_per_decade: usize,
    max_bins: usize,
) -> Result<LimitGrid> {
    if model_sizes.is_empty() {
        return Err(Error::invalid("need at least one model size"));
    }
    let times: Vec<f64> = log_times(t_max, points_per_decade);
    let flow = integrate_markovian_at(
        table,
        &MarkovConfig {
            richness,
            t_max,
            points_per_decade,
            max_bins,
            ..Default::default()
        },
        &times,
    )?;
    let mut tau = vec![0.0; times.len()];
    for i in 1..times.len() {
        let h = times[i] - times[i - 1];
        tau[i] = tau[i - 1] + 0.5 * h * (flow.kernel_scale[i] + flow.kernel_scale[i - 1]);
    }
    let bins = ModeBins::new(table, 4096)?;
    let transient: Vec<f64> = tau
        .iter()
        .map(|&s| {
            bins.bins()
                .iter()
                .rev()
                .map(|b| b.lambda_mass * (-2.0 * b.lambda * s).exp())
                .sum()
        })
        .collect();
    let curves = model_sizes
        .iter()
        .map(|&n| {
            let floor = asymptotic_loss_vs_n(table, n)?;
            let loss = flow
                .loss
                .iter()
                .zip(&transient)
                .map(|(l, tr)| l + floor + tr / n)
                .collect();
            let traj = LossTrajectory::new(times.clone(), loss)?.with_meta(serde_json::json!({
                "solver": "limit_grid",
                "richness": richness,
                "n_params": n,
            }));
            Ok((n, traj))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LimitGrid {
        flow,
        effective_time: tau,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::SourceCapacitySpec;

    #[test]
    fn stitched_curve_is_continuous() {
        let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.4, 5000).unwrap()).unwrap();
        let cfg = CurveConfig {
            learning_rate: 0.1,
            richness: 0.75,
            horizon: 128,
            t_max: 100.0,
            max_bins: 48,
            points_per_decade: 8,
        };
        let c = limit_curve(&table, &cfg).unwrap();
        let join = c.times.iter().position(|&t| t > 12.7 * 1.0001).unwrap();
        let jump = (c.loss[join] / c.loss[join - 1]).ln() / (c.times[join] / c.times[join - 1]).ln();
        // local slope across the seam stays near the smooth value
        assert!(jump < 0.0 && jump > -1.0, "{jump}");
    }

    #[test]
    fn lazy_grid_effective_time_is_time() {
        let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.5, 2000).unwrap()).unwrap();
        let g = limit_loss_grid(&table, 0.0, &[10.0, 100.0], 100.0, 8, 64).unwrap();
        for (t, tau) in g.flow.times.iter().zip(&g.effective_time) {
            assert!((t - tau).abs() < 1e-9 * t.max(1.0));
        }
        let (small, large) = (&g.curves[0].1, &g.curves[1].1);
        assert!(small.loss.iter().zip(&large.loss).all(|(a, b)| a > b));
    }
}
