//! Markovian form of the infinite-width gradient flow.
//!
//! With `Δ = Λ^{1/2} v⁰` and `y = Λ^{1/2} w*` the flow closes on the pair
//! `(Δ, K)`:
//!
//! ```text
//! dΔ/dt = -K Δ
//! dK/dt = γ (y-Δ) Δᵀ Λ + γ Λ Δ (y-Δ)ᵀ + 2γ [(y-Δ)·Δ] Λ
//! ```
//!
//! with `K(0) = Λ` and loss `|Δ|²`. The kernel grows without bound for hard
//! tasks, so the flow is stepped with an exponential midpoint rule: over one
//! step `K` is frozen at its midpoint estimate, `Δ` is propagated exactly
//! through the eigendecomposition of `K`, and the kernel increment is
//! integrated in closed form along that exact path.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{ModeBins, SpectrumTable};

/// Step-size control for [`integrate_markovian`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtPolicy {
    /// Step is `rel_step · max(t, 1)`.
    pub rel_step: f64,
    /// Halve `rel_step` until the recorded loss changes by less than this.
    pub rel_change: f64,
    /// Give up after this many halvings.
    pub max_halvings: usize,
}

impl Default for DtPolicy {
    fn default() -> Self {
        Self {
            rel_step: 0.1,
            rel_change: 1e-3,
            max_halvings: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovConfig {
    pub richness: f64,
    pub t_max: f64,
    /// Checkpoints per decade of recorded output (log spaced from `t = 0.1`).
    pub points_per_decade: usize,
    pub max_bins: usize,
    pub dt: DtPolicy,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        Self {
            richness: 0.0,
            t_max: 1e3,
            points_per_decade: 16,
            max_bins: 256,
            dt: DtPolicy::default(),
        }
    }
}

/// Loss curve and kernel-scale trace on a set of output times.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovTrace {
    pub times: Vec<f64>,
    pub loss: Vec<f64>,
    /// `1 + 2γ ∫₀ᵗ (y - Δ)·Δ ds`, the isotropic scale factor of `K(t)`.
    pub kernel_scale: Vec<f64>,
    /// Largest eigenvalue of `K(t)`.
    pub kernel_top: Vec<f64>,
    /// Final relative step used after the halving loop.
    pub rel_step: f64,
    pub steps: usize,
}

pub fn integrate_markovian(table: &SpectrumTable, config: &MarkovConfig) -> Result<MarkovTrace> {
    let times = log_times(config.t_max, config.points_per_decade);
    integrate_markovian_at(table, config, &times)
}

/// Same as [`integrate_markovian`] but records at caller-supplied increasing times.
pub fn integrate_markovian_at(
    table: &SpectrumTable,
    config: &MarkovConfig,
    times: &[f64],
) -> Result<MarkovTrace> {
    if !(config.richness.is_finite() && config.richness >= 0.0) {
        return Err(Error::invalid("richness must be >= 0"));
    }
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
        return Err(Error::invalid("output times must be nonnegative and increasing"));
    }
    if !(config.dt.rel_step > 0.0 && config.dt.rel_change > 0.0) {
        return Err(Error::invalid("dt policy needs positive step and tolerance"));
    }
    if config.max_bins > 4096 {
        return Err(Error::invalid("dense kernel limited to 4096 modes"));
    }
    let bins = ModeBins::new(table, config.max_bins)?;
    let lambda: Vec<f64> = bins.bins().iter().map(|b| b.lambda).collect();
    let y: Vec<f64> = bins.bins().iter().map(|b| b.signal_mass.sqrt()).collect();

    let mut rel = config.dt.rel_step;
    let mut prev = run(&lambda, &y, config.richness, times, rel)?;
    let mut change = f64::INFINITY;
    for _ in 0..config.dt.max_halvings {
        rel *= 0.5;
        let next = run(&lambda, &y, config.richness, times, rel)?;
        change = prev
            .loss
            .iter()
            .zip(&next.loss)
            .map(|(a, b)| ((a - b) / b.abs().max(f64::MIN_POSITIVE)).abs())
            .fold(0.0, f64::max);
        prev = next;
        if change < config.dt.rel_change {
            return Ok(prev);
        }
    }
    Err(Error::NonConvergence {
        iterations: config.dt.max_halvings,
        residual: change,
    })
}

/// `points_per_decade` log-spaced times in `[0.1, t_max]`, preceded by `t = 0`.
pub fn log_times(t_max: f64, points_per_decade: usize) -> Vec<f64> {
    let mut times = vec![0.0];
    if t_max <= 0.1 {
        times.push(t_max);
        return times;
    }
    let decades = (t_max / 0.1).log10();
    let n = (decades * points_per_decade as f64).ceil().max(1.0) as usize;
    for i in 0..=n {
        let t = 0.1 * 10f64.powf(decades * i as f64 / n as f64);
        times.push(t.min(t_max));
    }
    times.dedup();
    times
}

struct FrozenStep {
    delta: DVector<f64>,
    /// `∫ Δ ds`
    int_delta: DVector<f64>,
    /// `∫ Δ Δᵀ ds`
    int_outer: DMatrix<f64>,
}

/// `(1 - e^{-d h}) / d`, continuous at `d = 0`.
fn phi1(d: f64, h: f64) -> f64 {
    let x = d * h;
    if x.abs() < 1e-8 {
        h * (1.0 - 0.5 * x)
    } else {
        -(-x).exp_m1() / d
    }
}

fn frozen_step(k: &DMatrix<f64>, delta: &DVector<f64>, h: f64) -> FrozenStep {
    let eig = SymmetricEigen::new(k.clone());
    let v = &eig.eigenvectors;
    let d = &eig.eigenvalues;
    let g = v.transpose() * delta;
    let n = d.len();
    let end = DVector::from_fn(n, |i, _| (-d[i] * h).exp() * g[i]);
    let int1 = DVector::from_fn(n, |i, _| phi1(d[i], h) * g[i]);
    let inner = DMatrix::from_fn(n, n, |i, j| g[i] * g[j] * phi1(d[i] + d[j], h));
    FrozenStep {
        delta: v * end,
        int_delta: v * int1,
        int_outer: v * inner * v.transpose(),
    }
}

/// Kernel increment along a frozen step and the scalar `∫ (y-Δ)·Δ ds`.
fn kernel_increment(lambda: &[f64], y: &DVector<f64>, gamma: f64, step: &FrozenStep) -> (DMatrix<f64>, f64) {
    let n = lambda.len();
    // Q = ∫ (y - Δ) Δᵀ ds, then ΔK = γ(QΛ + ΛQᵀ) + 2γ tr-term Λ
    let q = y * step.int_delta.transpose() - &step.int_outer;
    let scalar = y.dot(&step.int_delta) - step.int_outer.trace();
    let dk = DMatrix::from_fn(n, n, |i, j| {
        let mut v = gamma * (q[(i, j)] * lambda[j] + lambda[i] * q[(j, i)]);
        if i == j {
            v += 2.0 * gamma * scalar * lambda[i];
        }
        v
    });
    (dk, scalar)
}

fn run(lambda: &[f64], y: &[f64], gamma: f64, times: &[f64], rel: f64) -> Result<MarkovTrace> {
    let n = lambda.len();
    let y = DVector::from_column_slice(y);
    let mut delta = y.clone();
    let mut k = DMatrix::from_diagonal(&DVector::from_column_slice(lambda));
    let mut scale_integral = 0.0;
    let mut t = 0.0;
    let mut steps = 0usize;
    let mut out = MarkovTrace {
        times: Vec::with_capacity(times.len()),
        loss: Vec::with_capacity(times.len()),
        kernel_scale: Vec::with_capacity(times.len()),
        kernel_top: Vec::with_capacity(times.len()),
        rel_step: rel,
        steps: 0,
    };
    let lazy = gamma == 0.0;
    for &target in times {
        while t < target {
            let h = (rel * t.max(1.0)).min(target - t);
            if lazy {
                for i in 0..n {
                    delta[i] *= (-lambda[i] * h).exp();
                }
                let _ = &mut k;
            } else {
                let predictor = frozen_step(&k, &delta, h);
                let (dk_pred, _) = kernel_increment(lambda, &y, gamma, &predictor);
                let k_mid = &k + dk_pred.scale(0.5);
                let corrected = frozen_step(&k_mid, &delta, h);
                let (dk, ds) = kernel_increment(lambda, &y, gamma, &corrected);
                k += dk;
                delta = corrected.delta;
                scale_integral += ds;
            }
            // ending exactly on the checkpoint avoids a sliver step
            t = if target - (t + h) < 1e-12 * target { target } else { t + h };
            steps += 1;
            if !delta.iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged {
                    step: steps,
                    loss: f64::NAN,
                });
            }
        }
        out.times.push(target);
        out.loss.push(delta.norm_squared());
        out.kernel_scale.push(1.0 + 2.0 * gamma * scale_integral);
        out.kernel_top.push(if lazy {
            lambda.iter().copied().fold(0.0, f64::max)
        } else {
            SymmetricEigen::new(k.clone()).eigenvalues.max()
        });
    }
    out.steps = steps;
    Ok(out)
}
