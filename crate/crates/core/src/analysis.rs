//! Power-law fits of loss curves and compute-optimal envelopes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::LossTrajectory;

/// Least-squares fit of `log L = intercept - exponent · log t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub exponent: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    pub window: (f64, f64),
    pub n_points: usize,
}

/// Default window: the last 1.5 decades of positive times, minus the final
/// 5% of those points.
pub fn default_window(times: &[f64]) -> Option<(f64, f64)> {
    let t_end = times.iter().copied().filter(|t| *t > 0.0).fold(f64::NAN, f64::max);
    if !t_end.is_finite() {
        return None;
    }
    let t_start = t_end / 10f64.powf(1.5);
    let inside: Vec<f64> = times.iter().copied().filter(|&t| t >= t_start && t > 0.0).collect();
    let drop = inside.len() / 20;
    let kept = &inside[..inside.len() - drop];
    Some((*kept.first()?, *kept.last()?))
}

/// Fits over `window` (inclusive), or [`default_window`] when `None`.
pub fn fit_power_law(trajectory: &LossTrajectory, window: Option<(f64, f64)>) -> Result<FitResult> {
    fit_series(&trajectory.times, &trajectory.loss, window)
}

/// [`fit_power_law`] on raw `(x, y)` columns.
pub fn fit_series(xs: &[f64], ys: &[f64], window: Option<(f64, f64)>) -> Result<FitResult> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("fit columns differ in length"));
    }
    let (lo, hi) = match window {
        Some(w) => w,
        None => default_window(xs).ok_or_else(|| Error::invalid("no positive times to fit"))?,
    };
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty fit window [{lo}, {hi}]")));
    }
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (&x, &y) in xs.iter().zip(ys) {
        if x < lo || x > hi {
            continue;
        }
        if !(x > 0.0 && y > 0.0) {
            return Err(Error::invalid(format!("nonpositive value at t={x} inside the fit window")));
        }
        lx.push(x.ln());
        ly.push(y.ln());
    }
    let n = lx.len();
    if n < 3 {
        return Err(Error::invalid(format!("fit needs at least 3 points, window has {n}")));
    }
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("fit window has a single distinct time"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = (ssr / (n - 2) as f64 / sxx).sqrt();
    Ok(FitResult {
        exponent: -slope,
        intercept,
        stderr,
        window: (lo, hi),
        n_points: n,
    })
}

/// Lower envelope of a family of loss curves at fixed compute `C = N t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub compute: Vec<f64>,
    pub loss_star: Vec<f64>,
    pub n_star: Vec<f64>,
    pub t_star: Vec<f64>,
}

impl Envelope {
    /// Power-law fit of `L⋆(C)`.
    pub fn fit(&self, window: Option<(f64, f64)>) -> Result<FitResult> {
        fit_series(&self.compute, &self.loss_star, window)
    }

    /// CSV with header `C,L_star,N_star,t_star`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "C,L_star,N_star,t_star")?;
        for i in 0..self.compute.len() {
            writeln!(
                out,
                "{:e},{:e},{},{:e}",
                self.compute[i], self.loss_star[i], self.n_star[i], self.t_star[i]
            )?;
        }
        Ok(())
    }
}

/// `per_decade` log-spaced values in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    if !(lo > 0.0 && hi >= lo) {
        return Vec::new();
    }
    let n = (((hi / lo).log10() * per_decade as f64).round() as usize).max(1);
    (0..=n).map(|i| lo * (hi / lo).powf(i as f64 / n as f64)).collect()
}

/// `L⋆(C) = min_N L_N(C/N)` over the curves that cover `C/N`, with `L_N`
/// interpolated log-linearly in `log t`.
pub fn compute_optimal_envelope(grid: &[(f64, LossTrajectory)], compute: &[f64]) -> Result<Envelope> {
    if grid.is_empty() {
        return Err(Error::invalid("envelope needs at least one curve"));
    }
    if grid.iter().any(|(n, _)| !(*n > 0.0)) {
        return Err(Error::invalid("model sizes must be positive"));
    }
    let mut env = Envelope {
        compute: Vec::with_capacity(compute.len()),
        loss_star: Vec::with_capacity(compute.len()),
        n_star: Vec::with_capacity(compute.len()),
        t_star: Vec::with_capacity(compute.len()),
    };
    for &c in compute {
        let best = grid
            .iter()
            .filter_map(|(n, traj)| traj.interpolate(c / n).map(|l| (l, *n)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .ok_or_else(|| Error::invalid(format!("compute {c:e} outside the covered range")))?;
        env.compute.push(c);
        env.loss_star.push(best.0);
        env.n_star.push(best.1);
        env.t_star.push(c / best.1);
    }
    Ok(env)
}

/// Largest `|b - a| / |a|` over times present in both curves.
pub fn compare_curves(a: &LossTrajectory, b: &LossTrajectory) -> Result<f64> {
    let mut worst: Option<f64> = None;
    for (t, la) in a.times.iter().zip(&a.loss) {
        if let Ok(j) = b.times.binary_search_by(|x| x.total_cmp(t)) {
            let dev = if *la == 0.0 {
                if b.loss[j] == 0.0 { 0.0 } else { f64::INFINITY }
            } else {
                ((b.loss[j] - la) / la).abs()
            };
            worst = Some(worst.map_or(dev, |w: f64| w.max(dev)));
        }
    }
    worst.ok_or_else(|| Error::invalid("curves share no checkpoints"))
}

/// Fraction of shared checkpoints where `theory` lies within `k` standard
/// errors of the ensemble mean (with a `1e-12` relative floor for
/// deterministic points such as the initial loss).
pub fn band_coverage(theory: &LossTrajectory, ensemble: &LossTrajectory, k: f64) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (t, lt) in theory.times.iter().zip(&theory.loss) {
        if let Ok(j) = ensemble.times.binary_search_by(|x| x.total_cmp(t)) {
            total += 1;
            if (lt - ensemble.loss[j]).abs() <= k * ensemble.stderr[j] + 1e-12 * lt.abs() {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("curves share no checkpoints"));
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power(c: f64, r: f64, times: &[f64]) -> LossTrajectory {
        LossTrajectory::new(times.to_vec(), times.iter().map(|t| c * t.powf(-r)).collect()).unwrap()
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let times = log_grid(1.0, 1e4, 5);
        assert_eq!(times.len(), 21);
        let tr = power(3.0, 0.7, &times[1..]);
        let fit = fit_power_law(&tr, Some((1.0, 1e4))).unwrap();
        assert!((fit.exponent - 0.7).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
        assert!(fit.stderr < 1e-12);
        assert_eq!(fit.n_points, 20);
    }

    #[test]
    fn constant_fits_zero() {
        let times = log_grid(1.0, 100.0, 10);
        let tr = LossTrajectory::new(times.clone(), vec![2.0; times.len()]).unwrap();
        assert!(fit_power_law(&tr, None).unwrap().exponent.abs() < 1e-12);
    }

    #[test]
    fn default_window_spans_last_decades() {
        let times = log_grid(1.0, 1e4, 20);
        let (lo, hi) = default_window(&times).unwrap();
        assert!((lo / 10f64.powf(2.5) - 1.0).abs() < 1e-9);
        assert!(hi < 1e4);
    }

    #[test]
    fn fit_rejects_bad_windows() {
        let tr = power(1.0, 1.0, &[1.0, 2.0, 4.0]);
        assert!(fit_power_law(&tr, Some((1.0, 2.0))).is_err());
        let zero = LossTrajectory::new(vec![1.0, 2.0, 4.0], vec![1.0, 0.0, 1.0]).unwrap();
        assert!(fit_power_law(&zero, Some((1.0, 4.0))).is_err());
    }

    #[test]
    fn two_term_envelope_balances() {
        // L = t^{-2/3} + 1/N: optimum exponent (2/3)/(2/3 + 1) = 0.4
        let times = log_grid(1.0, 1e9, 16);
        let grid: Vec<(f64, LossTrajectory)> = log_grid(1.0, 1e7, 8)
            .into_iter()
            .map(|n| {
                let loss = times.iter().map(|t| t.powf(-2.0 / 3.0) + 1.0 / n).collect();
                (n, LossTrajectory::new(times.clone(), loss).unwrap())
            })
            .collect();
        let env = compute_optimal_envelope(&grid, &log_grid(1e6, 1e12, 16)).unwrap();
        let fit = env.fit(Some((1e6, 1e12))).unwrap();
        assert!((fit.exponent - 0.4).abs() < 0.03, "{}", fit.exponent);
        for (i, &c) in env.compute.iter().enumerate() {
            assert!((env.n_star[i] * env.t_star[i] / c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_curve_envelope_is_reparameterized() {
        let times = log_grid(1.0, 1e3, 10);
        let tr = power(1.0, 0.5, &times);
        let env = compute_optimal_envelope(&[(10.0, tr.clone())], &[10.0, 100.0, 1e4]).unwrap();
        for (c, l) in env.compute.iter().zip(&env.loss_star) {
            assert!((l - tr.interpolate(c / 10.0).unwrap()).abs() < 1e-12);
        }
        assert!(compute_optimal_envelope(&[(10.0, tr)], &[1e6]).is_err());
    }

    #[test]
    fn compare_identical_and_scaled() {
        let times = log_grid(1.0, 10.0, 4);
        let a = power(1.0, 1.0, &times);
        let b = power(1.1, 1.0, &times);
        assert_eq!(compare_curves(&a, &a).unwrap(), 0.0);
        assert!((compare_curves(&a, &b).unwrap() - 0.1).abs() < 1e-12);
    }
}
