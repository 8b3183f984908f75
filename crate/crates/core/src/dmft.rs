//! Mean-field theory of online SGD at finite width `N` and batch `B`.
//!
//! All two-time objects are dense `T × T` matrices over steps `0..T`. With
//! `Θ[t,s] = η·1[t>s]` and strictly causal memory kernels (`X<` is the
//! strictly lower part of `X`) the closed system is
//!
//! ```text
//! H_w  = [I - ηγ Θ C₃<]⁻¹ Θ
//! G    = H_w + ηγ C_w<
//! H⁰_k = [I + λ_k G R₃]⁻¹,   P_k = H⁰_k G,   h_k = H⁰_k 1
//! R₃   = [I + (1/N) Σ_k λ_k P_k]⁻¹
//! D_k  = (λ_k / B) diag(C₀)
//! C₀   = Σ_k λ_k [ w*_k² h_k h_kᵀ + P_k (C₃/N + R₃ D_k R₃ᵀ) P_kᵀ ]
//! C₂   = Σ_k (I - λ_k P_k R₃) D_k (I - λ_k P_k R₃)ᵀ + λ_k² [ w*_k² h_k h_kᵀ + P_k C₃ P_kᵀ / N ]
//! C₃   = R₃ C₂ R₃ᵀ
//! C_w  = H_w C₃ H_wᵀ
//! ```
//!
//! and the loss curve is `diag(C₀)`. Sums over modes run over [`ModeBins`].

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_scaled, extend_hold, extend_identity, max_abs_diff, relax, solve_lower, step_mul, strict_lower};
use crate::spectra::{ModeBin, ModeBins, SpectrumTable};
use crate::trajectory::LossTrajectory;

/// Bins handled sequentially by one worker; fixed so sums do not depend on
/// the thread count.
const BIN_CHUNK: usize = 8;

/// Discrete steps `0..horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: usize,
}

impl TimeGrid {
    pub fn new(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        Ok(Self { horizon })
    }
}

/// `Θ[t,s] = η·1[t>s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMatrix {
    pub grid: TimeGrid,
    pub learning_rate: f64,
}

pub fn step_matrix(horizon: usize, learning_rate: f64) -> Result<StepMatrix> {
    Ok(StepMatrix {
        grid: TimeGrid::new(horizon)?,
        learning_rate,
    })
}

impl StepMatrix {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let t = self.grid.horizon;
        DMatrix::from_fn(t, t, |r, c| if r > c { self.learning_rate } else { 0.0 })
    }

    /// `Θ X` without forming `Θ`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        step_mul(&vec![self.learning_rate; self.grid.horizon], x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmftConfig {
    /// Model size `N`; `f64::INFINITY` removes the finite-width terms.
    pub n_params: f64,
    /// Batch size `B`; `f64::INFINITY` removes the SGD noise.
    pub batch_size: f64,
    pub learning_rate: f64,
    pub richness: f64,
    pub horizon: usize,
    pub tol: f64,
    pub damping: f64,
    pub max_iter: usize,
    pub max_bins: usize,
}

impl Default for DmftConfig {
    fn default() -> Self {
        Self {
            n_params: 256.0,
            batch_size: 64.0,
            learning_rate: 0.1,
            richness: 0.0,
            horizon: 128,
            tol: 1e-8,
            damping: 0.5,
            max_iter: 1000,
            max_bins: 64,
        }
    }
}

impl DmftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_params >= 1.0 && self.batch_size >= 1.0) {
            return Err(Error::invalid("N and B must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.richness.is_finite() && self.richness >= 0.0) {
            return Err(Error::invalid("richness must be >= 0"));
        }
        TimeGrid::new(self.horizon)?;
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("damping must lie in (0, 1]"));
        }
        if self.max_bins == 0 {
            return Err(Error::invalid("bin budget must be positive"));
        }
        Ok(())
    }
}

/// Correlation and response matrices at a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub c0: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub c3: DMatrix<f64>,
    pub cw: DMatrix<f64>,
    pub r3: DMatrix<f64>,
    pub n_params: f64,
    pub batch_size: f64,
    pub learning_rate: f64,
    pub richness: f64,
}

impl KernelSet {
    pub fn horizon(&self) -> usize {
        self.c0.nrows()
    }

    pub fn step_matrix(&self) -> StepMatrix {
        StepMatrix {
            grid: TimeGrid { horizon: self.horizon() },
            learning_rate: self.learning_rate,
        }
    }

    /// Loss curve `C₀(t,t)`.
    pub fn loss(&self) -> Vec<f64> {
        self.c0.diagonal().iter().copied().collect()
    }

    /// CSV `step,loss`.
    pub fn write_loss_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "step,loss")?;
        for (t, l) in self.loss().iter().enumerate() {
            writeln!(out, "{t},{l:e}")?;
        }
        Ok(())
    }

    /// One named matrix as CSV rows without header.
    pub fn write_matrix_csv(&self, name: &str, mut out: impl Write) -> std::io::Result<()> {
        let m = match name {
            "c0" => &self.c0,
            "c2" => &self.c2,
            "c3" => &self.c3,
            "cw" => &self.cw,
            "r3" => &self.r3,
            _ => return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("no matrix {name}"))),
        };
        for r in 0..m.nrows() {
            let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    fn empty(config: &DmftConfig) -> Self {
        let z = DMatrix::zeros(0, 0);
        Self {
            c0: z.clone(),
            c2: z.clone(),
            c3: z.clone(),
            cw: z.clone(),
            r3: z,
            n_params: config.n_params,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            richness: config.richness,
        }
    }

    fn extended(&self, horizon: usize, total_signal: f64) -> Self {
        let mut out = Self {
            c0: extend_hold(&self.c0, horizon),
            c2: extend_hold(&self.c2, horizon),
            c3: extend_hold(&self.c3, horizon),
            cw: extend_hold(&self.cw, horizon),
            r3: extend_identity(&self.r3, horizon),
            ..self.clone()
        };
        if self.c0.nrows() == 0 {
            out.c0.fill(total_signal);
        }
        out
    }
}

/// Max-abs residual of each closing equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub c0: f64,
    pub c2: f64,
    pub c3: f64,
    pub cw: f64,
    pub r3: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        [self.c0, self.c2, self.c3, self.cw, self.r3].into_iter().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct DmftSolution {
    pub kernels: KernelSet,
    pub iterations: usize,
    /// Residual after every sweep at the final horizon.
    pub residual_history: Vec<f64>,
}

impl DmftSolution {
    /// Loss at every step, `times` in steps.
    pub fn trajectory(&self) -> Result<LossTrajectory> {
        let loss = self.kernels.loss();
        let times = (0..loss.len()).map(|t| t as f64).collect();
        Ok(LossTrajectory::new(times, loss)?.with_meta(serde_json::json!({
            "solver": "dmft",
            "n_params": self.kernels.n_params,
            "batch_size": self.kernels.batch_size,
            "learning_rate": self.kernels.learning_rate,
            "richness": self.kernels.richness,
            "iterations": self.iterations,
        })))
    }
}

/// Solves from scratch, growing the horizon by doubling so each stage starts
/// from the converged shorter solution.
pub fn solve_dmft(table: &SpectrumTable, config: &DmftConfig) -> Result<DmftSolution> {
    config.validate()?;
    let bins = ModeBins::new(table, config.max_bins)?;
    let mut kernels = KernelSet::empty(config);
    let mut horizon = config.horizon.min(16);
    let mut iterations = 0;
    loop {
        kernels = kernels.extended(horizon, bins.total_signal());
        let (k, iters, history) = iterate(&bins, config, kernels)?;
        kernels = k;
        iterations += iters;
        if horizon == config.horizon {
            return Ok(DmftSolution {
                kernels,
                iterations,
                residual_history: history,
            });
        }
        horizon = (horizon * 2).min(config.horizon);
    }
}

/// Solves starting from `initial` (same horizon as `config`).
pub fn solve_dmft_from(table: &SpectrumTable, config: &DmftConfig, initial: &KernelSet) -> Result<DmftSolution> {
    config.validate()?;
    if initial.horizon() != config.horizon {
        return Err(Error::invalid("initial kernels have a different horizon"));
    }
    let bins = ModeBins::new(table, config.max_bins)?;
    let (kernels, iterations, residual_history) = iterate(&bins, config, initial.clone())?;
    Ok(DmftSolution {
        kernels,
        iterations,
        residual_history,
    })
}

/// Residual of every closing equation at `kernels` (one undamped sweep).
pub fn residuals(kernels: &KernelSet, table: &SpectrumTable, max_bins: usize) -> Result<Residuals> {
    let bins = ModeBins::new(table, max_bins)?;
    let next = sweep(&bins, kernels)?;
    Ok(Residuals {
        c0: max_abs_diff(&next.c0, &kernels.c0),
        c2: max_abs_diff(&next.c2, &kernels.c2),
        c3: max_abs_diff(&next.c3, &kernels.c3),
        cw: max_abs_diff(&next.cw, &kernels.cw),
        r3: max_abs_diff(&next.r3, &kernels.r3),
    })
}

fn iterate(bins: &ModeBins, config: &DmftConfig, mut k: KernelSet) -> Result<(KernelSet, usize, Vec<f64>)> {
    let mut history = Vec::new();
    for iter in 1..=config.max_iter {
        let next = sweep(bins, &k)?;
        let res = [
            max_abs_diff(&next.c0, &k.c0),
            max_abs_diff(&next.c2, &k.c2),
            max_abs_diff(&next.c3, &k.c3),
            max_abs_diff(&next.cw, &k.cw),
            max_abs_diff(&next.r3, &k.r3),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        if !res.is_finite() {
            return Err(Error::IllConditioned("non-finite kernels".into()));
        }
        history.push(res);
        if res < config.tol {
            return Ok((next, iter, history));
        }
        k.c0 = next.c0;
        k.c2 = next.c2;
        relax(&mut k.c3, &next.c3, config.damping);
        relax(&mut k.cw, &next.cw, config.damping);
        relax(&mut k.r3, &next.r3, config.damping);
    }
    Err(Error::NonConvergence {
        iterations: config.max_iter,
        residual: history.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Per-chunk partial sums of the mode reductions.
struct Partial {
    c0: DMatrix<f64>,
    c2: DMatrix<f64>,
    r24: DMatrix<f64>,
}

impl Partial {
    fn zeros(t: usize) -> Self {
        Self {
            c0: DMatrix::zeros(t, t),
            c2: DMatrix::zeros(t, t),
            r24: DMatrix::zeros(t, t),
        }
    }

    fn add(&mut self, other: &Partial) {
        self.c0 += &other.c0;
        self.c2 += &other.c2;
        self.r24 += &other.r24;
    }
}

/// Everything a bin needs that does not depend on the bin.
struct Shared<'a> {
    g: DMatrix<f64>,
    r3: &'a DMatrix<f64>,
    c3: &'a DMatrix<f64>,
    /// `diag(C₀)`
    d: Vec<f64>,
    inv_n: f64,
    inv_b: f64,
}

fn bin_terms(bin: &ModeBin, s: &Shared<'_>, acc: &mut Partial) -> Result<()> {
    let t = s.g.nrows();
    let lam = bin.lambda;
    let mut lhs = &s.g * s.r3;
    lhs.scale_mut(lam);
    for i in 0..t {
        lhs[(i, i)] += 1.0;
    }
    let mut rhs = DMatrix::zeros(t, t + 1);
    rhs.view_mut((0, 0), (t, t)).copy_from(&s.g);
    rhs.column_mut(t).fill(1.0);
    let sol = solve_lower(&lhs, &rhs, "mode filter")?;
    let p = sol.columns(0, t).into_owned();
    let h: DVector<f64> = sol.column(t).into_owned();

    add_scaled(&mut acc.r24, bin.lambda_mass, &p);
    acc.c0.ger(bin.signal_mass, &h, &h, 1.0);
    acc.c2.ger(lam * bin.signal_mass, &h, &h, 1.0);

    if s.inv_n > 0.0 {
        let y = &p * s.c3 * p.transpose();
        add_scaled(&mut acc.c0, bin.lambda_mass * s.inv_n, &y);
        add_scaled(&mut acc.c2, lam * bin.lambda_mass * s.inv_n, &y);
    }
    if s.inv_b > 0.0 {
        // (I - λ W) D (I - λ W)ᵀ with W = P R₃, expanded to reuse W D Wᵀ
        let w = &p * s.r3;
        let mut wd = w.clone();
        for (c, &dc) in s.d.iter().enumerate() {
            wd.column_mut(c).scale_mut(dc);
        }
        let z = &wd * w.transpose();
        let noise = bin.lambda_mass * s.inv_b;
        add_scaled(&mut acc.c0, noise * lam, &z);
        add_scaled(&mut acc.c2, noise * lam * lam, &z);
        add_scaled(&mut acc.c2, -noise * lam, &wd);
        add_scaled(&mut acc.c2, -noise * lam, &wd.transpose());
        for (i, &di) in s.d.iter().enumerate() {
            acc.c2[(i, i)] += noise * di;
        }
    }
    Ok(())
}

/// One undamped pass through the closing equations.
fn sweep(bins: &ModeBins, k: &KernelSet) -> Result<KernelSet> {
    let t = k.horizon();
    let eta = k.learning_rate;
    let gamma = k.richness;
    let theta = k.step_matrix();
    let hw = {
        let mut lhs = theta.apply(&strict_lower(&k.c3));
        lhs.scale_mut(-eta * gamma);
        for i in 0..t {
            lhs[(i, i)] += 1.0;
        }
        solve_lower(&lhs, &theta.to_dense(), "readout filter")?
    };
    let mut g = strict_lower(&k.cw);
    g.scale_mut(eta * gamma);
    g += &hw;
    let shared = Shared {
        g,
        r3: &k.r3,
        c3: &k.c3,
        d: k.c0.diagonal().iter().copied().collect(),
        inv_n: 1.0 / k.n_params,
        inv_b: 1.0 / k.batch_size,
    };
    let partials = bins
        .bins()
        .par_chunks(BIN_CHUNK)
        .map(|chunk| {
            let mut acc = Partial::zeros(t);
            for bin in chunk.iter().rev() {
                bin_terms(bin, &shared, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Partial::zeros(t);
    for p in partials.iter().rev() {
        total.add(p);
    }

    let mut lhs = total.r24;
    lhs.scale_mut(shared.inv_n);
    for i in 0..t {
        lhs[(i, i)] += 1.0;
    }
    let r3 = solve_lower(&lhs, &DMatrix::identity(t, t), "width response")?;
    let c3 = &r3 * &total.c2 * r3.transpose();
    let cw = &hw * &c3 * hw.transpose();
    Ok(KernelSet {
        c0: total.c0,
        c2: total.c2,
        c3,
        cw,
        r3,
        ..k.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limits::{solve_infinite_limit, LimitConfig};
    use crate::spectra::SourceCapacitySpec;

    fn table(beta: f64, m: usize) -> SpectrumTable {
        SpectrumTable::build(&SourceCapacitySpec::new(2.0, beta, m).unwrap()).unwrap()
    }

    #[test]
    fn step_matrix_shape() {
        let s = step_matrix(2, 0.3).unwrap().to_dense();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.3, 0.0]));
        assert_eq!(step_matrix(1, 0.3).unwrap().to_dense(), DMatrix::zeros(1, 1));
        let d = step_matrix(5, 0.5).unwrap().to_dense();
        for r in 0..5 {
            assert!((d.row(r).sum() - 0.5 * r as f64).abs() < 1e-15);
        }
        assert!(step_matrix(0, 0.1).is_err());
    }

    #[test]
    fn single_step_is_trace() {
        let t = table(0.4, 50);
        for gamma in [0.0, 1.0] {
            let cfg = DmftConfig {
                horizon: 1,
                richness: gamma,
                n_params: 4.0,
                batch_size: 2.0,
                ..Default::default()
            };
            let sol = solve_dmft(&t, &cfg).unwrap();
            assert!((sol.kernels.loss()[0] - t.total_signal()).abs() < 1e-12);
        }
    }

    #[test]
    fn infinite_width_matches_limit_solver() {
        let t = table(0.4, 200);
        let cfg = DmftConfig {
            n_params: f64::INFINITY,
            batch_size: f64::INFINITY,
            learning_rate: 0.2,
            richness: 0.75,
            horizon: 40,
            tol: 1e-11,
            max_bins: 32,
            ..Default::default()
        };
        let sol = solve_dmft(&t, &cfg).unwrap();
        let lim = solve_infinite_limit(
            &t,
            &LimitConfig {
                learning_rate: 0.2,
                richness: 0.75,
                horizon: 40,
                max_bins: 32,
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in sol.kernels.loss().iter().zip(&lim.loss) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn lazy_population_flow_is_closed_form() {
        // N, B infinite and γ = 0 reduce to independent geometric decays
        let t = table(0.7, 30);
        let cfg = DmftConfig {
            n_params: f64::INFINITY,
            batch_size: f64::INFINITY,
            learning_rate: 0.4,
            horizon: 20,
            max_bins: 30,
            ..Default::default()
        };
        let loss = solve_dmft(&t, &cfg).unwrap().kernels.loss();
        for (step, l) in loss.iter().enumerate() {
            let oracle: f64 = t
                .eigenvalues()
                .iter()
                .zip(t.target_weights_sq())
                .map(|(lam, w)| lam * w * (1.0 - 0.4 * lam).powi(2 * step as i32))
                .sum();
            assert!((l - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_size_structure() {
        let t = table(0.4, 100);
        let cfg = DmftConfig {
            n_params: 32.0,
            batch_size: 8.0,
            learning_rate: 0.2,
            richness: 0.5,
            horizon: 24,
            max_bins: 16,
            ..Default::default()
        };
        let sol = solve_dmft(&t, &cfg).unwrap();
        let k = &sol.kernels;
        for i in 0..24 {
            assert!((k.r3[(i, i)] - 1.0).abs() < 1e-12);
            for j in (i + 1)..24 {
                assert_eq!(k.r3[(i, j)], 0.0);
            }
        }
        for m in [&k.c0, &k.c2, &k.c3, &k.cw] {
            assert!(max_abs_diff(m, &m.transpose()) < 1e-10);
        }
        let res = residuals(k, &t, 16).unwrap();
        assert!(res.max() < 1e-7, "{res:?}");
        let again = solve_dmft_from(&t, &cfg, k).unwrap();
        assert!(again.iterations <= 2);
    }
}
