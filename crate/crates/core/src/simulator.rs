//! Monte Carlo training of the projected-SGD model.
//!
//! The predictor is `f(ψ) = (1/N) wᵀ A ψ` with trainable readout `w ∈ R^N` and
//! features `A ∈ R^{N×M}`. With `v⁰ = w* - Aᵀw/N` one step reads
//!
//! ```text
//! v² = (1/B) ΨᵀΨ v⁰
//! w ← w + η A v²
//! A ← A + ηγ w (A(0)ᵀA(0) v² / N)ᵀ
//! ```
//!
//! both right-hand sides using the pre-step state.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::SpectrumTable;
use crate::trajectory::{log_checkpoints, LossTrajectory};

/// Loss ratio to the initial loss above which a run counts as diverged.
pub const DIVERGENCE_RATIO: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_params: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub richness: f64,
    pub steps: usize,
    pub seed: u64,
    pub checkpoints: Vec<usize>,
}

impl TrainConfig {
    /// Config with log-spaced checkpoints (16 per decade).
    pub fn new(n_params: usize, batch_size: usize, learning_rate: f64, richness: f64, steps: usize, seed: u64) -> Self {
        Self {
            n_params,
            batch_size,
            learning_rate,
            richness,
            steps,
            seed,
            checkpoints: log_checkpoints(steps, 16),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_params == 0 || self.batch_size == 0 {
            return Err(Error::invalid("N and B must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning rate must be finite and nonnegative"));
        }
        if !(self.richness.is_finite() && self.richness >= 0.0) {
            return Err(Error::invalid("richness must be >= 0"));
        }
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("checkpoints must be sorted and unique"));
        }
        if self.checkpoints.last().is_some_and(|&c| c > self.steps) {
            return Err(Error::invalid("checkpoint beyond the final step"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub readout: DVector<f64>,
    pub features: DMatrix<f64>,
    frozen_init: DMatrix<f64>,
    pub step: usize,
}

impl ModelState {
    /// State at step 0 with the given `A(0)` and `w = 0`.
    pub fn from_init(frozen_init: DMatrix<f64>) -> Self {
        Self {
            readout: DVector::zeros(frozen_init.nrows()),
            features: frozen_init.clone(),
            frozen_init,
            step: 0,
        }
    }

    pub fn frozen_init(&self) -> &DMatrix<f64> {
        &self.frozen_init
    }

    pub fn n_params(&self) -> usize {
        self.readout.len()
    }

    /// `v⁰ = w* - Aᵀw / N`.
    pub fn error_vector(&self, target: &DVector<f64>) -> DVector<f64> {
        let n = self.n_params() as f64;
        target - self.features.tr_mul(&self.readout) / n
    }
}

/// Positive target weights `w*_k = sqrt((w*_k)²)`.
pub fn target_vector(table: &SpectrumTable) -> DVector<f64> {
    DVector::from_vec(table.target_weights())
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of ensemble member `index`, a pure function of `(base, index)`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    rng_for(base, index.wrapping_add(1 << 32)).next_u64()
}

/// `A(0)` with i.i.d. standard normal entries, `w = 0`.
pub fn init_state(table: &SpectrumTable, config: &TrainConfig) -> Result<ModelState> {
    config.validate()?;
    let mut rng = rng_for(config.seed, 0);
    let a0 = DMatrix::from_fn(config.n_params, table.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(ModelState::from_init(a0))
}

/// `B × M` Gaussian features with column variances `λ_k`.
pub fn sample_batch(table: &SpectrumTable, batch_size: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let scale: Vec<f64> = table.eigenvalues().iter().map(|l| l.sqrt()).collect();
    // row-major fill keeps one sample's draws contiguous in the stream
    DMatrix::from_row_iterator(
        batch_size,
        scale.len(),
        (0..batch_size * scale.len()).map(|i| scale[i % scale.len()] * rng.sample::<f64, _>(StandardNormal)),
    )
}

/// Gram operator driving one step.
#[derive(Debug, Clone, Copy)]
pub enum Batch<'a> {
    /// `(1/B) ΨᵀΨ` from sampled features.
    Samples(&'a DMatrix<f64>),
    /// The population covariance `Λ`.
    Population,
}

impl Batch<'_> {
    fn apply(&self, table: &SpectrumTable, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Batch::Samples(psi) => psi.tr_mul(&(*psi * v)) / psi.nrows() as f64,
            Batch::Population => DVector::from_iterator(
                v.len(),
                v.iter().zip(table.eigenvalues()).map(|(x, l)| x * l),
            ),
        }
    }
}

/// One simultaneous update of `(w, A)`.
pub fn sgd_step(
    state: &mut ModelState,
    batch: Batch<'_>,
    table: &SpectrumTable,
    target: &DVector<f64>,
    config: &TrainConfig,
) -> Result<()> {
    let n = state.n_params() as f64;
    let eta = config.learning_rate;
    let v0 = state.error_vector(target);
    let v2 = batch.apply(table, &v0);
    let dw = &state.features * &v2 * eta;
    if config.richness != 0.0 {
        let v3 = &state.frozen_init * &v2;
        let v4 = state.frozen_init.tr_mul(&v3) / n;
        state.features.ger(eta * config.richness, &state.readout, &v4, 1.0);
    }
    state.readout += dw;
    state.step += 1;
    if !state.readout.iter().all(|x| x.is_finite()) {
        return Err(Error::Diverged {
            step: state.step,
            loss: f64::INFINITY,
        });
    }
    Ok(())
}

/// Population loss `v⁰ᵀ Λ v⁰`.
pub fn test_loss(state: &ModelState, table: &SpectrumTable, target: &DVector<f64>) -> f64 {
    let v0 = state.error_vector(target);
    v0.iter()
        .zip(table.eigenvalues())
        .rev()
        .map(|(v, l)| l * v * v)
        .sum()
}

fn meta(config: &TrainConfig, table: &SpectrumTable, mode: &str) -> serde_json::Value {
    serde_json::json!({
        "mode": mode,
        "config": config,
        "n_modes": table.len(),
    })
}

/// Drives `step` for `config.steps` steps, recording the loss at checkpoints.
fn drive(
    config: &TrainConfig,
    mut loss: impl FnMut() -> f64,
    mut step: impl FnMut(usize) -> Result<()>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let l0 = loss();
    let limit = DIVERGENCE_RATIO * l0.max(f64::MIN_POSITIVE);
    let mut times = Vec::with_capacity(config.checkpoints.len());
    let mut values = Vec::with_capacity(config.checkpoints.len());
    let mut next = config.checkpoints.iter().peekable();
    for t in 0..=config.steps {
        if next.peek() == Some(&&t) {
            next.next();
            let l = if t == 0 { l0 } else { loss() };
            if !(l <= limit) {
                return Err(Error::Diverged { step: t, loss: l });
            }
            times.push(t as f64);
            values.push(l);
        }
        if t == config.steps {
            break;
        }
        step(t)?;
    }
    Ok((times, values))
}

/// Online SGD with a fresh batch every step.
pub fn run_online(table: &SpectrumTable, config: &TrainConfig) -> Result<LossTrajectory> {
    let target = target_vector(table);
    let state = std::cell::RefCell::new(init_state(table, config)?);
    let mut rng = rng_for(config.seed, 1);
    let (t, l) = drive(
        config,
        || test_loss(&state.borrow(), table, &target),
        |_| {
            let psi = sample_batch(table, config.batch_size, &mut rng);
            sgd_step(&mut state.borrow_mut(), Batch::Samples(&psi), table, &target, config)
        },
    )?;
    Ok(LossTrajectory::new(t, l)?.with_meta(meta(config, table, "online")))
}

/// Full-batch gradient descent on one fixed dataset of `n_samples` points.
pub fn run_offline(table: &SpectrumTable, config: &TrainConfig, n_samples: usize) -> Result<LossTrajectory> {
    if n_samples == 0 {
        return Err(Error::invalid("dataset needs at least one sample"));
    }
    let target = target_vector(table);
    let state = std::cell::RefCell::new(init_state(table, config)?);
    let psi = sample_batch(table, n_samples, &mut rng_for(config.seed, 1));
    let (t, l) = drive(
        config,
        || test_loss(&state.borrow(), table, &target),
        |_| sgd_step(&mut state.borrow_mut(), Batch::Samples(&psi), table, &target, config),
    )?;
    let mut m = meta(config, table, "offline");
    m["n_samples"] = n_samples.into();
    Ok(LossTrajectory::new(t, l)?.with_meta(m))
}

/// Mean and standard error over `n_seeds` independent runs of `run`.
///
/// Member `i` trains with [`derive_seed`]`(config.seed, i)`, so the result
/// does not depend on scheduling or thread count.
pub fn run_ensemble_with<F>(config: &TrainConfig, n_seeds: usize, run: F) -> Result<LossTrajectory>
where
    F: Fn(&TrainConfig) -> Result<LossTrajectory> + Sync,
{
    if n_seeds == 0 {
        return Err(Error::invalid("ensemble needs at least one seed"));
    }
    let runs = (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let mut c = config.clone();
            c.seed = derive_seed(config.seed, i);
            run(&c)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = runs[0].len();
    let n = n_seeds as f64;
    let mut mean = vec![0.0; k];
    let mut stderr = vec![0.0; k];
    for j in 0..k {
        let m = runs.iter().map(|r| r.loss[j]).sum::<f64>() / n;
        let var = if n_seeds > 1 {
            runs.iter().map(|r| (r.loss[j] - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean[j] = m;
        stderr[j] = (var / n).sqrt();
    }
    let mut meta = runs[0].meta.clone();
    meta["base_seed"] = config.seed.into();
    meta["n_seeds"] = n_seeds.into();
    Ok(LossTrajectory::with_stats(runs[0].times.clone(), mean, stderr, n_seeds)?.with_meta(meta))
}

/// Ensemble of [`run_online`].
pub fn run_ensemble(table: &SpectrumTable, config: &TrainConfig, n_seeds: usize) -> Result<LossTrajectory> {
    run_ensemble_with(config, n_seeds, |c| run_online(table, c))
}

/// The same model written as `f = (1/N) wᵀ B A(0) ψ` with `B(0) = I`,
/// trained on `(w, B)` with the same seed and batches as [`run_online`].
pub fn run_b_parameterized(table: &SpectrumTable, config: &TrainConfig) -> Result<LossTrajectory> {
    let target = target_vector(table);
    let init = init_state(table, config)?;
    let a0 = init.frozen_init().clone();
    let n = config.n_params;
    let nf = n as f64;
    let eta = config.learning_rate;
    let gamma = config.richness;
    let params = std::cell::RefCell::new((DVector::<f64>::zeros(n), DMatrix::<f64>::identity(n, n)));
    let error = |w: &DVector<f64>, b: &DMatrix<f64>| -> DVector<f64> { &target - a0.tr_mul(&b.tr_mul(w)) / nf };
    let mut rng = rng_for(config.seed, 1);
    let loss = || {
        let p = params.borrow();
        let v0 = error(&p.0, &p.1);
        v0.iter().zip(table.eigenvalues()).rev().map(|(v, l)| l * v * v).sum()
    };
    let (t, l) = drive(config, loss, |step| {
        let psi = sample_batch(table, config.batch_size, &mut rng);
        let mut p = params.borrow_mut();
        let (w, b) = &mut *p;
        let v0 = error(w, b);
        let v2 = Batch::Samples(&psi).apply(table, &v0);
        let v3 = &a0 * &v2;
        let dw = &*b * &v3 * eta;
        if gamma != 0.0 {
            b.ger(eta * gamma / nf, w, &v3, 1.0);
        }
        *w += dw;
        if w.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Diverged {
                step: step + 1,
                loss: f64::INFINITY,
            })
        }
    })?;
    Ok(LossTrajectory::new(t, l)?.with_meta(meta(config, table, "b_parameterized")))
}
