//! Two-layer linear network with a richness knob, trained by online SGD.
//!
//! `f(x) = (wᵀA x - w(0)ᵀA(0) x) / (γN)` with `w ∈ R^N`, `A ∈ R^{N×M}` and
//! standard normal initialization, so the output is zero at step 0 for every
//! input. Gradients are taken with learning rate `ηγ²N`, which keeps the
//! effective map `(Aᵀw - A(0)ᵀw(0)) / (γN)` moving at rate `η` for every `γ`
//! while the feature updates scale with `γ`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::{fit_series, FitResult};
use crate::error::{Error, Result};
use crate::simulator::{rng_for, sample_batch, DIVERGENCE_RATIO};
use crate::spectra::SpectrumTable;
use crate::trajectory::{log_checkpoints, LossTrajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearNetConfig {
    pub n_hidden: usize,
    pub richness: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub checkpoints: Vec<usize>,
}

impl LinearNetConfig {
    pub fn new(n_hidden: usize, richness: f64, learning_rate: f64, batch_size: usize, steps: usize, seed: u64) -> Self {
        Self {
            n_hidden,
            richness,
            learning_rate,
            batch_size,
            steps,
            seed,
            checkpoints: log_checkpoints(steps, 16),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearNetState {
    pub readout: DVector<f64>,
    pub features: DMatrix<f64>,
    readout_init: DVector<f64>,
    features_init: DMatrix<f64>,
    pub step: usize,
}

impl LinearNetState {
    pub fn init(n_hidden: usize, n_modes: usize, rng: &mut impl Rng) -> Self {
        let a = DMatrix::from_fn(n_hidden, n_modes, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = DVector::from_fn(n_hidden, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self {
            readout: w.clone(),
            features: a.clone(),
            readout_init: w,
            features_init: a,
            step: 0,
        }
    }

    /// Effective linear map `(Aᵀw - A(0)ᵀw(0)) / (γN)`.
    pub fn effective_weights(&self, richness: f64) -> DVector<f64> {
        let n = self.readout.len() as f64;
        (self.features.tr_mul(&self.readout) - self.features_init.tr_mul(&self.readout_init)) / (richness * n)
    }

    /// `(|w|² - |w(0)|²) / N`.
    pub fn spike(&self) -> f64 {
        (self.readout.norm_squared() - self.readout_init.norm_squared()) / self.readout.len() as f64
    }
}

/// Growth of the readout norm at the loss checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrajectory {
    pub times: Vec<f64>,
    /// `(|w|² - |w(0)|²) / N`
    pub spike: Vec<f64>,
    /// `|w|² / N`
    pub readout_norm_sq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearNetRun {
    pub loss: LossTrajectory,
    pub spike: SpikeTrajectory,
}

impl LinearNetRun {
    /// CSV with header `step,loss,spike_norm`.
    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "step,loss,spike_norm")?;
        for i in 0..self.loss.len() {
            writeln!(out, "{},{:e},{:e}", self.loss.times[i], self.loss.loss[i], self.spike.spike[i])?;
        }
        Ok(())
    }
}

fn population_loss(v: &DVector<f64>, table: &SpectrumTable) -> f64 {
    v.iter().zip(table.eigenvalues()).rev().map(|(x, l)| l * x * x).sum()
}

pub fn train_linearnet(table: &SpectrumTable, config: &LinearNetConfig) -> Result<LinearNetRun> {
    let gamma = config.richness;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("richness must be positive"));
    }
    if config.n_hidden == 0 || config.batch_size == 0 {
        return Err(Error::invalid("width and batch size must be at least 1"));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let mut state = LinearNetState::init(config.n_hidden, table.len(), &mut rng_for(config.seed, 0));
    let mut rng = rng_for(config.seed, 1);
    let target = DVector::from_vec(table.target_weights());
    let step_scale = config.learning_rate * gamma;
    let l0 = table.total_signal();
    let mut times = Vec::new();
    let mut losses = Vec::new();
    let mut spike = Vec::new();
    let mut norm = Vec::new();
    let mut next = config.checkpoints.iter().peekable();
    for t in 0..=config.steps {
        let v = &target - state.effective_weights(gamma);
        if next.peek() == Some(&&t) {
            next.next();
            let l = population_loss(&v, table);
            if !(l <= DIVERGENCE_RATIO * l0) {
                return Err(Error::Diverged { step: t, loss: l });
            }
            times.push(t as f64);
            losses.push(l);
            spike.push(state.spike());
            norm.push(state.readout.norm_squared() / config.n_hidden as f64);
        }
        if t == config.steps {
            break;
        }
        let x = sample_batch(table, config.batch_size, &mut rng);
        let residual = &x * &v;
        let g = x.tr_mul(&residual) / config.batch_size as f64;
        let dw = &state.features * &g * step_scale;
        state.features.ger(step_scale, &state.readout, &g, 1.0);
        state.readout += dw;
        state.step += 1;
    }
    let loss = LossTrajectory::new(times.clone(), losses)?.with_meta(serde_json::json!({
        "model": "linear_network",
        "config": config,
        "n_modes": table.len(),
    }));
    Ok(LinearNetRun {
        loss,
        spike: SpikeTrajectory {
            times,
            spike,
            readout_norm_sq: norm,
        },
    })
}

/// Log-log growth exponent of the spike (slope, positive for growth).
pub fn spike_growth_exponent(spike: &SpikeTrajectory, window: Option<(f64, f64)>) -> Result<FitResult> {
    let mut fit = fit_series(&spike.times, &spike.spike, window)?;
    fit.exponent = -fit.exponent;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::SourceCapacitySpec;

    fn table(beta: f64, m: usize) -> SpectrumTable {
        SpectrumTable::build(&SourceCapacitySpec::new(2.0, beta, m).unwrap()).unwrap()
    }

    #[test]
    fn zero_output_at_init() {
        let t = table(0.5, 64);
        for seed in 0..3 {
            let run = train_linearnet(&t, &LinearNetConfig::new(16, 2.0, 0.05, 4, 10, seed)).unwrap();
            assert!((run.loss.loss[0] - t.total_signal()).abs() < 1e-12);
            assert_eq!(run.spike.spike[0], 0.0);
        }
    }

    #[test]
    fn learns_and_grows_spike() {
        let t = table(0.5, 256);
        let run = train_linearnet(&t, &LinearNetConfig::new(32, 2.0, 0.05, 16, 2000, 1)).unwrap();
        assert!(*run.loss.loss.last().unwrap() < 0.5 * run.loss.loss[0]);
        assert!(*run.spike.spike.last().unwrap() > 0.0);
    }

    #[test]
    fn constant_spike_has_zero_exponent() {
        let times: Vec<f64> = (1..20).map(|i| i as f64).collect();
        let s = SpikeTrajectory {
            spike: vec![3.0; times.len()],
            readout_norm_sq: vec![4.0; times.len()],
            times,
        };
        assert!(spike_growth_exponent(&s, None).unwrap().exponent.abs() < 1e-12);
    }

    #[test]
    fn rejects_lazy_limit() {
        let t = table(0.5, 8);
        assert!(train_linearnet(&t, &LinearNetConfig::new(4, 0.0, 0.1, 1, 1, 0)).is_err());
    }
}
