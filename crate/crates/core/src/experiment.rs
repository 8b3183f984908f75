//! Declarative experiment configs, deterministic sweeps and run manifests.
//!
//! A config names one experiment kind, the spectrum, the kind's parameters
//! and optional sweep axes. Every grid point writes into its own directory
//! `<out>/<label>/`; the coordinator then writes `summary.csv`,
//! `summary.json` and finally `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{compute_optimal_envelope, fit_power_law, log_grid, FitResult};
use crate::dmft::{solve_dmft, DmftConfig};
use crate::error::{Error, Result};
use crate::exponents::{chi_closed, compute_optimal_exponent, exponent_table, write_exponent_table, LearningMode};
use crate::limits::{bootstrap_chi, bottleneck_scan, limit_curve, limit_loss_grid, solve_chi, ChiConfig, CurveConfig, Resource};
use crate::linearnet::{spike_growth_exponent, train_linearnet, LinearNetConfig};
use crate::simulator::{run_ensemble, run_ensemble_with, run_offline, TrainConfig};
use crate::spectra::{SourceCapacitySpec, SpectrumTable};
use crate::trajectory::{log_checkpoints, LossTrajectory};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumParams {
    pub alpha: f64,
    pub beta: f64,
    /// Retained modes; defaults to the cutoff converging the trace to 0.1%.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_modes: Option<usize>,
}

impl SpectrumParams {
    pub fn spec(&self) -> Result<SourceCapacitySpec> {
        match self.n_modes {
            Some(m) => SourceCapacitySpec::new(self.alpha, self.beta, m),
            None => SourceCapacitySpec::with_default_cutoff(self.alpha, self.beta),
        }
    }
}

fn sixteen() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub n_params: usize,
    pub batch_size: usize,
    pub learning_rate_per_step: f64,
    pub richness: f64,
    pub steps: usize,
    pub n_seeds: usize,
    #[serde(default = "sixteen")]
    pub checkpoints_per_decade: usize,
    /// Finite dataset resampled with replacement; online when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window_steps: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmftParams {
    /// `inf` removes the finite-width terms.
    pub n_params: f64,
    /// `inf` removes the SGD noise.
    pub batch_size: f64,
    pub learning_rate_per_step: f64,
    pub richness: f64,
    pub steps: usize,
    #[serde(default = "DmftParams::default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "half")]
    pub damping: f64,
    #[serde(default = "DmftParams::default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "DmftParams::default_max_bins")]
    pub max_bins: usize,
    /// Also write the C0, C2, C3, Cw and R3 matrices.
    #[serde(default)]
    pub write_kernels: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window_steps: Option<[f64; 2]>,
}

impl DmftParams {
    fn default_tolerance() -> f64 {
        1e-8
    }
    fn default_max_iterations() -> usize {
        1000
    }
    fn default_max_bins() -> usize {
        64
    }
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitParams {
    pub learning_rate_per_step: f64,
    pub richness: f64,
    pub horizon_steps: usize,
    pub max_flow_time: f64,
    #[serde(default = "LimitParams::default_max_bins")]
    pub max_bins: usize,
    #[serde(default = "sixteen")]
    pub points_per_decade: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window_flow_time: Option<[f64; 2]>,
}

impl LimitParams {
    fn default_max_bins() -> usize {
        128
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChiParams {
    pub richness: f64,
    pub min_time: f64,
    pub max_time: f64,
    #[serde(default = "ChiParams::default_ppd")]
    pub points_per_decade: usize,
    #[serde(default = "ChiParams::default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "half")]
    pub damping: f64,
    #[serde(default = "ChiParams::default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "ChiParams::default_levels")]
    pub bootstrap_levels: usize,
}

impl ChiParams {
    fn default_ppd() -> usize {
        8
    }
    fn default_tolerance() -> f64 {
        1e-4
    }
    fn default_max_iterations() -> usize {
        200
    }
    fn default_levels() -> usize {
        30
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BottleneckParams {
    pub resource: Resource,
    pub sizes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeParams {
    pub richness: f64,
    pub model_sizes: Vec<f64>,
    pub max_flow_time: f64,
    pub compute_min: f64,
    pub compute_max: f64,
    #[serde(default = "sixteen")]
    pub compute_per_decade: usize,
    #[serde(default = "sixteen")]
    pub points_per_decade: usize,
    #[serde(default = "LimitParams::default_max_bins")]
    pub max_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window_compute: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearNetParams {
    pub n_hidden: usize,
    pub richness: f64,
    pub learning_rate_per_step: f64,
    pub batch_size: usize,
    pub steps: usize,
    #[serde(default = "sixteen")]
    pub checkpoints_per_decade: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window_steps: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentTableParams {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Simulate(SimulateParams),
    Dmft(DmftParams),
    Limit(LimitParams),
    Chi(ChiParams),
    Bottleneck(BottleneckParams),
    Envelope(EnvelopeParams),
    Linearnet(LinearNetParams),
    ExponentTable(ExponentTableParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Simulate(_) => "simulate",
            Experiment::Dmft(_) => "dmft",
            Experiment::Limit(_) => "limit",
            Experiment::Chi(_) => "chi",
            Experiment::Bottleneck(_) => "bottleneck",
            Experiment::Envelope(_) => "envelope",
            Experiment::Linearnet(_) => "linearnet",
            Experiment::ExponentTable(_) => "exponent-table",
        }
    }

    fn needs_spectrum(&self) -> bool {
        !matches!(self, Experiment::ExponentTable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumParams>,
    pub experiment: Experiment,
    /// Axis name to values; names are spectrum or experiment keys.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sweep: BTreeMap<String, Vec<f64>>,
}

fn config_error(location: impl Into<String>, message: impl std::fmt::Display) -> Error {
    Error::Config {
        location: location.into(),
        message: message.to_string(),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    format!("line {line}, column {col}")
                }
                None => "config".into(),
            };
            config_error(location, e.message())
        })?;
        config.check()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config { location, message } => Error::Config {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_error("serialization", e))
    }

    /// SHA-256 of the canonical serialization.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml_string()?.as_bytes())))
    }

    /// Structural checks that need no solver work; also resolves every
    /// grid point.
    pub fn check(&self) -> Result<()> {
        match (&self.spectrum, self.experiment.needs_spectrum()) {
            (None, true) => return Err(config_error("spectrum", "this kind needs a [spectrum] table")),
            (Some(_), false) => {
                return Err(config_error("spectrum", "exponent-table takes its alphas and betas from [experiment]"))
            }
            _ => {}
        }
        for (axis, values) in &self.sweep {
            if values.is_empty() {
                return Err(config_error(format!("sweep.{axis}"), "sweep axis has no values"));
            }
            if values.iter().any(|v| v.is_nan()) {
                return Err(config_error(format!("sweep.{axis}"), "NaN in sweep values"));
            }
        }
        for point in self.grid()? {
            point.check()?;
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes (axis names in sorted order,
    /// last axis fastest).
    pub fn grid(&self) -> Result<Vec<GridPoint>> {
        let base = toml::Value::try_from(self).map_err(|e| config_error("config", e))?;
        let axes: Vec<(&String, &Vec<f64>)> = self.sweep.iter().collect();
        let total: usize = axes.iter().map(|(_, v)| v.len()).product();
        let mut points = Vec::with_capacity(total);
        for index in 0..total {
            let mut rem = index;
            let mut values = vec![0.0; axes.len()];
            for (slot, (_, vals)) in values.iter_mut().zip(&axes).rev() {
                *slot = vals[rem % vals.len()];
                rem /= vals.len();
            }
            let mut doc = base.clone();
            for ((name, _), &v) in axes.iter().zip(&values) {
                patch(&mut doc, name, v)?;
            }
            let resolved: ExperimentConfig = doc.try_into().map_err(|e| config_error("sweep", e))?;
            let assignment: Vec<(String, f64)> = axes.iter().map(|(n, _)| n.to_string()).zip(values).collect();
            points.push(GridPoint {
                label: point_label(&assignment),
                seed: point_seed(self.base_seed, &assignment),
                axes: assignment,
                spectrum: resolved.spectrum,
                experiment: resolved.experiment,
            });
        }
        Ok(points)
    }
}

fn patch(doc: &mut toml::Value, axis: &str, value: f64) -> Result<()> {
    let location = format!("sweep.{axis}");
    let table_name = if matches!(axis, "alpha" | "beta" | "n_modes") {
        "spectrum"
    } else {
        "experiment"
    };
    let table = doc
        .get_mut(table_name)
        .and_then(|t| t.as_table_mut())
        .ok_or_else(|| config_error(&location, format!("no [{table_name}] table to sweep")))?;
    let slot = table
        .get_mut(axis)
        .ok_or_else(|| config_error(&location, format!("this kind has no scalar parameter `{axis}` set")))?;
    *slot = match slot {
        toml::Value::Integer(_) => {
            if value.fract() != 0.0 || value < 0.0 || !value.is_finite() {
                return Err(config_error(&location, format!("{value} is not a valid integer value")));
            }
            toml::Value::Integer(value as i64)
        }
        toml::Value::Float(_) => toml::Value::Float(value),
        _ => return Err(config_error(&location, "only numeric parameters can be swept")),
    };
    Ok(())
}

fn point_label(axes: &[(String, f64)]) -> String {
    if axes.is_empty() {
        return "point".into();
    }
    axes.iter().map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join("_")
}

/// `sha256(base_seed, (name, value)...)` truncated to 64 bits, so adding
/// grid points leaves existing seeds unchanged.
pub fn point_seed(base_seed: u64, axes: &[(String, f64)]) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    for (name, value) in axes {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update(value.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// One resolved grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub label: String,
    pub seed: u64,
    pub axes: Vec<(String, f64)>,
    pub spectrum: Option<SpectrumParams>,
    pub experiment: Experiment,
}

fn window(w: Option<[f64; 2]>) -> Option<(f64, f64)> {
    w.map(|[a, b]| (a, b))
}

impl GridPoint {
    fn location(&self, field: &str) -> String {
        format!("point {}: {field}", self.label)
    }

    fn table(&self) -> Result<SpectrumTable> {
        let spec = self.spectrum.as_ref().ok_or_else(|| config_error(self.location("spectrum"), "missing"))?;
        SpectrumTable::build(&spec.spec()?)
    }

    fn check(&self) -> Result<()> {
        let bad = |field: &str, e: Error| config_error(self.location(field), e);
        if let Some(s) = &self.spectrum {
            s.spec().map_err(|e| bad("spectrum", e))?;
        }
        match &self.experiment {
            Experiment::Simulate(p) => {
                self.train_config(p).validate().map_err(|e| bad("experiment", e))?;
                if p.n_seeds == 0 {
                    return Err(config_error(self.location("n_seeds"), "need at least one seed"));
                }
            }
            Experiment::Dmft(p) => self.dmft_config(p).validate().map_err(|e| bad("experiment", e))?,
            Experiment::Limit(p) => {
                if p.horizon_steps < 2 || !(p.learning_rate_per_step > 0.0) || !(p.max_flow_time > 0.0) {
                    return Err(config_error(
                        self.location("experiment"),
                        "need horizon_steps >= 2, positive learning rate and flow time",
                    ));
                }
            }
            Experiment::Chi(p) => {
                if !(p.min_time > 0.0 && p.max_time >= 1e3 * p.min_time) {
                    return Err(config_error(
                        self.location("min_time"),
                        "time grid must be positive and span three decades",
                    ));
                }
            }
            Experiment::Bottleneck(p) => {
                if p.sizes.len() < 3 || p.sizes.iter().any(|s| !(*s > 0.0)) {
                    return Err(config_error(self.location("sizes"), "need at least 3 positive sizes"));
                }
            }
            Experiment::Envelope(p) => {
                if p.model_sizes.is_empty() || p.model_sizes.iter().any(|s| !(*s >= 1.0)) {
                    return Err(config_error(self.location("model_sizes"), "need model sizes >= 1"));
                }
                if !(p.compute_min > 0.0 && p.compute_max > p.compute_min) {
                    return Err(config_error(self.location("compute_min"), "need 0 < compute_min < compute_max"));
                }
            }
            Experiment::Linearnet(p) => {
                if p.n_hidden == 0 || p.batch_size == 0 || !(p.richness > 0.0) || !(p.learning_rate_per_step > 0.0) {
                    return Err(config_error(
                        self.location("experiment"),
                        "need positive width, batch, richness and learning rate",
                    ));
                }
            }
            Experiment::ExponentTable(p) => {
                if p.alphas.is_empty() || p.betas.is_empty() {
                    return Err(config_error(self.location("alphas"), "alphas and betas must be non-empty"));
                }
                exponent_table(&p.alphas, &p.betas).map_err(|e| bad("experiment", e))?;
            }
        }
        Ok(())
    }

    fn train_config(&self, p: &SimulateParams) -> TrainConfig {
        let mut c = TrainConfig::new(p.n_params, p.batch_size, p.learning_rate_per_step, p.richness, p.steps, self.seed);
        c.checkpoints = log_checkpoints(p.steps, p.checkpoints_per_decade.max(1));
        c
    }

    fn dmft_config(&self, p: &DmftParams) -> DmftConfig {
        DmftConfig {
            n_params: p.n_params,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate_per_step,
            richness: p.richness,
            horizon: p.steps + 1,
            tol: p.tolerance,
            damping: p.damping,
            max_iter: p.max_iterations,
            max_bins: p.max_bins,
        }
    }

    /// Dominant memory of the point in bytes: time×time objects and
    /// mode-sized objects.
    pub fn estimate(&self) -> ResourceEstimate {
        let modes = self
            .spectrum
            .as_ref()
            .and_then(|s| s.spec().ok())
            .map_or(0.0, |s| s.mode_cutoff as f64);
        let f = 8.0;
        let (time, mode) = match &self.experiment {
            Experiment::Simulate(p) => {
                let per_run = (2.0 * p.n_params as f64 + p.batch_size as f64 + 4.0) * modes;
                (0.0, per_run * f)
            }
            Experiment::Dmft(p) => {
                let t = (p.steps + 1) as f64;
                // 9 kernel matrices, their damped copies and one chunk of per-bin terms
                (t * t * f * (18.0 + 4.0 * 8.0), modes * f * 4.0)
            }
            Experiment::Limit(p) => {
                let t = p.horizon_steps as f64;
                (t * t * f * 12.0, (p.max_bins as f64).powi(2) * f * 4.0 + modes * f * 4.0)
            }
            Experiment::Chi(_) => (0.0, modes * f * 4.0),
            Experiment::Bottleneck(_) => (0.0, modes * f * 4.0),
            Experiment::Envelope(p) => (0.0, (p.max_bins as f64).powi(2) * f * 4.0 + modes * f * 4.0),
            Experiment::Linearnet(p) => (0.0, (2.0 * p.n_hidden as f64 + p.batch_size as f64 + 4.0) * modes * f),
            Experiment::ExponentTable(p) => (0.0, (p.alphas.len() * p.betas.len()) as f64 * 80.0),
        };
        ResourceEstimate {
            time_matrix_bytes: time as u64,
            mode_bytes: mode as u64,
        }
    }

    fn run(&self, dir: &Path) -> Result<BTreeMap<String, f64>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut metrics = BTreeMap::new();
        match &self.experiment {
            Experiment::Simulate(p) => {
                let table = self.table()?;
                let config = self.train_config(p);
                let traj = match p.n_samples {
                    Some(n) => run_ensemble_with(&config, p.n_seeds, |c| run_offline(&table, c, n))?,
                    None => run_ensemble(&table, &config, p.n_seeds)?,
                };
                finish_curve(&traj, window(p.fit_window_steps), dir, &mut metrics)?;
            }
            Experiment::Dmft(p) => {
                let table = self.table()?;
                let sol = solve_dmft(&table, &self.dmft_config(p))?;
                metrics.insert("iterations".into(), sol.iterations as f64);
                metrics.insert("residual".into(), sol.residual_history.last().copied().unwrap_or(0.0));
                if p.write_kernels {
                    for name in ["c0", "c2", "c3", "cw", "r3"] {
                        write_file(&dir.join(format!("{name}.csv")), |w| sol.kernels.write_matrix_csv(name, w))?;
                    }
                }
                finish_curve(&sol.trajectory()?, window(p.fit_window_steps), dir, &mut metrics)?;
            }
            Experiment::Limit(p) => {
                let table = self.table()?;
                let curve = limit_curve(
                    &table,
                    &CurveConfig {
                        learning_rate: p.learning_rate_per_step,
                        richness: p.richness,
                        horizon: p.horizon_steps,
                        t_max: p.max_flow_time,
                        max_bins: p.max_bins,
                        points_per_decade: p.points_per_decade,
                    },
                )?;
                finish_curve(&curve, window(p.fit_window_flow_time), dir, &mut metrics)?;
            }
            Experiment::Chi(p) => {
                let table = self.table()?;
                let beta = self.spectrum.as_ref().map_or(f64::NAN, |s| s.beta);
                let mut config = ChiConfig::new(p.richness, log_grid(p.min_time, p.max_time, p.points_per_decade));
                config.tol = p.tolerance;
                config.damping = p.damping;
                config.max_iter = p.max_iterations;
                let sol = solve_chi(&table, &config)?;
                let levels = bootstrap_chi(beta, p.bootstrap_levels);
                write_file(&dir.join("bootstrap.csv"), |w| {
                    writeln!(w, "level,chi")?;
                    levels.iter().enumerate().try_for_each(|(i, c)| writeln!(w, "{i},{c:e}"))
                })?;
                metrics.insert("chi".into(), sol.chi);
                metrics.insert("chi_closed".into(), chi_closed(beta));
                metrics.insert("bootstrap_last".into(), *levels.last().expect("level 0 always present"));
                metrics.insert("iterations".into(), sol.history.len() as f64);
            }
            Experiment::Bottleneck(p) => {
                let table = self.table()?;
                let report = bottleneck_scan(&table, p.resource, &p.sizes)?;
                write_file(&dir.join("bottleneck.csv"), |w| report.write_csv(w))?;
                metrics.insert("r_slope".into(), report.r_slope());
                metrics.insert("loss_slope".into(), report.loss_slope());
            }
            Experiment::Envelope(p) => {
                let table = self.table()?;
                let grid = limit_loss_grid(
                    &table,
                    p.richness,
                    &p.model_sizes,
                    p.max_flow_time,
                    p.points_per_decade,
                    p.max_bins,
                )?;
                write_file(&dir.join("curves.csv"), |w| {
                    writeln!(w, "N,time,loss")?;
                    for (n, c) in &grid.curves {
                        for (t, l) in c.times.iter().zip(&c.loss) {
                            writeln!(w, "{n},{t:e},{l:e}")?;
                        }
                    }
                    Ok(())
                })?;
                let env = compute_optimal_envelope(&grid.curves, &log_grid(p.compute_min, p.compute_max, p.compute_per_decade))?;
                write_file(&dir.join("envelope.csv"), |w| env.write_csv(w))?;
                let fit = env.fit(window(p.fit_window_compute))?;
                let spec = self.spectrum.as_ref().expect("checked");
                let mode = if p.richness > 0.0 { LearningMode::Rich } else { LearningMode::Lazy };
                metrics.insert("compute_exponent".into(), fit.exponent);
                metrics.insert("compute_exponent_stderr".into(), fit.stderr);
                metrics.insert("predicted_exponent".into(), compute_optimal_exponent(spec.alpha, spec.beta, mode)?.0);
                write_fits(dir, &[("compute", &fit)])?;
            }
            Experiment::Linearnet(p) => {
                let table = self.table()?;
                let mut config = LinearNetConfig::new(
                    p.n_hidden,
                    p.richness,
                    p.learning_rate_per_step,
                    p.batch_size,
                    p.steps,
                    self.seed,
                );
                config.checkpoints = log_checkpoints(p.steps, p.checkpoints_per_decade.max(1));
                let run = train_linearnet(&table, &config)?;
                write_file(&dir.join("linearnet.csv"), |w| run.write_csv(w))?;
                let loss_fit = fit_power_law(&run.loss, window(p.fit_window_steps))?;
                let spike_fit = spike_growth_exponent(&run.spike, window(p.fit_window_steps))?;
                metrics.insert("loss_exponent".into(), loss_fit.exponent);
                metrics.insert("spike_exponent".into(), spike_fit.exponent);
                metrics.insert("final_loss".into(), *run.loss.loss.last().expect("step 0 recorded"));
                write_fits(dir, &[("loss", &loss_fit), ("spike", &spike_fit)])?;
            }
            Experiment::ExponentTable(p) => {
                let rows = exponent_table(&p.alphas, &p.betas)?;
                write_file(&dir.join("exponent_table.csv"), |w| write_exponent_table(&rows, w))?;
                metrics.insert("rows".into(), rows.len() as f64);
            }
        }
        Ok(metrics)
    }
}

fn finish_curve(
    traj: &LossTrajectory,
    window: Option<(f64, f64)>,
    dir: &Path,
    metrics: &mut BTreeMap<String, f64>,
) -> Result<()> {
    traj.export(&dir.join("loss.csv"))?;
    if let Some(l) = traj.loss.last() {
        metrics.insert("final_loss".into(), *l);
    }
    // short curves have nothing to fit; the CSV is still useful
    if let Ok(fit) = fit_power_law(traj, window) {
        metrics.insert("loss_exponent".into(), fit.exponent);
        metrics.insert("loss_exponent_stderr".into(), fit.stderr);
        write_fits(dir, &[("loss", &fit)])?;
    }
    Ok(())
}

fn write_fits(dir: &Path, fits: &[(&str, &FitResult)]) -> Result<()> {
    let map: BTreeMap<&str, &FitResult> = fits.iter().copied().collect();
    let path = dir.join("fit.json");
    fs::write(&path, serde_json::to_string_pretty(&map)? + "\n").map_err(|e| Error::io(&path, e))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub time_matrix_bytes: u64,
    pub mode_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub label: String,
    pub seed: u64,
    pub estimate: ResourceEstimate,
}

/// Dry-run result of [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub kind: String,
    pub fingerprint: String,
    pub points: Vec<PointEstimate>,
    pub peak_bytes: u64,
}

pub fn validate(config: &ExperimentConfig) -> Result<ValidationReport> {
    config.check()?;
    let points: Vec<PointEstimate> = config
        .grid()?
        .into_iter()
        .map(|p| PointEstimate {
            estimate: p.estimate(),
            label: p.label,
            seed: p.seed,
        })
        .collect();
    let peak_bytes = points
        .iter()
        .map(|p| p.estimate.time_matrix_bytes + p.estimate.mode_bytes)
        .max()
        .unwrap_or(0);
    Ok(ValidationReport {
        kind: config.experiment.kind().into(),
        fingerprint: config.fingerprint()?,
        points,
        peak_bytes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub label: String,
    pub seed: u64,
    pub axes: BTreeMap<String, f64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub kind: String,
    pub config_sha256: String,
    pub base_seed: u64,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub points: Vec<PointRecord>,
    pub files: Vec<FileRecord>,
}

impl RunManifest {
    pub fn failed(&self) -> usize {
        self.points.iter().filter(|p| !p.ok).count()
    }
}

/// Runs every grid point on a pool of `threads` workers (0 = all cores).
/// Point failures are recorded and the sweep continues.
pub fn run(config: &ExperimentConfig, out_dir: &Path, threads: usize) -> Result<RunManifest> {
    config.check()?;
    let started = Instant::now();
    let started_unix_seconds = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config_path = out_dir.join("config.toml");
    fs::write(&config_path, config.to_toml_string()?).map_err(|e| Error::io(&config_path, e))?;
    let grid = config.grid()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| config_error("--threads", e))?;
    let records: Vec<PointRecord> = pool.install(|| {
        grid.par_iter()
            .map(|point| {
                let outcome = point.run(&out_dir.join(&point.label));
                let (ok, error, metrics) = match outcome {
                    Ok(m) => (true, None, m),
                    Err(e) => (false, Some(e.to_string()), BTreeMap::new()),
                };
                PointRecord {
                    label: point.label.clone(),
                    seed: point.seed,
                    axes: point.axes.iter().cloned().collect(),
                    ok,
                    error,
                    metrics,
                }
            })
            .collect()
    });
    write_summary(out_dir, &records)?;
    let summary_path = out_dir.join(SUMMARY_JSON);
    fs::write(&summary_path, serde_json::to_string_pretty(&records)? + "\n")
        .map_err(|e| Error::io(&summary_path, e))?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        kind: config.experiment.kind().into(),
        config_sha256: config.fingerprint()?,
        base_seed: config.base_seed,
        started_unix_seconds,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        points: records,
        files: inventory(out_dir)?,
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// `summary.csv`: one row per point with its axes and metrics.
fn write_summary(out_dir: &Path, records: &[PointRecord]) -> Result<()> {
    let axes: BTreeSet<&String> = records.iter().flat_map(|r| r.axes.keys()).collect();
    let metrics: BTreeSet<&String> = records.iter().flat_map(|r| r.metrics.keys()).collect();
    write_file(&out_dir.join("summary.csv"), |w| {
        let mut header = vec!["point".to_string(), "seed".into(), "status".into()];
        header.extend(axes.iter().map(|a| a.to_string()));
        header.extend(metrics.iter().map(|m| m.to_string()));
        writeln!(w, "{}", header.join(","))?;
        for r in records {
            let mut row = vec![r.label.clone(), r.seed.to_string(), if r.ok { "ok" } else { "failed" }.into()];
            row.extend(axes.iter().map(|a| r.axes.get(*a).map_or(String::new(), |v| v.to_string())));
            row.extend(metrics.iter().map(|m| r.metrics.get(*m).map_or(String::new(), |v| format!("{v:e}"))));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })
}

/// Every file under `dir` except the manifest, with checksums, sorted.
pub fn inventory(dir: &Path) -> Result<Vec<FileRecord>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).expect("walk stays inside dir");
            if rel == Path::new(MANIFEST_FILE) {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            out.push(FileRecord {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Human-readable summary of a finished run directory.
pub fn report(out_dir: &Path) -> Result<String> {
    let path = out_dir.join(SUMMARY_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let records: Vec<PointRecord> = serde_json::from_str(&text)?;
    let mut s = String::new();
    for r in &records {
        let status = if r.ok { "ok" } else { "FAILED" };
        s.push_str(&format!("{} [{status}] seed {}\n", r.label, r.seed));
        if let Some(e) = &r.error {
            s.push_str(&format!("    error: {e}\n"));
        }
        for (k, v) in &r.metrics {
            s.push_str(&format!("    {k:<26} {v:.6}\n"));
        }
        let fit = out_dir.join(&r.label).join("fit.json");
        if let Ok(text) = fs::read_to_string(&fit) {
            let fits: BTreeMap<String, FitResult> = serde_json::from_str(&text)?;
            for (name, f) in fits {
                s.push_str(&format!(
                    "    fit {name:<10} exponent {:.4} ± {:.4} over [{:e}, {:e}] ({} points)\n",
                    f.exponent, f.stderr, f.window.0, f.window.1, f.n_points
                ));
            }
        }
    }
    let failed = records.iter().filter(|r| !r.ok).count();
    s.push_str(&format!("{} points, {failed} failed\n", records.len()));
    Ok(s)
}

/// Output directory: explicit override, else the config's.
pub fn resolve_output(config: &ExperimentConfig, over: Option<&Path>) -> Result<PathBuf> {
    over.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| config_error("output_dir", "no output directory in the config or on the command line"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIM: &str = r#"
base_seed = 7

[spectrum]
alpha = 2.0
beta = 0.5
n_modes = 64

[experiment]
kind = "simulate"
n_params = 16
batch_size = 8
learning_rate_per_step = 0.2
richness = 0.5
steps = 20
n_seeds = 2

[sweep]
richness = [0.0, 0.5]
n_params = [8, 16]
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = ExperimentConfig::from_toml_str(SIM).unwrap();
        assert_eq!(c.experiment.kind(), "simulate");
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.fingerprint().unwrap(), again.fingerprint().unwrap());
    }

    #[test]
    fn grid_is_cartesian_with_stable_seeds() {
        let c = ExperimentConfig::from_toml_str(SIM).unwrap();
        let g = c.grid().unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g[1].label, "n_params=8_richness=0.5");
        match &g[1].experiment {
            Experiment::Simulate(p) => assert_eq!((p.n_params, p.richness), (8, 0.5)),
            _ => unreachable!(),
        }
        let mut wider = c.clone();
        wider.sweep.get_mut("richness").unwrap().push(1.0);
        let g2 = wider.grid().unwrap();
        for p in &g {
            assert_eq!(g2.iter().find(|q| q.label == p.label).unwrap().seed, p.seed);
        }
    }

    #[test]
    fn errors_carry_locations() {
        let e = ExperimentConfig::from_toml_str("base_seed = 1\n[experiment]\nkind = \"chi\"\nrichnes = 1.0\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref location, .. } if location.starts_with("line")), "{e}");
        let bad_axis = SIM.replace("n_params = [8, 16]", "depth = [1, 2]");
        let e = ExperimentConfig::from_toml_str(&bad_axis).unwrap_err();
        assert!(matches!(e, Error::Config { ref location, .. } if location == "sweep.depth"), "{e}");
        let empty = SIM.replace("n_params = [8, 16]", "n_params = []");
        assert!(ExperimentConfig::from_toml_str(&empty).is_err());
        let frac = SIM.replace("n_params = [8, 16]", "n_params = [8.5]");
        assert!(ExperimentConfig::from_toml_str(&frac).is_err());
    }

    #[test]
    fn spectrum_presence_matches_kind() {
        let table_only = "[experiment]\nkind = \"exponent-table\"\nalphas = [2.0]\nbetas = [0.5]\n";
        assert!(ExperimentConfig::from_toml_str(table_only).is_ok());
        let with_spec = format!("[spectrum]\nalpha = 2.0\nbeta = 0.5\n{table_only}");
        assert!(ExperimentConfig::from_toml_str(&with_spec).is_err());
        let chi = "[experiment]\nkind = \"chi\"\nrichness = 1.0\nmin_time = 1.0\nmax_time = 1e4\n";
        assert!(ExperimentConfig::from_toml_str(chi).is_err());
    }

    #[test]
    fn run_writes_manifest_last_and_complete() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig::from_toml_str(SIM).unwrap();
        let m = run(&c, dir.path(), 2).unwrap();
        assert_eq!(m.failed(), 0);
        let listed: BTreeSet<String> = m.files.iter().map(|f| f.path.clone()).collect();
        let actual: BTreeSet<String> = inventory(dir.path()).unwrap().into_iter().map(|f| f.path).collect();
        assert_eq!(listed, actual);
        assert!(listed.contains("n_params=16_richness=0/loss.csv"));
        assert!(report(dir.path()).unwrap().contains("4 points, 0 failed"));
    }

    #[test]
    fn failing_point_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        // 4 modes cannot support a model of size 8
        let text = "[spectrum]\nalpha = 2.0\nbeta = 0.5\nn_modes = 4\n[experiment]\nkind = \"bottleneck\"\nresource = \"params\"\nsizes = [1.0, 2.0, 8.0]\n";
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        let m = run(&c, dir.path(), 1).unwrap();
        assert_eq!(m.failed(), 1);
        assert!(m.points[0].error.is_some());
    }

    #[test]
    fn validate_estimates_time_matrices() {
        let text = "[spectrum]\nalpha = 2.0\nbeta = 0.5\nn_modes = 64\n[experiment]\nkind = \"dmft\"\nn_params = 64.0\nbatch_size = inf\nlearning_rate_per_step = 0.1\nrichness = 0.0\nsteps = 99\n";
        let r = validate(&ExperimentConfig::from_toml_str(text).unwrap()).unwrap();
        assert_eq!(r.points.len(), 1);
        assert!(r.points[0].estimate.time_matrix_bytes >= 100 * 100 * 8);
    }
}
