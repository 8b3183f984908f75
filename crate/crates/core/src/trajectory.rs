//! Loss curves with optional ensemble statistics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Test loss sampled at increasing times.
///
/// `times` are training steps for simulations and `η·step` or flow time for
/// the deterministic solvers. `stderr` is zero for single runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrajectory {
    pub times: Vec<f64>,
    pub loss: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_seeds: usize,
    /// Free-form description of the producing run.
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl LossTrajectory {
    pub fn new(times: Vec<f64>, loss: Vec<f64>) -> Result<Self> {
        let n = times.len();
        Self::with_stats(times, loss, vec![0.0; n], 1)
    }

    pub fn with_stats(times: Vec<f64>, loss: Vec<f64>, stderr: Vec<f64>, n_seeds: usize) -> Result<Self> {
        if times.len() != loss.len() || times.len() != stderr.len() {
            return Err(Error::invalid("trajectory columns differ in length"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("trajectory times must increase"));
        }
        if loss.iter().any(|l| l.is_nan() || *l < 0.0) {
            return Err(Error::invalid("losses must be nonnegative"));
        }
        Ok(Self {
            times,
            loss,
            stderr,
            n_seeds,
            meta: serde_json::Value::Null,
        })
    }

    pub fn with_meta(mut self, meta: serde_json::Value) -> Self {
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Loss at time `t` by linear interpolation of `log L` in `log t`.
    /// `None` outside the sampled range.
    pub fn interpolate(&self, t: f64) -> Option<f64> {
        let first = *self.times.first()?;
        let last = *self.times.last()?;
        if !(t >= first && t <= last) {
            return None;
        }
        let hi = self.times.partition_point(|&x| x < t);
        if self.times[hi] == t {
            return Some(self.loss[hi]);
        }
        let lo = hi - 1;
        let (t0, t1) = (self.times[lo], self.times[hi]);
        let (l0, l1) = (self.loss[lo], self.loss[hi]);
        if t0 <= 0.0 || l0 <= 0.0 || l1 <= 0.0 {
            let f = (t - t0) / (t1 - t0);
            return Some(l0 + f * (l1 - l0));
        }
        let f = (t / t0).ln() / (t1 / t0).ln();
        Some((l0.ln() + f * (l1 / l0).ln()).exp())
    }

    /// CSV with header `step,loss_mean,loss_stderr,n_seeds`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "step,loss_mean,loss_stderr,n_seeds")?;
        for ((t, l), s) in self.times.iter().zip(&self.loss).zip(&self.stderr) {
            writeln!(out, "{},{:e},{:e},{}", format_time(*t), l, s, self.n_seeds)?;
        }
        Ok(())
    }

    /// Writes `path` as CSV and `path` with a `.json` extension holding `meta`.
    pub fn export(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
        let side = path.with_extension("json");
        let text = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }
}

/// Integers print without a fractional part so step columns stay integral.
pub(crate) fn format_time(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t:e}")
    }
}

/// Sorted, unique log-spaced integer checkpoints in `[0, steps]`, always
/// including both ends.
pub fn log_checkpoints(steps: usize, per_decade: usize) -> Vec<usize> {
    let mut out = vec![0];
    if steps == 0 {
        return out;
    }
    let decades = (steps as f64).log10();
    let n = ((decades * per_decade as f64).ceil() as usize).max(1);
    out.extend((0..=n).map(|i| 10f64.powf(decades * i as f64 / n as f64).round() as usize));
    out.push(steps);
    out.sort_unstable();
    out.dedup();
    out.retain(|&s| s <= steps);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_exact_on_power_laws() {
        let times: Vec<f64> = (0..10).map(|i| 2f64.powi(i)).collect();
        let loss: Vec<f64> = times.iter().map(|t| 5.0 * t.powf(-0.7)).collect();
        let tr = LossTrajectory::new(times, loss).unwrap();
        let v = tr.interpolate(3.0).unwrap();
        assert!((v - 5.0 * 3f64.powf(-0.7)).abs() < 1e-12);
        assert!(tr.interpolate(0.5).is_none());
        assert!(tr.interpolate(1024.0).is_none());
    }

    #[test]
    fn checkpoints_cover_both_ends() {
        let c = log_checkpoints(1000, 8);
        assert_eq!(c[0], 0);
        assert_eq!(*c.last().unwrap(), 1000);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(log_checkpoints(0, 8), vec![0]);
    }

    #[test]
    fn rejects_bad_columns() {
        assert!(LossTrajectory::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(LossTrajectory::new(vec![1.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(LossTrajectory::new(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn csv_keeps_integer_steps() {
        let tr = LossTrajectory::new(vec![0.0, 10.0], vec![1.0, 0.5]).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("step,loss_mean,loss_stderr,n_seeds\n0,"));
        assert!(s.contains("\n10,5e-1,0e0,1"));
    }
}
