//! Closed-form exponent predictions and task-regime classification.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    Hard,
    Easy,
    SuperEasy,
}

impl RegimeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::Hard => "hard",
            RegimeLabel::Easy => "easy",
            RegimeLabel::SuperEasy => "super_easy",
        }
    }
}

/// Regime of `(α, β)` with the two thresholds `β = 1` and `β = 2 - 1/α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub label: RegimeLabel,
    /// `β` sits exactly on a threshold; the harder side was chosen.
    pub boundary: bool,
    pub easy_threshold: f64,
    pub super_easy_threshold: f64,
}

pub fn classify(alpha: f64, beta: f64) -> Result<Regime> {
    check(alpha, beta)?;
    let upper = 2.0 - 1.0 / alpha;
    let (label, boundary) = if beta <= 1.0 {
        (RegimeLabel::Hard, beta == 1.0)
    } else if beta <= upper {
        (RegimeLabel::Easy, beta == upper)
    } else {
        (RegimeLabel::SuperEasy, false)
    };
    Ok(Regime {
        label,
        boundary,
        easy_threshold: 1.0,
        super_easy_threshold: upper,
    })
}

fn check(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must exceed 1, got {alpha}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningMode {
    Lazy,
    Rich,
}

/// Speed-up of time exponents from feature learning, `max{1, 2/(1+β)}`.
pub fn rich_factor(beta: f64) -> f64 {
    (2.0 / (1.0 + beta)).max(1.0)
}

fn time_factor(beta: f64, mode: LearningMode) -> f64 {
    match mode {
        LearningMode::Lazy => 1.0,
        LearningMode::Rich => rich_factor(beta),
    }
}

/// `χ = β max{1, 2/(1+β)}`.
pub fn chi_closed(beta: f64) -> f64 {
    beta * rich_factor(beta)
}

/// Four-term surrogate with unit prefactors:
/// `t^{-χ} + N^{-α min(2,β)} + t^{-(1-1/α)f}/N + (η/B) t^{-(2-1/α)f}`,
/// with `f = 1` (lazy) or `max{1, 2/(1+β)}` (rich). Infinite `N` or `B`
/// drop their terms.
#[allow(clippy::too_many_arguments)]
pub fn loss_surrogate(
    t: f64,
    n: f64,
    b: f64,
    eta: f64,
    alpha: f64,
    beta: f64,
    mode: LearningMode,
) -> Result<f64> {
    check(alpha, beta)?;
    if !(t > 0.0 && n > 0.0 && b > 0.0 && eta > 0.0) {
        return Err(Error::invalid("t, N, B and eta must be positive"));
    }
    let f = time_factor(beta, mode);
    let flow = t.powf(-beta * f);
    let floor = n.powf(-alpha * beta.min(2.0));
    let finite_n = t.powf(-(1.0 - 1.0 / alpha) * f) / n;
    let sgd = eta / b * t.powf(-(2.0 - 1.0 / alpha) * f);
    Ok(flow + floor + finite_n + sgd)
}

/// Compute-optimal exponent `r_C` in `L⋆ ∼ C^{-r_C}`.
pub fn compute_optimal_exponent(alpha: f64, beta: f64, mode: LearningMode) -> Result<(f64, Regime)> {
    let regime = classify(alpha, beta)?;
    let r = match (regime.label, mode) {
        (RegimeLabel::Hard, LearningMode::Lazy) => alpha * beta / (alpha + 1.0),
        (RegimeLabel::Hard, LearningMode::Rich) => 2.0 * alpha * beta / (alpha * (1.0 + beta) + 2.0),
        (RegimeLabel::Easy, _) => alpha * beta / (alpha * beta + 1.0),
        (RegimeLabel::SuperEasy, _) => 1.0 - 1.0 / (2.0 * alpha),
    };
    Ok((r, regime))
}

/// `(finite-N, SGD)` transient exponents in the rich regime.
pub fn transient_exponents(alpha: f64, beta: f64) -> Result<(f64, f64)> {
    check(alpha, beta)?;
    let f = rich_factor(beta);
    Ok(((1.0 - 1.0 / alpha) * f, (2.0 - 1.0 / alpha) * f))
}

/// Index of the mode being learned at time `t`, `t^{(2-χ)/α}`.
pub fn mode_frontier(alpha: f64, chi: f64, t: f64) -> f64 {
    t.powf((2.0 - chi) / alpha)
}

/// All predicted exponents for one `(α, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub alpha: f64,
    pub beta: f64,
    pub regime: Regime,
    pub chi: f64,
    pub model_bottleneck: f64,
    pub finite_n_transient: f64,
    pub sgd_transient: f64,
    pub compute_lazy: f64,
    pub compute_rich: f64,
}

impl ExponentReport {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let (compute_lazy, regime) = compute_optimal_exponent(alpha, beta, LearningMode::Lazy)?;
        let (compute_rich, _) = compute_optimal_exponent(alpha, beta, LearningMode::Rich)?;
        let (finite_n_transient, sgd_transient) = transient_exponents(alpha, beta)?;
        Ok(Self {
            alpha,
            beta,
            regime,
            chi: chi_closed(beta),
            model_bottleneck: alpha * beta.min(2.0),
            finite_n_transient,
            sgd_transient,
            compute_lazy,
            compute_rich,
        })
    }
}

pub const EXPONENT_TABLE_HEADER: &str =
    "alpha,beta,regime,boundary,chi,model_bottleneck,finite_n_transient,sgd_transient,r_c_lazy,r_c_rich";

/// One row per `(α, β)` pair, α outer.
pub fn exponent_table(alphas: &[f64], betas: &[f64]) -> Result<Vec<ExponentReport>> {
    alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| ExponentReport::new(a, b)))
        .collect()
}

pub fn write_exponent_table(rows: &[ExponentReport], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{EXPONENT_TABLE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.alpha,
            r.beta,
            r.regime.label.as_str(),
            r.regime.boundary,
            r.chi,
            r.model_bottleneck,
            r.finite_n_transient,
            r.sgd_transient,
            r.compute_lazy,
            r.compute_rich
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_branches() {
        assert!((chi_closed(0.4) - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(chi_closed(1.0), 1.0);
        assert_eq!(chi_closed(1.2), 1.2);
    }

    #[test]
    fn table_entries() {
        let (r, reg) = compute_optimal_exponent(2.0, 0.5, LearningMode::Rich).unwrap();
        assert!((r - 0.4).abs() < 1e-15);
        assert_eq!(reg.label, RegimeLabel::Hard);
        let (r, _) = compute_optimal_exponent(2.0, 0.5, LearningMode::Lazy).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
        for mode in [LearningMode::Lazy, LearningMode::Rich] {
            let (r, reg) = compute_optimal_exponent(2.0, 1.25, mode).unwrap();
            assert!((r - 2.5 / 3.5).abs() < 1e-15);
            assert_eq!(reg.label, RegimeLabel::Easy);
            let (r, reg) = compute_optimal_exponent(2.0, 1.75, mode).unwrap();
            assert_eq!(r, 0.75);
            assert_eq!(reg.label, RegimeLabel::SuperEasy);
        }
    }

    #[test]
    fn boundaries_take_harder_side() {
        let r = classify(2.0, 1.0).unwrap();
        assert_eq!((r.label, r.boundary), (RegimeLabel::Hard, true));
        let r = classify(2.0, 1.5).unwrap();
        assert_eq!((r.label, r.boundary), (RegimeLabel::Easy, true));
        assert!(!classify(2.0, 1.2).unwrap().boundary);
        assert!(classify(1.0, 0.5).is_err());
        assert!(classify(2.0, 0.0).is_err());
    }

    #[test]
    fn surrogate_limits() {
        let inf = f64::INFINITY;
        let v = loss_surrogate(1e4, inf, inf, 1.0, 2.0, 0.5, LearningMode::Rich).unwrap();
        assert!((v / 10f64.powf(-8.0 / 3.0) - 1.0).abs() < 1e-12);
        let v = loss_surrogate(1e300, 100.0, 1.0, 1.0, 2.0, 0.5, LearningMode::Lazy).unwrap();
        assert!((v / 100f64.powf(-1.0) - 1.0).abs() < 1e-12);
        let a = loss_surrogate(7.0, 9.0, 3.0, 0.2, 2.0, 1.2, LearningMode::Lazy).unwrap();
        let b = loss_surrogate(7.0, 9.0, 3.0, 0.2, 2.0, 1.2, LearningMode::Rich).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transients_and_frontier() {
        let (n, s) = transient_exponents(2.0, 0.5).unwrap();
        assert!((n - 2.0 / 3.0).abs() < 1e-15 && (s - 2.0).abs() < 1e-15);
        assert_eq!(transient_exponents(2.0, 1.2).unwrap(), (0.5, 1.5));
        assert!((mode_frontier(2.0, 1.0, 1e4) - 100.0).abs() < 1e-9);
        let k = mode_frontier(2.0, 2.0 / 3.0, 1e4);
        assert!((k.log10() - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn table_csv_rows() {
        let rows = exponent_table(&[1.5, 2.0], &[0.5, 1.25]).unwrap();
        assert_eq!(rows.len(), 4);
        let mut buf = Vec::new();
        write_exponent_table(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(3).unwrap().starts_with("2,0.5,hard,false,"));
    }
}
