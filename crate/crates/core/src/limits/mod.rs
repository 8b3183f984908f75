//! Deterministic limits of the mean-field equations: infinite width and batch,
//! the Markovian gradient-flow form, the rich-regime time exponent and the
//! finite-width and finite-data bottlenecks.

mod bottleneck;
mod chi;
mod curve;
mod infinite;
mod markov;

pub use bottleneck::{
    asymptotic_loss_vs_n, asymptotic_loss_vs_p, bottleneck_scan, limiting_loss, solve_bottleneck_root, solve_r1,
    solve_r3, BottleneckReport, Resource,
};
pub use chi::{bootstrap_chi, solve_chi, ChiConfig, ChiSolution};
pub use curve::{limit_curve, limit_loss_grid, CurveConfig, LimitGrid};
pub use infinite::{solve_infinite_limit, LimitConfig, LimitSolution};
pub use markov::{integrate_markovian, integrate_markovian_at, log_times, DtPolicy, MarkovConfig, MarkovTrace};
