//! Compute-optimal frontier from finite-width limit loss curves.

use scaling_dmft::analysis::{compute_optimal_envelope, log_grid};
use scaling_dmft::exponents::{compute_optimal_exponent, LearningMode};
use scaling_dmft::limits::limit_loss_grid;
use scaling_dmft::spectra::{SourceCapacitySpec, SpectrumTable};

fn main() -> scaling_dmft::Result<()> {
    let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.5, 1_000_000)?)?;
    let sizes = log_grid(16.0, 1e4, 8);
    for (richness, mode) in [(0.0, LearningMode::Lazy), (0.75, LearningMode::Rich)] {
        let grid = limit_loss_grid(&table, richness, &sizes, 1e7, 16, 128)?;
        let env = compute_optimal_envelope(&grid.curves, &log_grid(1e3, 1e10, 16))?;
        let fit = env.fit(Some((1e6, 1e9)))?;
        let (predicted, _) = compute_optimal_exponent(2.0, 0.5, mode)?;
        println!("gamma={richness}: fitted {:.4}, predicted {predicted:.4}", fit.exponent);
        let mid = env.compute.len() / 2;
        println!("    at C={:.1e}: N*={} t*={:.1e} L*={:.3e}", env.compute[mid], env.n_star[mid], env.t_star[mid], env.loss_star[mid]);
    }
    Ok(())
}
