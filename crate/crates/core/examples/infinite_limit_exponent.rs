//! Infinite-width loss curves in the lazy and rich regimes and their
//! late-time exponents.

use scaling_dmft::analysis::fit_power_law;
use scaling_dmft::exponents::chi_closed;
use scaling_dmft::limits::{limit_curve, CurveConfig};
use scaling_dmft::spectra::{SourceCapacitySpec, SpectrumTable};

fn main() -> scaling_dmft::Result<()> {
    for beta in [0.4, 1.2] {
        let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, beta, 200_000)?)?;
        for richness in [0.0, 0.75] {
            let config = CurveConfig {
                richness,
                horizon: 256,
                t_max: 1e4,
                ..Default::default()
            };
            let curve = limit_curve(&table, &config)?;
            let fit = fit_power_law(&curve, None)?;
            println!(
                "beta={beta} gamma={richness}: exponent {:.3} (lazy {beta}, rich {:.3})",
                fit.exponent,
                chi_closed(beta)
            );
        }
    }
    Ok(())
}
