//! The self-consistent time exponent against its closed form and the
//! bootstrap series.

use scaling_dmft::analysis::log_grid;
use scaling_dmft::exponents::chi_closed;
use scaling_dmft::limits::{bootstrap_chi, solve_chi, ChiConfig};
use scaling_dmft::spectra::{SourceCapacitySpec, SpectrumTable};

fn main() -> scaling_dmft::Result<()> {
    for beta in [0.25, 0.4, 0.5, 0.75] {
        let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, beta, 1_000_000)?)?;
        let sol = solve_chi(&table, &ChiConfig::new(1.0, log_grid(1.0, 1e6, 8)))?;
        let series = bootstrap_chi(beta, 30);
        println!(
            "beta={beta}: solved {:.4}, closed form {:.4}, bootstrap levels 0..3 {:?}",
            sol.chi,
            chi_closed(beta),
            &series[..4]
        );
    }
    Ok(())
}
