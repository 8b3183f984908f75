//! Two-layer linear network: loss and readout spike below and above
//! beta = 1.

use scaling_dmft::analysis::fit_power_law;
use scaling_dmft::linearnet::{spike_growth_exponent, train_linearnet, LinearNetConfig};
use scaling_dmft::spectra::{SourceCapacitySpec, SpectrumTable};

fn main() -> scaling_dmft::Result<()> {
    let window = Some((200.0, 20000.0));
    for beta in [0.5, 1.5] {
        let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, beta, 1024)?)?;
        let run = train_linearnet(&table, &LinearNetConfig::new(128, 2.0, 0.05, 16, 20000, 1))?;
        println!(
            "beta={beta}: loss exponent {:.3}, spike exponent {:.3}, final spike {:.3}",
            fit_power_law(&run.loss, window)?.exponent,
            spike_growth_exponent(&run.spike, window)?.exponent,
            run.spike.spike.last().unwrap()
        );
    }
    Ok(())
}
