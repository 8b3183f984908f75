//! Online SGD ensembles of the random-feature model, lazy against rich.

use scaling_dmft::analysis::fit_power_law;
use scaling_dmft::simulator::{run_ensemble, TrainConfig};
use scaling_dmft::spectra::{SourceCapacitySpec, SpectrumTable};

fn main() -> scaling_dmft::Result<()> {
    let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.4, 1024)?)?;
    for richness in [0.0, 1.0] {
        let config = TrainConfig::new(512, 32, 0.2, richness, 2000, 1);
        let ens = run_ensemble(&table, &config, 8)?;
        let fit = fit_power_law(&ens, Some((100.0, 2000.0)))?;
        println!(
            "gamma={richness}: final loss {:.4e} ± {:.1e}, exponent over [100, 2000] = {:.3}",
            ens.loss.last().unwrap(),
            ens.stderr.last().unwrap(),
            fit.exponent
        );
    }
    Ok(())
}
