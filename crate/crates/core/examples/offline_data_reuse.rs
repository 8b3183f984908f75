//! Full-batch training on P fixed samples plateaus at the data-bottleneck
//! floor.

use scaling_dmft::limits::asymptotic_loss_vs_p;
use scaling_dmft::simulator::{run_ensemble_with, run_offline, TrainConfig};
use scaling_dmft::spectra::{SourceCapacitySpec, SpectrumTable};

fn main() -> scaling_dmft::Result<()> {
    let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.5, 512)?)?;
    for p in [16, 32, 64] {
        let mut config = TrainConfig::new(512, 1, 0.5, 0.0, 5000, 3);
        config.checkpoints = vec![0, 500, 5000];
        let ens = run_ensemble_with(&config, 8, |c| run_offline(&table, c, p))?;
        println!(
            "P={p}: loss at steps {:?} = {:.4e}, {:.4e}; floor {:.4e}",
            config.checkpoints[1..].to_vec(),
            ens.loss[1],
            ens.loss[2],
            asymptotic_loss_vs_p(&table, p as f64)?
        );
    }
    Ok(())
}
