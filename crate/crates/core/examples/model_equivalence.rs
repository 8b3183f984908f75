//! The (w, A) model and its (w, B) reparameterization give the same loss
//! under shared randomness.

use scaling_dmft::analysis::compare_curves;
use scaling_dmft::simulator::{run_b_parameterized, run_online, TrainConfig};
use scaling_dmft::spectra::{SourceCapacitySpec, SpectrumTable};

fn main() -> scaling_dmft::Result<()> {
    let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.5, 256)?)?;
    let mut config = TrainConfig::new(64, 16, 0.2, 0.75, 200, 9);
    config.checkpoints = (0..=200).collect();
    let a = run_online(&table, &config)?;
    let b = run_b_parameterized(&table, &config)?;
    println!("max relative deviation over 200 steps: {:.2e}", compare_curves(&a, &b)?);
    Ok(())
}
