//! Finite-N, finite-B mean-field theory against a Monte Carlo ensemble.

use scaling_dmft::analysis::band_coverage;
use scaling_dmft::dmft::{solve_dmft, DmftConfig};
use scaling_dmft::simulator::{run_ensemble, TrainConfig};
use scaling_dmft::spectra::{SourceCapacitySpec, SpectrumTable};

fn main() -> scaling_dmft::Result<()> {
    let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.4, 256)?)?;
    let (n, b, eta, gamma, steps) = (64, 16, 0.2, 0.75, 128);
    let sol = solve_dmft(
        &table,
        &DmftConfig {
            n_params: n as f64,
            batch_size: b as f64,
            learning_rate: eta,
            richness: gamma,
            horizon: steps + 1,
            max_bins: 48,
            ..Default::default()
        },
    )?;
    let theory = sol.trajectory()?;
    let sim = run_ensemble(&table, &TrainConfig::new(n, b, eta, gamma, steps, 3), 32)?;
    println!("DMFT converged in {} sweeps", sol.iterations);
    println!("step  dmft        sim_mean    sim_stderr");
    for (i, t) in sim.times.iter().enumerate().step_by(4) {
        println!("{t:<5} {:.4e}  {:.4e}  {:.1e}", theory.loss[*t as usize], sim.loss[i], sim.stderr[i]);
    }
    println!("coverage of the 3-stderr band: {:.2}", band_coverage(&theory, &sim, 3.0)?);
    Ok(())
}
