//! Long-time Markovian flow: loss and the growth of the kernel scale.

use scaling_dmft::analysis::fit_series;
use scaling_dmft::limits::{integrate_markovian, MarkovConfig};
use scaling_dmft::spectra::{SourceCapacitySpec, SpectrumTable};

fn main() -> scaling_dmft::Result<()> {
    let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.5, 100_000)?)?;
    let trace = integrate_markovian(
        &table,
        &MarkovConfig {
            richness: 4.0,
            t_max: 1e4,
            ..Default::default()
        },
    )?;
    let window = Some((1e2, 1e4));
    let loss = fit_series(&trace.times, &trace.loss, window)?;
    let growth: Vec<f64> = trace.kernel_scale.iter().map(|k| k - 1.0).collect();
    let kernel = fit_series(&trace.times, &growth, window)?;
    println!("{} steps, final relative step {}", trace.steps, trace.rel_step);
    println!("loss exponent {:.3} (2β/(1+β) = 0.667)", loss.exponent);
    println!("kernel growth exponent {:.3} (1 - χ = 0.333)", -kernel.exponent);
    Ok(())
}
