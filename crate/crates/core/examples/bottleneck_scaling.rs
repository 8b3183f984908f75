//! Asymptotic loss floors against model size and dataset size.

use scaling_dmft::analysis::log_grid;
use scaling_dmft::limits::{bottleneck_scan, Resource};
use scaling_dmft::spectra::{SourceCapacitySpec, SpectrumTable};

fn main() -> scaling_dmft::Result<()> {
    let sizes = log_grid(10.0, 1e3, 8);
    let alpha = 2.0;
    for beta in [0.5, 1.0, 3.0] {
        let table = SpectrumTable::build(&SourceCapacitySpec::new(alpha, beta, 100_000)?)?;
        for resource in [Resource::Params, Resource::Samples] {
            let r = bottleneck_scan(&table, resource, &sizes)?;
            println!(
                "beta={beta} {resource:?}: r slope {:.3}, loss slope {:.3} (predicted {:.3})",
                r.r_slope(),
                r.loss_slope(),
                -alpha * beta.min(2.0)
            );
        }
    }
    Ok(())
}
