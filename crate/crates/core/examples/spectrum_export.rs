//! Builds power-law spectra, reports trace and RKHS norm, and writes one
//! table to CSV.

use scaling_dmft::spectra::{ModeBins, RkhsNorm, SourceCapacitySpec, SpectrumTable};

fn main() -> scaling_dmft::Result<()> {
    for (alpha, beta) in [(2.0, 0.5), (2.0, 1.25), (1.5, 2.0)] {
        let spec = SourceCapacitySpec::with_default_cutoff(alpha, beta)?;
        let table = SpectrumTable::build(&spec)?;
        let norm = match table.rkhs_norm(&spec)? {
            RkhsNorm::Finite { truncated, .. } => format!("{truncated:.4}"),
            RkhsNorm::Divergent => "divergent".into(),
        };
        let bins = ModeBins::new(&table, 64)?;
        println!(
            "alpha={alpha} beta={beta}: M={} trace={:.6} tail past M/2 {:.3e} rkhs={norm} bins={}",
            table.len(),
            table.total_signal(),
            table.tail_loss(table.len() / 2)?,
            bins.len()
        );
    }
    let table = SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.5, 1000)?)?;
    let path = std::env::temp_dir().join("spectrum_a2_b0.5.csv");
    table.export_csv(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
