//! A declarative sweep run through the library, with its manifest.

use scaling_dmft::experiment::{report, run, validate, ExperimentConfig};

const CONFIG: &str = r#"
base_seed = 5

[spectrum]
alpha = 2.0
beta = 0.5
n_modes = 100000

[experiment]
kind = "bottleneck"
resource = "params"
sizes = [10.0, 30.0, 100.0, 300.0, 1000.0]

[sweep]
beta = [0.5, 1.0, 3.0]
"#;

fn main() -> scaling_dmft::Result<()> {
    let config = ExperimentConfig::from_toml_str(CONFIG)?;
    let plan = validate(&config)?;
    println!("{} points, peak memory {} bytes", plan.points.len(), plan.peak_bytes);
    let out = std::env::temp_dir().join("scaling_dmft_sweep");
    let manifest = run(&config, &out, 0)?;
    println!("{} files checksummed in {}", manifest.files.len(), out.display());
    print!("{}", report(&out)?);
    Ok(())
}
