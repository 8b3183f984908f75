use std::collections::BTreeMap;

use scaling_dmft::dmft::{solve_dmft, DmftConfig};
use scaling_dmft::experiment::{run, ExperimentConfig};
use scaling_dmft::linearnet::{train_linearnet, LinearNetConfig};
use scaling_dmft::simulator::{run_ensemble, TrainConfig};
use scaling_dmft::spectra::{SourceCapacitySpec, SpectrumTable};

fn table() -> SpectrumTable {
    SpectrumTable::build(&SourceCapacitySpec::new(2.0, 0.5, 128).unwrap()).unwrap()
}

fn with_threads<T: Send>(k: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap().install(f)
}

#[test]
fn ensemble_is_bitwise_stable_across_thread_counts() {
    let t = table();
    let config = TrainConfig::new(32, 8, 0.2, 0.75, 100, 11);
    let one = with_threads(1, || run_ensemble(&t, &config, 6).unwrap());
    let four = with_threads(4, || run_ensemble(&t, &config, 6).unwrap());
    assert_eq!(one.loss, four.loss);
    assert_eq!(one.stderr, four.stderr);
}

#[test]
fn dmft_is_bitwise_stable_across_thread_counts() {
    let t = table();
    let config = DmftConfig {
        n_params: 32.0,
        batch_size: 8.0,
        learning_rate: 0.2,
        richness: 0.75,
        horizon: 40,
        max_bins: 40,
        ..Default::default()
    };
    let one = with_threads(1, || solve_dmft(&t, &config).unwrap());
    let three = with_threads(3, || solve_dmft(&t, &config).unwrap());
    assert_eq!(one.kernels.loss(), three.kernels.loss());
    assert_eq!(one.kernels.c2, three.kernels.c2);
}

#[test]
fn linearnet_repeats_per_seed() {
    let t = table();
    let a = train_linearnet(&t, &LinearNetConfig::new(16, 2.0, 0.05, 4, 200, 5)).unwrap();
    let b = train_linearnet(&t, &LinearNetConfig::new(16, 2.0, 0.05, 4, 200, 5)).unwrap();
    let c = train_linearnet(&t, &LinearNetConfig::new(16, 2.0, 0.05, 4, 200, 6)).unwrap();
    assert_eq!(a.loss.loss, b.loss.loss);
    assert_ne!(a.loss.loss, c.loss.loss);
}

const SWEEP: &str = r#"
base_seed = 3

[spectrum]
alpha = 2.0
beta = 0.5
n_modes = 20000

[experiment]
kind = "envelope"
richness = 0.75
model_sizes = [8.0, 32.0, 128.0, 512.0]
max_flow_time = 1e5
compute_min = 1e2
compute_max = 1e6
max_bins = 64

[sweep]
richness = [0.0, 0.75]
"#;

fn checksums(dir: &std::path::Path, threads: usize) -> BTreeMap<String, String> {
    let c = ExperimentConfig::from_toml_str(SWEEP).unwrap();
    let m = run(&c, dir, threads).unwrap();
    assert_eq!(m.failed(), 0);
    m.files.into_iter().map(|f| (f.path, f.sha256)).collect()
}

#[test]
fn rerun_reproduces_every_file() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = checksums(a.path(), 1);
    let second = checksums(b.path(), 3);
    assert!(first.contains_key("richness=0.75/envelope.csv"));
    assert_eq!(first, second);
}
