use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scaling-dmft"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const TABLE: &str = "[experiment]\nkind = \"exponent-table\"\nalphas = [1.5, 2.0, 3.0]\nbetas = [0.25, 0.5, 1.0, 1.25, 2.0, 3.0]\n";

#[test]
fn run_validate_report_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", TABLE);
    let out = dir.path().join("out");
    let status = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("manifest.json").exists());
    let v = bin().args(["validate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains("peak_bytes"));
    let r = bin().args(["report", "--out"]).arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&r.stdout).contains("1 points, 0 failed"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[experiment]\nkind = \"simulate\"\nsteps = \"many\"\n");
    let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
    let no_out = write(dir.path(), "t.toml", TABLE);
    assert_eq!(bin().args(["run", "--config"]).arg(&no_out).status().unwrap().code(), Some(2));
    assert_eq!(bin().arg("run").status().unwrap().code(), Some(2));
}

#[test]
fn partial_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    // the second point asks for a model wider than its spectrum
    let cfg = write(
        dir.path(),
        "b.toml",
        "[spectrum]\nalpha = 2.0\nbeta = 0.5\nn_modes = 40\n[experiment]\nkind = \"bottleneck\"\nresource = \"params\"\nsizes = [2.0, 4.0, 8.0]\n[sweep]\nn_modes = [40, 6]\n",
    );
    let out = dir.path().join("out");
    let o = bin().args(["run", "--threads", "2", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains(",ok,") && summary.contains(",failed,"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", TABLE);
    let out = dir.path().join("out");
    bin().args(["run", "--seed", "99", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"base_seed\": 99"));
}
