use std::fs;
use std::path::Path;
use std::process::Command;

fn run(config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_stochrecon"))
        .arg("run")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "bin"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn same_config_and_seed_give_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("walsh.toml");
    fs::write(&cfg, "kind = \"walsh-check\"\nseed = 4\nn = 16\nsamples = 8\n").unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&cfg, &a, &["--quiet"]).status.success());
    assert!(run(&cfg, &b, &["--quiet", "--threads", "1"]).status.success());
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    assert!(fa.iter().any(|(n, _)| n == "checks.csv"));
    assert_eq!(fa, fb);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "passed");
    assert_eq!(manifest["config"]["seed"], 4);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    let c = tmp.path().join("c");
    assert!(run(&cfg, &c, &["--quiet", "--seed", "5"]).status.success());
    assert_ne!(csv_files(&c), fa);
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "kind = \"walsh-check\"\nseed = 1\nn = 100\n").unwrap();
    let out = run(&cfg, &tmp.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`n`"));
}

#[test]
fn failed_checks_exit_with_code_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("strict.toml");
    // A convergence rate no first-order scheme reaches.
    fs::write(&cfg, "kind = \"young-check\"\nseed = 1\nlevels = [16, 32]\ntolerance = 5.0\n").unwrap();
    let out = run(&cfg, &tmp.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL convergence_rate"));
}
