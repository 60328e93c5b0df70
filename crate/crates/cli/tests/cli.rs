use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn seqkf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqkf")).args(args).output().expect("binary runs")
}

fn csv_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

#[test]
fn kf_only_run_writes_tables_and_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqkf(&["run", "--methods", "KF", "--seed", "3", "--n", "50", "--output-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_names(dir.path()), ["error_KF.csv", "path_KF.csv", "table2.csv"]);
    assert!(dir.path().join("config.resolved.toml").exists());
    let path = fs::read_to_string(dir.path().join("path_KF.csv")).unwrap();
    assert_eq!(path.lines().count(), 51);
    assert!(path.starts_with("seed,k,true_displacement,filtered,smoothed\n3,1,"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("KF"), "{stdout}");
}

#[test]
fn resolved_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = seqkf(&["run", "--methods", "KF,EM_KF", "--seed", "1", "--output-dir", first.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let resolved = first.join("config.resolved.toml");
    let second = dir.path().join("second");
    let out = seqkf(&["run", "--config", resolved.to_str().unwrap(), "--output-dir", second.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files = csv_names(&first);
    assert_eq!(files, csv_names(&second));
    for name in files.iter().filter(|n| *n != "table2.csv") {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "n = 200\nsmaple_period = 0.01\n").unwrap();
    for args in [
        vec!["run", "--config", bad.to_str().unwrap()],
        vec!["run", "--n", "3"],
        vec!["run", "--methods", "KALMAN"],
        vec!["run", "--config", "/nonexistent/seqkf.toml"],
        vec!["frobnicate"],
    ] {
        let out = seqkf(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn verification_commands_succeed() {
    let out = seqkf(&["oracle", "--cases", "20", "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("smoother cov"));
    let out = seqkf(&["gradcheck"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("worst:"));
}
