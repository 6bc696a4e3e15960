use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 6] = [
    "run",
    "sync-compare",
    "freq-sweep",
    "reconstruct",
    "missdet-sweep",
    "volumetric",
];

fn syncap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_syncap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn every_subcommand_takes_config_seed_and_out() {
    for sub in SUBCOMMANDS {
        let out = syncap(&[sub, "--help"]);
        assert!(out.status.success(), "{sub}");
        let help = String::from_utf8_lossy(&out.stdout);
        for flag in ["--config", "--seed", "--out"] {
            assert!(help.contains(flag), "{sub} lacks {flag}");
        }
    }
}

#[test]
fn run_writes_tables_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "short.toml", "[scenario]\nduration_s = 1.9\n");
    let out_dir = tmp.path().join("out");
    let out = out_dir.to_string_lossy().into_owned();
    let result = syncap(&["run", "--config", &config, "--seed", "4", "--out", &out]);
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(
        result.status.success(),
        "{stdout}{}",
        String::from_utf8_lossy(&result.stderr)
    );
    assert!(stdout.contains("[PASS]"));
    for file in [
        "run.metrics.csv",
        "run.spreads.csv",
        "run.checks.csv",
        "run.manifest.jsonl",
    ] {
        assert!(out_dir.join(file).exists(), "{file}");
    }
    assert!(out_dir.join("session-4/store").is_dir());
    let metrics = fs::read_to_string(out_dir.join("run.metrics.csv")).unwrap();
    assert!(metrics.starts_with("seed,config_hash,"));
    assert!(metrics.lines().nth(1).unwrap().starts_with("4,"));

    // same config into the same directory is fine
    assert!(syncap(&["run", "--config", &config, "--seed", "4", "--out", &out])
        .status
        .success());

    // a different config may not reuse it
    let other = write_config(tmp.path(), "other.toml", "[scenario]\nduration_s = 0.9\n");
    let rejected = syncap(&["run", "--config", &other, "--seed", "4", "--out", &out]);
    assert_eq!(rejected.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&rejected.stderr).contains("holds results of config"));
}

#[test]
fn failing_checks_give_a_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    // detector noise far beyond the low-single-digit pixel check
    let config = write_config(
        tmp.path(),
        "strict.toml",
        "[scenario]\npreset = \"ideal\"\nduration_s = 0.9\nnoise = { joint_sigma_px = 40.0 }\n",
    );
    let out = tmp.path().join("out").to_string_lossy().into_owned();
    let result = syncap(&["reconstruct", "--config", &config, "--out", &out]);
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert_eq!(result.status.code(), Some(1), "{stdout}");
    assert!(stdout.contains("[FAIL]"));
}

#[test]
fn bad_config_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "bad.toml", "[run]\nseeds = 0\n");
    let out = tmp.path().join("out").to_string_lossy().into_owned();
    let result = syncap(&["run", "--config", &config, "--out", &out]);
    assert_eq!(result.status.code(), Some(2));
}
