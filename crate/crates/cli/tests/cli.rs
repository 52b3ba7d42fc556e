use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn hsaudit(args: &[&str]) -> (i32, Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_hsaudit"))
        .args(args)
        .output()
        .expect("spawn hsaudit");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let last = stdout.lines().last().unwrap_or_else(|| panic!("no output, stderr: {}", String::from_utf8_lossy(&out.stderr)));
    (out.status.code().unwrap(), serde_json::from_str(last).unwrap())
}

fn fixture(dir: &Path) -> PathBuf {
    let (code, v) = hsaudit(&["--make-synthetic", dir.to_str().unwrap()]);
    assert_eq!(code, 0, "{v}");
    PathBuf::from(v["config"].as_str().unwrap())
}

#[test]
fn stage_before_its_dependency_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    let (code, v) = hsaudit(&["--config", cfg.to_str().unwrap(), "--stage", "bias", "--offline"]);
    assert_eq!(code, 2);
    assert_eq!(v["error"], "StageDependencyMissing");
    assert_eq!(v["stage"], "bias");
}

#[test]
fn offline_run_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let (code, first) = hsaudit(&["--config", cfg, "--offline"]);
    assert_eq!(code, 0, "{first}");
    assert_eq!(first["network_requests"], 0);
    let report = tmp.path().join("out/report");
    for f in ["manifest.json", "tables/prf.csv", "tables/bias_profile.md", "metrics.json"] {
        assert!(report.join(f).is_file(), "{f} missing");
    }

    let other = tmp.path().join("second");
    let (code, second) = hsaudit(&["--config", cfg, "--offline", "--out", other.to_str().unwrap()]);
    assert_eq!(code, 0, "{second}");
    assert_eq!(first["bundle_checksum"], second["bundle_checksum"]);
}

#[test]
fn stages_can_run_one_at_a_time() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    let cfg = cfg.to_str().unwrap();
    for stage in ["ingest", "score", "bias", "debias", "annotate", "scm", "cluster", "calibrate", "metrics", "report"] {
        let (code, v) = hsaudit(&["--config", cfg, "--stage", stage, "--offline"]);
        assert_eq!(code, 0, "{stage}: {v}");
    }
    assert!(tmp.path().join("out/report/manifest.json").is_file());
}

#[test]
fn bad_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[run]\nname = \"x\"\nunknown_key = 1\n").unwrap();
    let (code, v) = hsaudit(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(v["error"], "ConfigInvalid");
}

#[test]
fn malformed_corpus_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    std::fs::write(tmp.path().join("hatecheck_synthetic.csv"), "functionality,case_id\nderog_h,1\n").unwrap();
    let (code, v) = hsaudit(&["--config", cfg.to_str().unwrap(), "--offline"]);
    assert_eq!(code, 4, "{v}");
    assert_eq!(v["stage"], "all");
}
