use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ssp-sim"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

#[test]
fn oracle_prints_the_optimal_value() {
    let out = bin()
        .args(["oracle", "--config"])
        .arg(config("synthetic.toml"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("v_star_init"), "{text}");
}

#[test]
fn validate_env_accepts_the_synthetic_instance() {
    let out = bin()
        .args(["validate-env", "--config"])
        .arg(config("synthetic.toml"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("ok:"));
}

#[test]
fn missing_config_exits_with_code_one() {
    let out = bin()
        .args(["run", "--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("nonexistent"));
}

#[test]
fn bad_seed_range_is_a_config_error() {
    let out = bin()
        .args(["sweep", "--seeds", "5..1", "--config"])
        .arg(config("synthetic.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
