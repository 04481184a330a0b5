#![allow(dead_code)]

use std::path::PathBuf;
use std::process::{Command, Output};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn cherrypick() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cherrypick"))
}

pub fn run(args: &[&str]) -> Output {
    cherrypick().args(args).output().unwrap()
}

pub fn stdout(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn json(args: &[&str]) -> serde_json::Value {
    serde_json::from_str(&stdout(args)).unwrap()
}

pub fn adverse() -> String {
    data("adverse_events.csv").display().to_string()
}
