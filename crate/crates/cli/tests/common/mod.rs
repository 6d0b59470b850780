#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SMALL_TRAIN: &str = "epochs = 3\nlr = 0.01\nhidden_dim = 16\nheads = 2\nfolds = [0]\n";
pub const SMALL_SYNTH: &str = "docs = 30\ndim = 16\ntranse_epochs = 20\n";

pub fn kcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kcd"))
        .args(args)
        .env("KCD_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("kcd runs")
}

/// Runs `kcd` and panics with its stderr unless it succeeds.
pub fn kcd_ok(args: &[&str]) -> Output {
    let out = kcd(args);
    assert!(
        out.status.success(),
        "kcd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// A small synthetic dataset under `root/data`, plus the small training
/// configuration at `root/train.toml`.
pub fn small_dataset(root: &Path) -> (PathBuf, PathBuf) {
    let synth = write_file(root, "synth.toml", SMALL_SYNTH);
    let data = root.join("data");
    kcd_ok(&["synth", "--config", s(&synth), "--out-dir", s(&data)]);
    (data, write_file(root, "train.toml", SMALL_TRAIN))
}
