#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use sha2::{Digest, Sha256};

/// Writes the toy panel into `dir` and returns the config path.
pub fn toy(dir: &Path, seed: u64) -> PathBuf {
    eoli_cli::generate_toy(dir, seed).unwrap();
    dir.join("config.json")
}

/// Rewrites keys of the JSON config at `path`.
pub fn patch_config(path: &Path, patch: Value) {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    for (k, val) in patch.as_object().unwrap() {
        v[k] = val.clone();
    }
    fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

/// Small benchmark settings so repeated invocations stay quick.
pub fn quick_benchmark() -> Value {
    serde_json::json!({ "fraction": 0.4, "runs": 2, "methods": ["mean", "mice_linear", "mice_boost", "forest"] })
}

pub fn quick_imputer() -> Value {
    serde_json::json!({
        "method": "forest",
        "forest": { "n_trees": 10, "max_iter": 3 },
        "mice": { "n_cycles": 2, "boost": { "n_rounds": 10 } }
    })
}

pub fn run(args: &[&str]) -> i32 {
    let mut full = vec!["eoli"];
    full.extend_from_slice(args);
    eoli_cli::run_cli(full)
}

/// File name to SHA-256 of every file in `dir` except the manifest.
pub fn digests(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if name != "manifest.json" {
            out.insert(name, hex::encode(Sha256::digest(fs::read(&path).unwrap())));
        }
    }
    out
}

pub fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

pub fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}
