//! Helpers for running the `degensep` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn degensep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_degensep")).args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub fn synth(dir: &Path, args: &[&str]) -> PathBuf {
    let out = dir.join("scenario");
    let mut all = vec!["synth", "--out", path_str(&out)];
    all.extend(args);
    let o = degensep(&all);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

pub fn separate(input: &Path, out: &Path, method: &str, extra: &[&str]) -> Output {
    let mut all = vec!["separate", "--input", path_str(input), "--out", path_str(out), "--method", method];
    all.extend(extra);
    degensep(&all)
}

pub fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// SHA-256 of every file in `dir`, with the `timings` block of report.json
/// cut off. The block is the last key, so everything before it must match
/// byte for byte.
pub fn hashes(dir: &Path) -> Vec<(String, String)> {
    let mut names: Vec<String> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let mut bytes = fs::read(dir.join(&name)).unwrap();
            if name == "report.json" {
                let cut = String::from_utf8_lossy(&bytes).find("\"timings\"").expect("report has timings");
                bytes.truncate(cut);
            }
            let digest = Sha256::digest(&bytes);
            (name, digest.iter().map(|b| format!("{b:02x}")).collect())
        })
        .collect()
}
