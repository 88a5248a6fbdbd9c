#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

pub fn kgcal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgcal"))
        .args(args)
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn kgcal")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = kgcal(dir, args);
    assert!(out.status.success(), "kgcal {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Writes `train.tsv`, `valid.tsv` and `test.tsv` holding `n` distinct random
/// triples over `ne` entities and `nr` relations, split 80/10/10.
pub fn write_tsv_kg(dir: &Path, seed: u64, ne: u64, nr: u64, n: usize) {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = |m: u64| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state % m
    };
    let mut seen = std::collections::HashSet::new();
    let mut lines = Vec::new();
    while lines.len() < n {
        let (s, r, o) = (next(ne), next(nr), next(ne));
        if s != o && seen.insert((s, r, o)) {
            lines.push(format!("e{s}\tr{r}\te{o}\n"));
        }
    }
    let (a, b) = (n * 8 / 10, n * 9 / 10);
    fs::write(dir.join("train.tsv"), lines[..a].concat()).unwrap();
    fs::write(dir.join("valid.tsv"), lines[a..b].concat()).unwrap();
    fs::write(dir.join("test.tsv"), lines[b..].concat()).unwrap();
}

pub const INGEST: &[&str] = &["ingest", "--triples", "train.tsv:train", "valid.tsv:valid", "test.tsv:test", "--out", "kg.bin"];
