//! Helpers for driving the `hpvit` binary from tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hpvit::dataset::save_png;
use hpvit_core::Image;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hpvit")
}

/// Runs `hpvit` with `args` inside `cwd`, with `HPVIT_OUT` pointed at
/// `cwd/runs`.
pub fn hpvit(cwd: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .env("HPVIT_OUT", cwd.join("runs"))
        .output()
        .expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs `hpvit` and panics with its stderr unless it exits 0.
pub fn ok(cwd: &Path, args: &[&str]) -> Output {
    let o = hpvit(cwd, args);
    assert_eq!(code(&o), 0, "hpvit {args:?} failed:\n{}", stderr(&o));
    o
}

pub fn solid(path: &Path, h: usize, w: usize, c: usize, v: f64) {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).unwrap();
    }
    save_png(&Image::filled(h, w, c, v).unwrap(), path, 8).unwrap();
}

/// Every regular file under `dir` with its bytes, sorted by relative path.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}
