#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use occamlme_core::sim::{generate, SimConfig};

pub fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_occamlme"))
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = binary().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "occamlme {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Writes a simulated dataset as long-format CSV with columns
/// `id, x1..x5, s1..sp, y` and returns its path.
pub fn simulated_csv(dir: &Path, cell: &SimConfig) -> PathBuf {
    let sim = generate(cell, 0).unwrap();
    let q = sim.data[0].q();
    let p = sim.data[0].p();
    let mut text = String::from("id");
    for c in 1..q {
        let _ = write!(text, ",x{c}");
    }
    for j in 1..=p {
        let _ = write!(text, ",s{j}");
    }
    text.push_str(",y\n");
    for d in &sim.data {
        for r in 0..d.n() {
            text.push_str(&d.id);
            for c in 1..q {
                let _ = write!(text, ",{}", d.x[(r, c)]);
            }
            for j in 0..p {
                let _ = write!(text, ",{}", d.s[(r, j)]);
            }
            let _ = writeln!(text, ",{}", d.y[r]);
        }
    }
    let path = dir.join("data.csv");
    std::fs::write(&path, text).unwrap();
    path
}

/// Config text selecting the columns written by [`simulated_csv`].
pub fn simulated_roles(p: usize) -> String {
    let fixed: Vec<String> = (1..=5).map(|c| format!("x{c}")).collect();
    let random: Vec<String> = (1..=p).map(|j| format!("s{j}")).collect();
    format!("fixed_columns = {}\nrandom_columns = {}\n", fixed.join(","), random.join(","))
}
