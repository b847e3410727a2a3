//! Output files and provenance.

use std::fs;
use std::path::Path;
use std::process::Command;

use gctm::harness::config::{manifest, RunConfig};
use gctm::harness::datasets::parse_points;
use gctm::{Points, Result};

pub fn read_points(path: &Path) -> Result<Points> {
    parse_points(&fs::read_to_string(path)?)
}

pub fn points_text(p: &Points) -> String {
    let mut s = String::new();
    for row in p.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_points(p: &Points, path: &Path) -> Result<()> {
    fs::write(path, points_text(p))?;
    Ok(())
}

/// `git describe --always --dirty` of the working directory, or `unknown`.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

pub fn write_manifest(dir: &Path, cfg: &RunConfig, command: &str) -> Result<()> {
    fs::write(
        dir.join("manifest.cfg"),
        manifest(cfg, &git_describe(), command),
    )?;
    Ok(())
}
