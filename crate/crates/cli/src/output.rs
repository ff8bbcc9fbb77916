//! Sidecar config files and output paths.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fusedprop::train::TrainConfig;
use serde::Serialize;
use serde_json::Value;

/// `<path>.config.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

/// `metrics.csv` with suffix `-seed3` becomes `metrics-seed3.csv`.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

#[derive(Serialize)]
struct Echo<'a, C: Serialize> {
    fusedprop_version: &'a str,
    command: &'a str,
    #[serde(flatten)]
    body: &'a C,
}

/// Prints the resolved settings and writes them next to `output`.
pub fn echo<C: Serialize>(command: &str, body: &C, output: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&Echo {
        fusedprop_version: fusedprop::VERSION,
        command,
        body,
    })?;
    println!("{json}");
    let path = sidecar_path(output);
    write_file(&path, &(json + "\n"))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Reads a training config from a sidecar, or from a bare config JSON.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| fusedprop::Error::Config(format!("{} is not JSON: {e}", path.display())))?;
    let inner = match value.get("config") {
        Some(c) => c.clone(),
        None => value,
    };
    Ok(TrainConfig::from_json(&inner.to_string())?)
}
