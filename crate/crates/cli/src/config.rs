//! Config-file merging, input checks and run manifests.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};
use storejourney::io::{sha256_hex, write_atomic};

use crate::CliError;

/// Overlays the flags that were given on top of the JSON config file.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T, CliError> {
    let mut base = match config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Args(format!("config {}: {e}", path.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(CliError::Args(format!("config {} must hold a JSON object", path.display()))),
                Err(e) => return Err(CliError::Args(format!("config {}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    let Value::Object(given) = serde_json::to_value(flags).expect("flags serialize") else {
        unreachable!("argument structs serialize to objects")
    };
    for (k, v) in given {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Args(format!("config: {e}")))
}

pub fn required<T: Clone>(value: &Option<T>, name: &str) -> Result<T, CliError> {
    value.clone().ok_or_else(|| CliError::Args(format!("--{name} is required")))
}

pub fn input_file(value: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    let path = required(value, name)?;
    if !path.is_file() {
        return Err(CliError::Args(format!("--{name}: {} is not a readable file", path.display())));
    }
    Ok(path)
}

pub fn output_dir(value: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    let path = required(value, name)?;
    std::fs::create_dir_all(&path).map_err(|e| CliError::Args(format!("--{name} {}: {e}", path.display())))?;
    Ok(path)
}

pub fn output_file(value: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    let path = required(value, name)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Args(format!("--{name} {}: {e}", path.display())))?;
    }
    Ok(path)
}

fn file_entry(path: &Path) -> Value {
    let digest = std::fs::read(path).map(|b| sha256_hex(&b)).unwrap_or_default();
    json!({ "path": path, "sha256": digest })
}

/// Records what a run read, how it was configured and what it wrote.
pub fn write_manifest(
    path: &Path,
    command: &str,
    settings: &impl Serialize,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<(), CliError> {
    let settings = serde_json::to_value(settings).expect("settings serialize");
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": created,
        "config_hash": sha256_hex(settings.to_string().as_bytes()),
        "config": settings,
        "inputs": inputs.iter().map(|p| file_entry(p)).collect::<Vec<_>>(),
        "outputs": outputs.iter().map(|p| file_entry(p)).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// `<file>.manifest.json` next to a single-file output.
pub fn manifest_beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// `8..4096` doubles from the lower bound up to the upper; `8,20,64` lists sizes.
pub fn parse_sizes(spec: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Args(format!("sizes {spec:?}: expected `LO..HI` or a comma list"));
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        Ok(std::iter::successors(Some(lo), |s| s.checked_mul(2)).take_while(|&s| s <= hi).collect())
    } else {
        spec.split(',').map(|s| s.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad)).collect()
    }
}
