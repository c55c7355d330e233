use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
{
    let fail = |e: std::io::Error| CliError::Output(format!("cannot write {}: {e}", path.display()));
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("output path {} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp).map_err(fail)?);
        body(&mut w)?;
        w.flush().map_err(fail)?;
        w.get_ref().sync_all().map_err(fail)?;
        drop(w);
        fs::rename(&tmp, path).map_err(fail)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Output(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| CliError::Output(e.to_string()))
    })
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<FileDigest, CliError> {
    let mut file = File::open(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let hex = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex,
    })
}

/// Provenance record written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub library_version: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn add_inputs(&mut self, paths: &[&Path]) -> Result<(), CliError> {
        for p in paths {
            self.inputs.push(digest(p)?);
        }
        Ok(())
    }
}

/// `model.json` → `model.json.manifest.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}
