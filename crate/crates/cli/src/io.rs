//! Atomic writes and JSON sidecars.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Format(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        CliError::Usage(format!("{}: at '{at}': {}", path.display(), e.into_inner()))
    })
}

/// The sidecar of `path`: same stem, `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Hex SHA-256 of the canonical JSON form of a configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let bytes = serde_json::to_vec(cfg).expect("configuration serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Metadata written next to every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: String,
    pub config_hash: String,
    pub command_line: Vec<String>,
    pub producer: String,
    #[serde(flatten)]
    pub fields: Map<String, Value>,
}

impl Sidecar {
    pub fn new(kind: &str, config_hash: &str, command_line: &[String]) -> Sidecar {
        Sidecar {
            kind: kind.to_string(),
            config_hash: config_hash.to_string(),
            command_line: command_line.to_vec(),
            producer: concat!("mh3d ", env!("CARGO_PKG_VERSION")).to_string(),
            fields: Map::new(),
        }
    }

    pub fn with<T: Serialize>(mut self, key: &str, value: T) -> Sidecar {
        self.fields
            .insert(key.to_string(), serde_json::to_value(value).expect("sidecar field serializes"));
        self
    }

    pub fn get<T: for<'de> Deserialize<'de>>(&self, key: &str) -> CliResult<T> {
        let v = self
            .fields
            .get(key)
            .ok_or_else(|| CliError::Format(format!("sidecar has no '{key}' field")))?;
        serde_json::from_value(v.clone()).map_err(|e| CliError::Format(format!("sidecar field '{key}': {e}")))
    }

    pub fn write_for(&self, data_path: &Path) -> CliResult<()> {
        write_json(&sidecar_path(data_path), self)
    }

    pub fn read_for(data_path: &Path) -> CliResult<Sidecar> {
        read_json(&sidecar_path(data_path))
    }

    pub fn expect_kind(self, kind: &str, data_path: &Path) -> CliResult<Sidecar> {
        if self.kind != kind {
            return Err(CliError::Usage(format!(
                "{} holds a '{}' tensor, expected '{kind}'",
                data_path.display(),
                self.kind
            )));
        }
        Ok(self)
    }
}
