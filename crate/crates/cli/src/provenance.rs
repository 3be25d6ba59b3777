//! `<output>.prov.json` sidecars: tool version, a hash of the path-free
//! configuration, and SHA-256 digests of every input and output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::failure::{CliResult, Failure};

#[derive(Serialize)]
struct Sidecar<'a> {
    tool: &'static str,
    version: &'static str,
    stage: &'a str,
    config_hash: String,
    config: &'a BTreeMap<String, Value>,
    inputs: &'a BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

pub struct Provenance {
    stage: &'static str,
    config: BTreeMap<String, Value>,
    inputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|source| {
        Failure::Core(consel_core::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".prov.json");
    out.with_file_name(name)
}

impl Provenance {
    pub fn new(stage: &'static str) -> Self {
        Provenance {
            stage,
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn config(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).expect("config values serialize");
        self.config.insert(key.to_string(), v);
        self
    }

    /// Records the digest of an input file under its flag name. Fails with a
    /// missing-input error before any work is done if the file is absent.
    pub fn input(&mut self, flag: &'static str, path: &Path) -> CliResult<&mut Self> {
        if !path.is_file() {
            return Err(Failure::MissingInput {
                flag,
                path: path.to_path_buf(),
            });
        }
        self.inputs.insert(flag.to_string(), sha256_file(path)?);
        Ok(self)
    }

    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(&self.config).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Writes the sidecar next to `anchor` with digests of `outputs`, keyed
    /// by the given names.
    pub fn write(&self, anchor: &Path, outputs: &[(&str, &Path)]) -> CliResult<PathBuf> {
        let mut digests = BTreeMap::new();
        for (name, path) in outputs {
            digests.insert(name.to_string(), sha256_file(path)?);
        }
        let sidecar = Sidecar {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            stage: self.stage,
            config_hash: self.config_hash(),
            config: &self.config,
            inputs: &self.inputs,
            outputs: digests,
        };
        let path = sidecar_path(anchor);
        let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|source| {
            Failure::Core(consel_core::Error::Io {
                path: path.clone(),
                source,
            })
        })?;
        Ok(path)
    }
}
