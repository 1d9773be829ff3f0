use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

pub struct Context {
    pub seed_flag: Option<u64>,
    pub threads: Option<usize>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_input(path: &Path, digests: &mut BTreeMap<String, String>) -> CliResult<Vec<u8>> {
    let bytes = fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    digests.insert(path.display().to_string(), sha256_hex(&bytes));
    Ok(bytes)
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(netoutlier::Error::Parse(format!("{what}: rows have different lengths")).into());
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

pub fn column_names(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|c| format!("{prefix}{c}")).collect()
}

/// Files written by one command, plus the run manifest.
pub struct Outputs {
    dir: PathBuf,
    files: BTreeMap<String, String>,
    started: Instant,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a Value,
    config_sha256: String,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
    seed: u64,
    threads: Option<usize>,
    version: &'static str,
    elapsed_ms: u128,
}

impl Outputs {
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        Ok(Self { dir: dir.to_path_buf(), files: BTreeMap::new(), started: Instant::now() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| CliError::Io { path, source })?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_with<F>(&mut self, name: &str, f: F) -> CliResult<()>
    where
        F: FnOnce(&mut Vec<u8>) -> netoutlier::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializable output");
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn finish(
        self,
        command: &str,
        config: &Value,
        inputs: &BTreeMap<String, String>,
        seed: u64,
        threads: Option<usize>,
    ) -> CliResult<()> {
        let manifest = Manifest {
            command,
            config,
            // serde_json maps are sorted, so this is canonical
            config_sha256: sha256_hex(&serde_json::to_vec(config).expect("json value")),
            inputs,
            outputs: &self.files,
            seed,
            threads,
            version: env!("CARGO_PKG_VERSION"),
            elapsed_ms: self.started.elapsed().as_millis(),
        };
        let path = self.dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("serializable manifest");
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|source| CliError::Io { path, source })
    }
}
