//! Output directory handling: atomic file writes and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub files: Vec<FileEntry>,
}

pub struct Output {
    dir: PathBuf,
    format: Format,
    files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Output {
    pub fn new(dir: &Path, format: Format) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), format, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes through a temporary file and renames it into place.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry { name: name.to_string(), bytes: bytes.len(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// `stem.csv` or `stem.json` depending on the chosen format.
    pub fn table<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> Result<String> {
        match self.format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                for r in rows {
                    w.serialize(r)?;
                }
                let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
                let name = format!("{stem}.csv");
                self.write(&name, &bytes)?;
                Ok(name)
            }
            Format::Json => {
                let name = format!("{stem}.json");
                self.json(&name, rows)?;
                Ok(name)
            }
        }
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<()> {
        manifest.out_dir = self.dir.clone();
        manifest.files = self.files;
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.dir.join("manifest.json"), &bytes)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        x: f64,
    }

    #[test]
    fn csv_keeps_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Output::new(dir.path(), Format::Csv).unwrap();
        out.table("t", &[Row { x: 13.819116335082 }, Row { x: 1.0 / 3.0 }]).unwrap();
        let text = fs::read_to_string(dir.path().join("t.csv")).unwrap();
        let values: Vec<f64> = text.lines().skip(1).map(|l| l.parse().unwrap()).collect();
        assert_eq!(values, vec![13.819116335082, 1.0 / 3.0]);
    }

    #[test]
    fn manifest_lists_digests() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Output::new(dir.path(), Format::Json).unwrap();
        out.write("a.txt", b"abc").unwrap();
        out.finish(RunManifest {
            command: "x".into(),
            argv: vec![],
            config_path: None,
            config_sha256: None,
            seed: None,
            out_dir: PathBuf::new(),
            files: vec![],
        })
        .unwrap();
        let m: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["files"][0]["sha256"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert!(!dir.path().join(".a.txt.tmp").exists());
    }
}
