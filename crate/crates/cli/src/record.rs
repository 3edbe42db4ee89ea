//! Run persistence: the run record (config, seeds, file manifest with
//! checksums, failures, metric summaries) and checksummed file writing.

use crate::config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use uqbench_core::error::{Error, Result};
use uqbench_core::rng::fnv1a64;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FileEntry {
    pub path: String,
    pub fnv64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureNote {
    pub stage: String,
    pub method: Option<String>,
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub trial_seeds: Vec<u64>,
    pub files: Vec<FileEntry>,
    pub failures: Vec<FailureNote>,
    /// Per-method, per-partition metric summaries over completed trials.
    pub summaries: serde_json::Value,
}

impl RunRecord {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join("run.json")
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("run record serialization: {e}")))?;
        std::fs::create_dir_all(run_dir)?;
        std::fs::write(Self::path(run_dir), json + "\n")?;
        Ok(())
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(Self::path(run_dir))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(e.line(), format!("run record: {e}")))
    }

    /// Re-hash every listed file and compare with the manifest.
    pub fn validate_files(&self, run_dir: &Path) -> Result<()> {
        for entry in &self.files {
            let bytes = std::fs::read(run_dir.join(&entry.path))?;
            let have = format!("{:016x}", fnv1a64(&bytes));
            if have != entry.fnv64 {
                return Err(Error::invalid(format!(
                    "checksum mismatch for {}: manifest {} vs file {}",
                    entry.path, entry.fnv64, have
                )));
            }
        }
        Ok(())
    }
}

/// Writes files under a root directory and records path + checksum.
pub struct FileSink {
    root: PathBuf,
    pub entries: Vec<FileEntry>,
}

impl FileSink {
    pub fn new(root: &Path) -> Self {
        FileSink {
            root: root.to_path_buf(),
            entries: Vec::new(),
        }
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.entries.push(FileEntry {
            path: rel.to_string(),
            fnv64: format!("{:016x}", fnv1a64(bytes)),
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_checksums_validate_and_catch_tampering() {
        let dir = std::env::temp_dir().join(format!("uqbench_record_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let mut sink = FileSink::new(&dir);
        sink.write("a/one.txt", b"hello").unwrap();
        sink.write("two.txt", b"world").unwrap();
        let record = RunRecord {
            config: ExperimentConfig::default(),
            config_hash: "0".repeat(16),
            trial_seeds: vec![1],
            files: sink.entries.clone(),
            failures: vec![],
            summaries: serde_json::Value::Null,
        };
        record.save(&dir).unwrap();
        let loaded = RunRecord::load(&dir).unwrap();
        assert_eq!(loaded.files, record.files);
        loaded.validate_files(&dir).unwrap();

        std::fs::write(dir.join("two.txt"), b"tampered").unwrap();
        assert!(loaded.validate_files(&dir).is_err());
        let _ = std::fs::remove_dir_all(&dir);
    }
}
