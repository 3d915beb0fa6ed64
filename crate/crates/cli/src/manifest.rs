use std::path::{Path, PathBuf};

use kgrec::graphstore::{Dataset, Split, KG_FILE};
use kgrec::toy::ToyConfig;
use kgrec::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileFingerprint {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    /// `toy`, `toy-tiny` or a directory.
    pub source: String,
    pub toy: Option<ToyConfig>,
    /// Seed the toy data or the per-user split was drawn with.
    pub data_seed: u64,
    /// Optional k-core filter applied after loading.
    #[serde(default)]
    pub core: Option<usize>,
    pub files: Vec<FileFingerprint>,
    /// Hash of the loaded splits and triplets.
    pub content_sha256: String,
}

/// Everything needed to rerun a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: Option<DatasetRecord>,
    pub config: TrainConfig,
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        kgrec::diffkernel::write_atomic(&dir.join(MANIFEST), format!("{text}\n").as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", path.display())))
    }
}

pub fn sha256_file(path: &Path) -> Result<FileFingerprint, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(FileFingerprint {
        path: path.to_path_buf(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Fingerprints of the dataset files present in `dir`.
pub fn dir_fingerprints(dir: &Path) -> Result<Vec<FileFingerprint>, CliError> {
    [Split::Train.file_name(), Split::Valid.file_name(), Split::Test.file_name(), KG_FILE]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.exists())
        .map(|p| sha256_file(&p))
        .collect()
}

/// Order-sensitive hash of every split and triplet.
pub fn content_hash(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    for g in [&ds.train, &ds.valid, &ds.test] {
        h.update((g.num_users() as u64).to_le_bytes());
        h.update((g.num_items() as u64).to_le_bytes());
        for &(u, v) in g.edges() {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
        }
    }
    h.update((ds.kg.num_entities() as u64).to_le_bytes());
    for t in ds.kg.triplets() {
        for x in [t.head, t.relation, t.tail] {
            h.update((x as u64).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
