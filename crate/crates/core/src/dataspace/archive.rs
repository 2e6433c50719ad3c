//! JSON-lines archive of locked DataBlocks.
//!
//! One file per channel, one record per line. Field order of every struct
//! below is alphabetical and product maps are `BTreeMap`s, so a record always
//! serializes to the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::product::GenerationId;
use super::SpaceError;
use crate::clock::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleOutcomeKind {
    Success,
    FactError,
    TransformError,
    PublisherError,
}

impl CycleOutcomeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CycleOutcomeKind::Success => "success",
            CycleOutcomeKind::FactError => "fact_error",
            CycleOutcomeKind::TransformError => "transform_error",
            CycleOutcomeKind::PublisherError => "publisher_error",
        }
    }
}

impl fmt::Display for CycleOutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CycleOutcomeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "success" => CycleOutcomeKind::Success,
            "fact_error" => CycleOutcomeKind::FactError,
            "transform_error" => CycleOutcomeKind::TransformError,
            "publisher_error" => CycleOutcomeKind::PublisherError,
            other => return Err(format!("unknown cycle outcome {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchivedProduct {
    pub produced_by: String,
    pub source_generation: GenerationId,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRecord {
    #[serde(rename = "channel")]
    pub channel_id: String,
    pub ended_at: Timestamp,
    pub generation: GenerationId,
    pub outcome: CycleOutcomeKind,
    pub products: BTreeMap<String, ArchivedProduct>,
    pub started_at: Timestamp,
}

impl ArchiveRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("archive records always serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    pub fn value(&self, product: &str) -> Option<&Value> {
        self.products.get(product).map(|p| &p.value)
    }
}

pub fn archive_path(dir: &Path, channel_id: &str) -> PathBuf {
    dir.join(format!("{channel_id}.jsonl"))
}

/// Read every record from an archive file, in file order.
pub fn read_archive(path: &Path) -> Result<Vec<ArchiveRecord>, SpaceError> {
    let file = File::open(path).map_err(|e| SpaceError::Archive(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SpaceError::Archive(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = ArchiveRecord::from_line(&line)
            .map_err(|e| SpaceError::Archive(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Append-only sink for one channel's archive file.
#[derive(Debug)]
pub(crate) struct ArchiveFile {
    path: PathBuf,
    file: File,
}

impl ArchiveFile {
    /// Starts a fresh lineage: an existing file for the channel is truncated.
    pub(crate) fn create(dir: &Path, channel_id: &str) -> Result<Self, SpaceError> {
        std::fs::create_dir_all(dir).map_err(|e| SpaceError::Archive(format!("{}: {e}", dir.display())))?;
        let path = archive_path(dir, channel_id);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| SpaceError::Archive(format!("{}: {e}", path.display())))?;
        Ok(ArchiveFile { path, file })
    }

    pub(crate) fn append(&mut self, record: &ArchiveRecord) -> Result<(), SpaceError> {
        let mut line = record.to_line();
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| SpaceError::Archive(format!("{}: {e}", self.path.display())))
    }

    pub(crate) fn path(&self) -> &Path {
        &self.path
    }
}
