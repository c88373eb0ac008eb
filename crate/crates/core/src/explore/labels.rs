//! Cluster labels persisted as one JSON document, replaced atomically on
//! every write.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::region::Region;
use crate::ingest::IngestError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabel {
    pub id: u64,
    pub region: Region,
    pub text: String,
    #[serde(default)]
    pub author: String,
    pub created_at: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct LabelDoc {
    labels: Vec<ClusterLabel>,
    #[serde(default)]
    next_id: u64,
}

/// Not internally synchronized; callers serialize writers.
#[derive(Debug)]
pub struct LabelStore {
    path: PathBuf,
    doc: LabelDoc,
}

impl LabelStore {
    /// Opens `path`, starting empty when the file does not exist.
    pub fn open(path: &Path) -> Result<LabelStore, IngestError> {
        let doc = match std::fs::read_to_string(path) {
            Ok(text) => {
                let mut doc: LabelDoc = serde_json::from_str(&text).map_err(|e| IngestError::Malformed {
                    line: e.line(),
                    message: format!("{}: {e}", path.display()),
                })?;
                let max = doc.labels.iter().map(|l| l.id + 1).max().unwrap_or(0);
                doc.next_id = doc.next_id.max(max);
                doc
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => LabelDoc::default(),
            Err(e) => return Err(IngestError::io(path, e)),
        };
        Ok(LabelStore { path: path.to_path_buf(), doc })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Labels in insertion order.
    pub fn list(&self) -> &[ClusterLabel] {
        &self.doc.labels
    }

    pub fn get(&self, id: u64) -> Option<&ClusterLabel> {
        self.doc.labels.iter().find(|l| l.id == id)
    }

    pub fn add(&mut self, region: Region, text: &str, author: &str) -> Result<u64, IngestError> {
        let created_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        self.add_at(region, text, author, &created_at)
    }

    /// As `add` with an explicit timestamp.
    pub fn add_at(&mut self, region: Region, text: &str, author: &str, created_at: &str) -> Result<u64, IngestError> {
        let mut doc = self.doc.clone();
        let id = doc.next_id;
        doc.next_id += 1;
        doc.labels.push(ClusterLabel {
            id,
            region,
            text: text.to_string(),
            author: author.to_string(),
            created_at: created_at.to_string(),
        });
        self.commit(doc)?;
        Ok(id)
    }

    /// Replaces the text of label `id`; `false` when there is no such label.
    pub fn edit(&mut self, id: u64, text: &str) -> Result<bool, IngestError> {
        let mut doc = self.doc.clone();
        let Some(label) = doc.labels.iter_mut().find(|l| l.id == id) else {
            return Ok(false);
        };
        label.text = text.to_string();
        self.commit(doc)?;
        Ok(true)
    }

    /// Removes label `id`. Returns whether it existed; deleting twice is a
    /// no-op.
    pub fn delete(&mut self, id: u64) -> Result<bool, IngestError> {
        if self.get(id).is_none() {
            return Ok(false);
        }
        let mut doc = self.doc.clone();
        doc.labels.retain(|l| l.id != id);
        self.commit(doc)?;
        Ok(true)
    }

    fn commit(&mut self, doc: LabelDoc) -> Result<(), IngestError> {
        let dir = match self.path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&dir).map_err(|e| IngestError::io(&dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| IngestError::io(&dir, e))?;
        let json = serde_json::to_string_pretty(&doc).expect("labels serialize");
        tmp.write_all(json.as_bytes())
            .and_then(|_| tmp.write_all(b"\n"))
            .and_then(|_| tmp.as_file().sync_all())
            .map_err(|e| IngestError::io(tmp.path(), e))?;
        tmp.persist(&self.path).map_err(|e| IngestError::io(&self.path, e.error))?;
        self.doc = doc;
        Ok(())
    }
}
