//! File-backed artifact store.
//!
//! Layout under the root directory:
//!
//! ```text
//! manifest.toml      format version + one entry per artifact with its sha256
//! corpus/            corpus documents (JSONL or text)
//! indexes/           serialized shingle indexes
//! policies/          policy documents
//! lexicons/          keyword lexicons
//! rulepacks/         PII rule packs
//! .lock              advisory lock file serializing writers
//! ```
//!
//! Artifact files are named `<id>.<first 12 hex chars of sha256>`, so a new
//! version never overwrites the file an older manifest points to. Both the
//! artifact and the manifest are written to a temp file, fsynced and renamed
//! into place; a reader always sees a complete old or new artifact.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attribution::CorpusIndex;

pub const MANIFEST_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.toml";
const LOCK: &str = ".lock";
const TMP_PREFIX: &str = ".tmp-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Corpus,
    Index,
    Policy,
    Lexicon,
    RulePack,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 5] = [
        ArtifactKind::Corpus,
        ArtifactKind::Index,
        ArtifactKind::Policy,
        ArtifactKind::Lexicon,
        ArtifactKind::RulePack,
    ];

    pub fn dir(&self) -> &'static str {
        match self {
            ArtifactKind::Corpus => "corpus",
            ArtifactKind::Index => "indexes",
            ArtifactKind::Policy => "policies",
            ArtifactKind::Lexicon => "lexicons",
            ArtifactKind::RulePack => "rulepacks",
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("VERSION_MISMATCH: manifest version {found}, supported {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("CHECKSUM_MISMATCH: {}", .path.display())]
    ChecksumMismatch { path: PathBuf },
    #[error("IO_FAILURE: {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("IO_FAILURE: malformed manifest {}: {message}", .path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("NOT_FOUND: {kind:?} `{id}`")]
    NotFound { kind: ArtifactKind, id: String },
    #[error("invalid artifact id `{0}`")]
    BadId(String),
    #[error("artifact `{id}` does not decode: {message}")]
    Decode { id: String, message: String },
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::VersionMismatch { .. } => "VERSION_MISMATCH",
            StoreError::ChecksumMismatch { .. } => "CHECKSUM_MISMATCH",
            StoreError::Io { .. } | StoreError::Manifest { .. } => "IO_FAILURE",
            StoreError::NotFound { .. } => "NOT_FOUND",
            StoreError::BadId(_) | StoreError::Decode { .. } => "INVALID_ARTIFACT",
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub kind: ArtifactKind,
    pub id: String,
    /// Path relative to the store root.
    pub file: String,
    pub sha256: String,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    #[serde(default)]
    pub artifacts: Vec<ManifestEntry>,
}

impl Manifest {
    fn empty() -> Self {
        Manifest {
            version: MANIFEST_VERSION,
            artifacts: Vec::new(),
        }
    }

    pub fn entry(&self, kind: ArtifactKind, id: &str) -> Option<&ManifestEntry> {
        self.artifacts.iter().find(|e| e.kind == kind && e.id == id)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Writes `bytes` to `dest` through a synced temp file in the same directory.
fn write_atomic(dest: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = dest.parent().unwrap_or(Path::new("."));
    let tmp = dir.join(format!("{TMP_PREFIX}{}", uuid::Uuid::new_v4()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, dest)?;
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io(dest))
}

/// Handle to an opened store. Cheap to clone; every call rereads the
/// manifest, so handles in other threads or processes see committed writes.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// Opens (creating if needed) the store at `root` and verifies every
/// artifact listed in the manifest.
pub fn open_store(root: impl AsRef<Path>) -> Result<Store, StoreError> {
    let root = root.as_ref().to_path_buf();
    for kind in ArtifactKind::ALL {
        let dir = root.join(kind.dir());
        fs::create_dir_all(&dir).map_err(io(&dir))?;
    }
    let store = Store { root };
    let manifest_path = store.manifest_path();
    if !manifest_path.exists() {
        let _guard = store.lock()?;
        if !manifest_path.exists() {
            store.write_manifest(&Manifest::empty())?;
        }
    }
    let manifest = store.manifest()?;
    for entry in &manifest.artifacts {
        store.read_entry(entry)?;
    }
    Ok(store)
}

struct LockGuard(File);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

impl Store {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    pub fn dir(&self, kind: ArtifactKind) -> PathBuf {
        self.root.join(kind.dir())
    }

    fn lock(&self) -> Result<LockGuard, StoreError> {
        let path = self.root.join(LOCK);
        let f = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io(&path))?;
        f.lock().map_err(io(&path))?;
        Ok(LockGuard(f))
    }

    pub fn manifest(&self) -> Result<Manifest, StoreError> {
        let path = self.manifest_path();
        let raw = fs::read_to_string(&path).map_err(io(&path))?;
        #[derive(Deserialize)]
        struct VersionOnly {
            version: u32,
        }
        let version: VersionOnly = toml::from_str(&raw).map_err(|e| StoreError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if version.version != MANIFEST_VERSION {
            return Err(StoreError::VersionMismatch {
                found: version.version,
                supported: MANIFEST_VERSION,
            });
        }
        toml::from_str(&raw).map_err(|e| StoreError::Manifest {
            path,
            message: e.to_string(),
        })
    }

    fn write_manifest(&self, manifest: &Manifest) -> Result<(), StoreError> {
        let path = self.manifest_path();
        let raw = toml::to_string_pretty(manifest).map_err(|e| StoreError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        write_atomic(&path, raw.as_bytes())
    }

    fn read_entry(&self, entry: &ManifestEntry) -> Result<Vec<u8>, StoreError> {
        let path = self.root.join(&entry.file);
        let bytes = fs::read(&path).map_err(io(&path))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(StoreError::ChecksumMismatch { path });
        }
        Ok(bytes)
    }

    /// Atomically stores `bytes` as artifact `id`, replacing any older version.
    pub fn put(&self, kind: ArtifactKind, id: &str, bytes: &[u8]) -> Result<ManifestEntry, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::BadId(id.to_string()));
        }
        let _guard = self.lock()?;
        let sha = sha256_hex(bytes);
        let file = format!("{}/{id}.{}", kind.dir(), &sha[..12]);
        write_atomic(&self.root.join(&file), bytes)?;

        let mut manifest = self.manifest()?;
        let entry = ManifestEntry {
            kind,
            id: id.to_string(),
            file,
            sha256: sha,
            size: bytes.len() as u64,
        };
        let old = match manifest
            .artifacts
            .iter_mut()
            .find(|e| e.kind == kind && e.id == id)
        {
            Some(slot) => Some(std::mem::replace(slot, entry.clone())),
            None => {
                manifest.artifacts.push(entry.clone());
                None
            }
        };
        manifest.artifacts.sort_by(|a, b| (a.kind, &a.id).cmp(&(b.kind, &b.id)));
        self.write_manifest(&manifest)?;
        if let Some(old) = old.filter(|o| o.file != entry.file) {
            let _ = fs::remove_file(self.root.join(old.file));
        }
        Ok(entry)
    }

    /// Reads artifact `id`, verifying its checksum.
    pub fn get(&self, kind: ArtifactKind, id: &str) -> Result<Vec<u8>, StoreError> {
        // A writer may retire the file between our manifest read and the
        // file read; the second manifest read then sees the new entry.
        let mut last = None;
        for _ in 0..3 {
            let manifest = self.manifest()?;
            let entry = manifest.entry(kind, id).ok_or_else(|| StoreError::NotFound {
                kind,
                id: id.to_string(),
            })?;
            match self.read_entry(entry) {
                Err(StoreError::Io { source, path }) if source.kind() == std::io::ErrorKind::NotFound => {
                    last = Some(StoreError::Io { source, path });
                }
                other => return other,
            }
        }
        Err(last.expect("loop ran"))
    }

    pub fn remove(&self, kind: ArtifactKind, id: &str) -> Result<(), StoreError> {
        let _guard = self.lock()?;
        let mut manifest = self.manifest()?;
        let pos = manifest
            .artifacts
            .iter()
            .position(|e| e.kind == kind && e.id == id)
            .ok_or_else(|| StoreError::NotFound {
                kind,
                id: id.to_string(),
            })?;
        let old = manifest.artifacts.remove(pos);
        self.write_manifest(&manifest)?;
        let _ = fs::remove_file(self.root.join(old.file));
        Ok(())
    }

    pub fn list(&self, kind: ArtifactKind) -> Result<Vec<String>, StoreError> {
        Ok(self
            .manifest()?
            .artifacts
            .into_iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.id)
            .collect())
    }

    pub fn put_index(&self, id: &str, index: &CorpusIndex) -> Result<ManifestEntry, StoreError> {
        self.put(ArtifactKind::Index, id, &index.to_bytes())
    }

    pub fn get_index(&self, id: &str) -> Result<CorpusIndex, StoreError> {
        let bytes = self.get(ArtifactKind::Index, id)?;
        CorpusIndex::from_bytes(&bytes).map_err(|e| StoreError::Decode {
            id: id.to_string(),
            message: e.to_string(),
        })
    }

    pub fn get_text(&self, kind: ArtifactKind, id: &str) -> Result<String, StoreError> {
        let bytes = self.get(kind, id)?;
        String::from_utf8(bytes).map_err(|e| StoreError::Decode {
            id: id.to_string(),
            message: e.to_string(),
        })
    }
}
