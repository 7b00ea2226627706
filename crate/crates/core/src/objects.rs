//! Versioned object catalog and the characterization dictionary.
//!
//! The catalog holds metadata only. Content lives in a [`BlobStore`], keyed
//! by its SHA-256 digest, so identical uploads share storage.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::matcher::FullMatch;

pub const CHECKSUM_ALGORITHM: &str = "sha256";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredObject {
    pub obj_store_path: String,
    pub sample_id: String,
    pub size_bytes: u64,
    pub checksum: String,
    pub checksum_algorithm: String,
    pub uploaded_by: String,
    pub timestamp: String,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub characterization: String,
    pub regex: String,
    #[serde(default)]
    pub description: String,
}

/// Content that is about to be stored: a path plus the digest and size of
/// the bytes, which travel separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectUpload {
    pub path: String,
    pub checksum: String,
    pub size_bytes: u64,
}

impl ObjectUpload {
    pub fn from_content(path: impl Into<String>, content: &[u8]) -> Self {
        ObjectUpload {
            path: path.into(),
            checksum: checksum(content),
            size_bytes: content.len() as u64,
        }
    }
}

pub fn checksum(content: &[u8]) -> String {
    hex::encode(Sha256::digest(content))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ObjectError {
    #[error("EMPTY_PATH")]
    EmptyPath,
    #[error("QUOTA_EXCEEDED: {needed} bytes over a {quota} byte quota")]
    QuotaExceeded { needed: u64, quota: u64 },
    #[error("NOT_FOUND: {0}")]
    NotFound(String),
    #[error("UNKNOWN_VERSION: {path} v{version}")]
    UnknownVersion { path: String, version: u32 },
    #[error("UNKNOWN_CHARACTERIZATION: {0}")]
    UnknownCharacterization(String),
    #[error("BAD_REGEX: {0}")]
    BadRegex(String),
    #[error("CHECKSUM_MISMATCH: {path}")]
    ChecksumMismatch { path: String },
    #[error("SAMPLE_MISMATCH: {path} belongs to sample {owner}")]
    SampleMismatch { path: String, owner: String },
}

impl ObjectError {
    pub fn code(&self) -> &'static str {
        match self {
            ObjectError::EmptyPath => "EMPTY_PATH",
            ObjectError::QuotaExceeded { .. } => "QUOTA_EXCEEDED",
            ObjectError::NotFound(_) => "NOT_FOUND",
            ObjectError::UnknownVersion { .. } => "UNKNOWN_VERSION",
            ObjectError::UnknownCharacterization(_) => "UNKNOWN_CHARACTERIZATION",
            ObjectError::BadRegex(_) => "BAD_REGEX",
            ObjectError::ChecksumMismatch { .. } => "CHECKSUM_MISMATCH",
            ObjectError::SampleMismatch { .. } => "SAMPLE_MISMATCH",
        }
    }
}

/// Content storage keyed by checksum.
pub trait BlobStore {
    type Error;

    fn put_blob(&mut self, checksum: &str, content: &[u8]) -> Result<(), Self::Error>;
    fn get_blob(&self, checksum: &str) -> Result<Option<Vec<u8>>, Self::Error>;
}

#[derive(Debug, Clone, Default)]
pub struct MemBlobStore {
    blobs: BTreeMap<String, Vec<u8>>,
}

impl MemBlobStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl BlobStore for MemBlobStore {
    type Error = core::convert::Infallible;

    fn put_blob(&mut self, checksum: &str, content: &[u8]) -> Result<(), Self::Error> {
        self.blobs.entry(checksum.to_string()).or_insert_with(|| content.to_vec());
        Ok(())
    }

    fn get_blob(&self, checksum: &str) -> Result<Option<Vec<u8>>, Self::Error> {
        Ok(self.blobs.get(checksum).cloned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObjectStore {
    versions: BTreeMap<String, Vec<StoredObject>>,
    dictionary: BTreeMap<String, DictionaryEntry>,
    quota_bytes: Option<u64>,
    used_bytes: u64,
}

impl ObjectStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_quota(quota_bytes: u64) -> Self {
        ObjectStore {
            quota_bytes: Some(quota_bytes),
            ..Self::default()
        }
    }

    pub fn set_quota(&mut self, quota_bytes: Option<u64>) {
        self.quota_bytes = quota_bytes;
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    /// Metadata the next put at `upload.path` would record. Nothing changes.
    pub fn prepare_put(&self, upload: &ObjectUpload, sample_id: &str, uploader: &str, timestamp: &str) -> Result<StoredObject, ObjectError> {
        if upload.path.trim().is_empty() {
            return Err(ObjectError::EmptyPath);
        }
        if let Some(quota) = self.quota_bytes {
            let needed = self.used_bytes.saturating_add(upload.size_bytes);
            if needed > quota {
                return Err(ObjectError::QuotaExceeded { needed, quota });
            }
        }
        let previous = self.versions.get(&upload.path).and_then(|v| v.last());
        if let Some(prev) = previous {
            if prev.sample_id != sample_id {
                return Err(ObjectError::SampleMismatch {
                    path: upload.path.clone(),
                    owner: prev.sample_id.clone(),
                });
            }
        }
        Ok(StoredObject {
            obj_store_path: upload.path.clone(),
            sample_id: sample_id.to_string(),
            size_bytes: upload.size_bytes,
            checksum: upload.checksum.clone(),
            checksum_algorithm: CHECKSUM_ALGORITHM.to_string(),
            uploaded_by: uploader.to_string(),
            timestamp: timestamp.to_string(),
            version: previous.map_or(1, |p| p.version + 1),
        })
    }

    /// Records metadata produced by [`prepare_put`](Self::prepare_put).
    pub fn apply_put(&mut self, object: StoredObject) {
        self.used_bytes = self.used_bytes.saturating_add(object.size_bytes);
        self.versions
            .entry(object.obj_store_path.clone())
            .or_default()
            .push(object);
    }

    pub fn put_object(&mut self, upload: &ObjectUpload, sample_id: &str, uploader: &str, timestamp: &str) -> Result<StoredObject, ObjectError> {
        let object = self.prepare_put(upload, sample_id, uploader, timestamp)?;
        self.apply_put(object.clone());
        Ok(object)
    }

    /// `version = None` means latest.
    pub fn get_meta(&self, path: &str, version: Option<u32>) -> Result<&StoredObject, ObjectError> {
        let versions = self
            .versions
            .get(path)
            .ok_or_else(|| ObjectError::NotFound(path.to_string()))?;
        match version {
            None => Ok(versions.last().expect("stored paths have a version")),
            Some(v) => versions
                .get((v as usize).wrapping_sub(1))
                .ok_or_else(|| ObjectError::UnknownVersion {
                    path: path.to_string(),
                    version: v,
                }),
        }
    }

    pub fn contains(&self, path: &str) -> bool {
        self.versions.contains_key(path)
    }

    pub fn version_history(&self, path: &str) -> &[StoredObject] {
        self.versions.get(path).map_or(&[], Vec::as_slice)
    }

    /// Latest version of every path, in path order.
    pub fn latest(&self) -> impl Iterator<Item = &StoredObject> {
        self.versions.values().filter_map(|v| v.last())
    }

    pub fn latest_for_sample<'a>(&'a self, sample_id: &'a str) -> impl Iterator<Item = &'a StoredObject> + 'a {
        self.latest().filter(move |o| o.sample_id == sample_id)
    }

    pub fn dictionary(&self) -> impl Iterator<Item = &DictionaryEntry> {
        self.dictionary.values()
    }

    pub fn dictionary_entry(&self, characterization: &str) -> Option<&DictionaryEntry> {
        self.dictionary.get(characterization)
    }

    pub fn check_dictionary_entry(entry: &DictionaryEntry) -> Result<(), ObjectError> {
        if entry.characterization.trim().is_empty() {
            return Err(ObjectError::BadRegex("empty characterization name".into()));
        }
        FullMatch::new(&entry.regex).map_err(|e| ObjectError::BadRegex(e.to_string()))?;
        Ok(())
    }

    /// Adds or replaces an entry.
    pub fn update_dictionary(&mut self, entry: DictionaryEntry) -> Result<(), ObjectError> {
        Self::check_dictionary_entry(&entry)?;
        self.dictionary.insert(entry.characterization.clone(), entry);
        Ok(())
    }

    /// Latest-version paths whose full path matches the characterization's
    /// regex and whose sample is in `sample_ids`.
    pub fn find_by_characterization(&self, characterization: &str, sample_ids: &BTreeSet<String>) -> Result<Vec<String>, ObjectError> {
        Ok(self
            .find_objects(characterization, sample_ids)?
            .into_iter()
            .map(|o| o.obj_store_path.clone())
            .collect())
    }

    pub fn find_objects(&self, characterization: &str, sample_ids: &BTreeSet<String>) -> Result<Vec<&StoredObject>, ObjectError> {
        let entry = self
            .dictionary
            .get(characterization)
            .ok_or_else(|| ObjectError::UnknownCharacterization(characterization.to_string()))?;
        let re = FullMatch::new(&entry.regex).map_err(|e| ObjectError::BadRegex(e.to_string()))?;
        Ok(self
            .latest()
            .filter(|o| sample_ids.contains(&o.sample_id) && re.is_match(&o.obj_store_path))
            .collect())
    }

    /// Removes every version of `path`. Administrative use only.
    pub fn purge(&mut self, path: &str) -> Result<Vec<StoredObject>, ObjectError> {
        let removed = self
            .versions
            .remove(path)
            .ok_or_else(|| ObjectError::NotFound(path.to_string()))?;
        let freed: u64 = removed.iter().map(|o| o.size_bytes).sum();
        self.used_bytes = self.used_bytes.saturating_sub(freed);
        Ok(removed)
    }
}

/// Reads content back and checks it against the recorded digest.
pub fn read_verified<B: BlobStore>(blobs: &B, object: &StoredObject) -> Result<Option<Vec<u8>>, ReadError<B::Error>> {
    let Some(content) = blobs.get_blob(&object.checksum).map_err(ReadError::Blob)? else {
        return Ok(None);
    };
    if checksum(&content) != object.checksum {
        return Err(ReadError::Object(ObjectError::ChecksumMismatch {
            path: object.obj_store_path.clone(),
        }));
    }
    Ok(Some(content))
}

#[derive(Debug)]
pub enum ReadError<E> {
    Blob(E),
    Object(ObjectError),
}
