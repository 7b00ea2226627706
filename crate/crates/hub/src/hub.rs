//! The durable hub: one writer, many snapshot readers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use qdh_core::fixtures::default_dictionary;
use qdh_core::objects::{read_verified, BlobStore, ReadError, StoredObject};
use qdh_core::state::{HubError, Outcome};
use qdh_core::{HubState, Mutation, StoreOp};

use crate::blob::FsBlobStore;
use crate::journal::{CrashPoint, Journal, JournalError, RecoveryReport};

#[derive(Debug, Clone)]
pub struct HubConfig {
    pub data_dir: PathBuf,
    pub admins: Vec<String>,
    pub quota_bytes: Option<u64>,
    pub crash: Option<CrashPoint>,
}

impl HubConfig {
    pub fn new(data_dir: impl Into<PathBuf>, admins: &[&str]) -> Self {
        HubConfig {
            data_dir: data_dir.into(),
            admins: admins.iter().map(|a| a.to_string()).collect(),
            quota_bytes: None,
            crash: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("MISSING_CONTENT: no bytes supplied for {0}")]
    MissingContent(String),
    #[error("IO_ERROR: {0}")]
    Io(String),
}

impl SubmitError {
    pub fn code(&self) -> &str {
        match self {
            SubmitError::Hub(e) => e.code(),
            SubmitError::Journal(JournalError::Crashed { .. }) => "CRASHED",
            SubmitError::Journal(JournalError::Poisoned) => "POISONED",
            SubmitError::Journal(JournalError::Corrupt { .. }) => "CORRUPT_LOG",
            SubmitError::Journal(JournalError::Io(_)) | SubmitError::Io(_) => "IO_ERROR",
            SubmitError::MissingContent(_) => "MISSING_CONTENT",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OpenError {
    #[error("data directory {path}: {message}")]
    DataDir { path: String, message: String },
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("log replay failed: {0}")]
    Replay(#[from] HubError),
}

#[derive(Debug, Clone)]
pub struct Committed {
    pub outcome: Outcome,
    /// `None` when the mutation changed nothing.
    pub txid: Option<u64>,
}

struct Writer {
    journal: Journal,
    blobs: FsBlobStore,
    poisoned: bool,
}

pub struct Hub {
    state: RwLock<Arc<HubState>>,
    writer: Mutex<Writer>,
    blobs: FsBlobStore,
    data_dir: PathBuf,
    recovery: RecoveryReport,
}

fn log_dir(data_dir: &Path) -> PathBuf {
    data_dir.join("log")
}

impl Hub {
    /// Opens or creates the hub in `config.data_dir`, replaying its logs.
    pub fn open(config: &HubConfig) -> Result<Hub, OpenError> {
        let dir = &config.data_dir;
        let data_err = |e: std::io::Error| OpenError::DataDir {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(data_err)?;
        // Fail early on a read-only directory rather than on the first write.
        let probe = dir.join(".write-probe");
        std::fs::write(&probe, b"ok").map_err(data_err)?;
        let _ = std::fs::remove_file(&probe);

        let blobs = FsBlobStore::open(dir.join("objects")).map_err(data_err)?;
        let (mut journal, committed, recovery) = Journal::open(&log_dir(dir), config.crash)?;
        let mut state = HubState::replay(&config.admins, committed.iter().flat_map(|(_, ops)| ops))?;
        if committed.is_empty() {
            let ops: Vec<StoreOp> = default_dictionary()
                .into_iter()
                .map(|entry| StoreOp::UpdateDictionary { entry })
                .collect();
            journal.commit(&ops)?;
            for op in &ops {
                state.apply(op)?;
            }
        }
        state.objects.set_quota(config.quota_bytes);
        Ok(Hub {
            state: RwLock::new(Arc::new(state)),
            writer: Mutex::new(Writer {
                journal,
                blobs: blobs.clone(),
                poisoned: false,
            }),
            blobs,
            data_dir: dir.clone(),
            recovery,
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn log_dir(&self) -> PathBuf {
        log_dir(&self.data_dir)
    }

    pub fn recovery(&self) -> &RecoveryReport {
        &self.recovery
    }

    /// A consistent view of every store.
    pub fn snapshot(&self) -> Arc<HubState> {
        self.state.read().expect("state lock").clone()
    }

    /// Checks, persists and installs one mutation. `contents` supplies the
    /// bytes of every object the mutation uploads, keyed by checksum.
    pub fn submit(&self, mutation: Mutation, contents: &BTreeMap<String, Vec<u8>>) -> Result<Committed, SubmitError> {
        let mut writer = self.writer.lock().expect("writer lock");
        if writer.poisoned {
            return Err(JournalError::Poisoned.into());
        }
        let current = self.snapshot();
        let prepared = current.prepare(mutation)?;
        if prepared.ops.is_empty() {
            return Ok(Committed {
                outcome: prepared.outcome,
                txid: None,
            });
        }
        let result = Self::persist(&mut writer, &prepared.ops, contents);
        match result {
            Ok(txid) => {
                *self.state.write().expect("state lock") = Arc::new(prepared.next);
                Ok(Committed {
                    outcome: prepared.outcome,
                    txid: Some(txid),
                })
            }
            Err(e) => {
                if !matches!(e, SubmitError::MissingContent(_)) {
                    writer.poisoned = true;
                }
                Err(e)
            }
        }
    }

    fn persist(writer: &mut Writer, ops: &[StoreOp], contents: &BTreeMap<String, Vec<u8>>) -> Result<u64, SubmitError> {
        for op in ops {
            if let StoreOp::PutObject { object } = op {
                if writer.blobs.get_blob(&object.checksum).map_err(|e| SubmitError::Io(e.to_string()))?.is_some() {
                    continue;
                }
                let bytes = contents
                    .get(&object.checksum)
                    .ok_or_else(|| SubmitError::MissingContent(object.obj_store_path.clone()))?;
                writer
                    .blobs
                    .put_blob(&object.checksum, bytes)
                    .map_err(|e| SubmitError::Io(e.to_string()))?;
                writer.journal.fault.checkpoint()?;
            }
        }
        Ok(writer.journal.commit(ops)?)
    }

    /// Reads object content, checking it against the recorded checksum.
    pub fn read_object(&self, object: &StoredObject) -> Result<Vec<u8>, SubmitError> {
        match read_verified(&self.blobs, object) {
            Ok(Some(c)) => Ok(c),
            Ok(None) => Err(SubmitError::Io(format!("blob for {} is missing", object.obj_store_path))),
            Err(ReadError::Object(e)) => Err(SubmitError::Io(e.to_string())),
            Err(ReadError::Blob(e)) => Err(SubmitError::Io(e.to_string())),
        }
    }

    /// Steps the writer has completed; used by crash tests to size their
    /// sweeps.
    pub fn writer_steps(&self) -> usize {
        self.writer.lock().expect("writer lock").journal.fault.steps()
    }
}

/// Checksum-keyed content map for an upload list.
pub fn contents_of(files: &[(String, Vec<u8>)]) -> BTreeMap<String, Vec<u8>> {
    files
        .iter()
        .map(|(_, c)| (qdh_core::objects::checksum(c), c.clone()))
        .collect()
}
