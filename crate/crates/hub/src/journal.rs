//! Durable multi-store commit log.
//!
//! A transaction is written as
//!
//! 1. a `begin` record carrying every store operation, to `intent.jsonl`;
//! 2. one record per touched store, to that store's own log;
//! 3. a `commit` marker, to `intent.jsonl`.
//!
//! Each append is fsynced before the next starts. On open, transactions
//! without a commit marker are discarded from every log and committed ones
//! are rolled forward into any store log that lacks them, so the four store
//! logs always agree. A partial final line (a torn append) is dropped; an
//! unparseable complete line anywhere is corruption and opening fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use qdh_core::state::StoreKind;
use qdh_core::StoreOp;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const INTENT_LOG: &str = "intent.jsonl";

pub fn store_log_name(kind: StoreKind) -> &'static str {
    match kind {
        StoreKind::Graph => "graph.jsonl",
        StoreKind::Tabular => "tabular.jsonl",
        StoreKind::Objects => "objects.jsonl",
        StoreKind::Access => "acl.jsonl",
    }
}

pub const STORES: [StoreKind; 4] = [StoreKind::Access, StoreKind::Graph, StoreKind::Tabular, StoreKind::Objects];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rec", rename_all = "snake_case")]
pub enum IntentRecord {
    Begin { txid: u64, ops: Vec<StoreOp> },
    Commit { txid: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub txid: u64,
    pub ops: Vec<StoreOp>,
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("IO_ERROR: {0}")]
    Io(#[from] io::Error),
    #[error("CORRUPT_LOG: {file} line {line}: {message}")]
    Corrupt { file: String, line: usize, message: String },
    #[error("CRASHED: injected crash after step {step}")]
    Crashed { step: usize },
    #[error("POISONED: an earlier commit failed midway; reopen the hub to recover")]
    Poisoned,
}

/// Where to stop, counted in completed internal steps across the writer's
/// lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrashPoint {
    pub after_steps: usize,
    /// Leave half of the next append on disk before stopping.
    pub torn: bool,
    /// Abort the process instead of returning an error.
    pub abort: bool,
}

impl CrashPoint {
    /// Parses `N`, `N:torn`, as found in `QDH_CRASH_AT`.
    pub fn parse(text: &str, abort: bool) -> Option<CrashPoint> {
        let (n, torn) = match text.split_once(':') {
            Some((n, "torn")) => (n, true),
            Some(_) => return None,
            None => (text, false),
        };
        Some(CrashPoint {
            after_steps: n.trim().parse().ok()?,
            torn,
            abort,
        })
    }
}

#[derive(Debug, Default)]
pub struct FaultInjector {
    point: Option<CrashPoint>,
    steps: usize,
}

impl FaultInjector {
    pub fn new(point: Option<CrashPoint>) -> Self {
        FaultInjector { point, steps: 0 }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn crash(&self) -> JournalError {
        if self.point.is_some_and(|p| p.abort) {
            eprintln!("qdh: injected crash after step {}", self.steps);
            std::process::abort();
        }
        JournalError::Crashed { step: self.steps }
    }

    /// Whether the write about to happen is the one that gets torn.
    fn tears_next(&self) -> bool {
        self.point.is_some_and(|p| p.torn && p.after_steps == self.steps)
    }

    /// Records one completed step; fails if the crash point is reached.
    pub fn step(&mut self) -> Result<(), JournalError> {
        if self.point.is_some_and(|p| !p.torn && p.after_steps == self.steps) {
            return Err(self.crash());
        }
        self.steps += 1;
        Ok(())
    }

    /// Appends `line` (plus newline) to `file` as one step, honouring a torn
    /// crash point.
    pub fn append(&mut self, file: &mut File, line: &str) -> Result<(), JournalError> {
        let mut bytes = line.as_bytes().to_vec();
        bytes.push(b'\n');
        if self.tears_next() {
            file.write_all(&bytes[..bytes.len() / 2])?;
            file.sync_data()?;
            return Err(self.crash());
        }
        self.step()?;
        file.write_all(&bytes)?;
        file.sync_data()?;
        Ok(())
    }

    /// A non-append step (for example a blob write).
    pub fn checkpoint(&mut self) -> Result<(), JournalError> {
        if self.tears_next() {
            return Err(self.crash());
        }
        self.step()
    }
}

/// Complete lines of a log, truncating a torn tail in place.
fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JournalError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(complete as u64)?;
        f.sync_all()?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut out = Vec::new();
    for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let rec = serde_json::from_slice(line).map_err(|e| JournalError::Corrupt {
            file: name.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn rewrite<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JournalError> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = File::create(&tmp)?;
        for r in records {
            let mut line = serde_json::to_string(r).expect("log records serialize");
            line.push('\n');
            f.write_all(line.as_bytes())?;
        }
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn open_append(path: &Path) -> io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}

/// What recovery found and did.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RecoveryReport {
    pub committed: usize,
    pub discarded: Vec<u64>,
    pub rolled_forward: Vec<(u64, String)>,
}

pub struct Journal {
    dir: PathBuf,
    intent: File,
    stores: BTreeMap<StoreKind, File>,
    next_txid: u64,
    pub fault: FaultInjector,
}

/// Committed transactions in commit order.
pub type Committed = Vec<(u64, Vec<StoreOp>)>;

impl Journal {
    /// Opens (creating if needed) the logs in `dir`, recovering as described
    /// in the module docs.
    pub fn open(dir: &Path, crash: Option<CrashPoint>) -> Result<(Journal, Committed, RecoveryReport), JournalError> {
        fs::create_dir_all(dir)?;
        let intent_path = dir.join(INTENT_LOG);
        let records: Vec<IntentRecord> = read_lines(&intent_path)?;

        let mut begun: BTreeMap<u64, Vec<StoreOp>> = BTreeMap::new();
        let mut order = Vec::new();
        let mut max_txid = 0;
        for r in records {
            match r {
                IntentRecord::Begin { txid, ops } => {
                    max_txid = max_txid.max(txid);
                    begun.insert(txid, ops);
                }
                IntentRecord::Commit { txid } => {
                    if begun.contains_key(&txid) {
                        order.push(txid);
                    }
                }
            }
        }
        let committed_ids: BTreeSet<u64> = order.iter().copied().collect();
        let mut report = RecoveryReport {
            committed: order.len(),
            discarded: begun.keys().filter(|t| !committed_ids.contains(t)).copied().collect(),
            rolled_forward: Vec::new(),
        };
        let committed: Committed = order.iter().map(|t| (*t, begun[t].clone())).collect();

        if !report.discarded.is_empty() {
            let mut kept = Vec::new();
            for (txid, ops) in &committed {
                kept.push(IntentRecord::Begin {
                    txid: *txid,
                    ops: ops.clone(),
                });
                kept.push(IntentRecord::Commit { txid: *txid });
            }
            rewrite(&intent_path, &kept)?;
        }

        for kind in STORES {
            let path = dir.join(store_log_name(kind));
            let have: Vec<StoreRecord> = read_lines(&path)?;
            let want = expected_store_records(&committed, kind);
            if have != want {
                let have_ids: BTreeSet<u64> = have.iter().map(|r| r.txid).collect();
                for r in &want {
                    if !have_ids.contains(&r.txid) {
                        report.rolled_forward.push((r.txid, store_log_name(kind).to_string()));
                    }
                }
                rewrite(&path, &want)?;
            }
        }

        let mut stores = BTreeMap::new();
        for kind in STORES {
            stores.insert(kind, open_append(&dir.join(store_log_name(kind)))?);
        }
        let journal = Journal {
            dir: dir.to_path_buf(),
            intent: open_append(&intent_path)?,
            stores,
            next_txid: max_txid + 1,
            fault: FaultInjector::new(crash),
        };
        Ok((journal, committed, report))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Durably commits `ops` as one transaction and returns its id.
    pub fn commit(&mut self, ops: &[StoreOp]) -> Result<u64, JournalError> {
        let txid = self.next_txid;
        self.next_txid += 1;
        let begin = IntentRecord::Begin { txid, ops: ops.to_vec() };
        self.fault
            .append(&mut self.intent, &serde_json::to_string(&begin).expect("records serialize"))?;
        for kind in STORES {
            let mine: Vec<StoreOp> = ops.iter().filter(|o| o.store() == kind).cloned().collect();
            if mine.is_empty() {
                continue;
            }
            let rec = StoreRecord { txid, ops: mine };
            let file = self.stores.get_mut(&kind).expect("every store log is open");
            self.fault.append(file, &serde_json::to_string(&rec).expect("records serialize"))?;
        }
        let commit = IntentRecord::Commit { txid };
        self.fault
            .append(&mut self.intent, &serde_json::to_string(&commit).expect("records serialize"))?;
        Ok(txid)
    }
}

fn expected_store_records(committed: &Committed, kind: StoreKind) -> Vec<StoreRecord> {
    committed
        .iter()
        .filter_map(|(txid, ops)| {
            let mine: Vec<StoreOp> = ops.iter().filter(|o| o.store() == kind).cloned().collect();
            (!mine.is_empty()).then_some(StoreRecord { txid: *txid, ops: mine })
        })
        .collect()
}

/// Reads every log without modifying anything and checks that each store
/// log holds exactly the committed transactions' operations for that store.
/// Returns the committed transactions on success.
pub fn check_consistency(dir: &Path) -> Result<Committed, String> {
    let read = |name: &str| -> Result<Vec<u8>, String> {
        match fs::read(dir.join(name)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(format!("{name}: {e}")),
        }
    };
    fn parse<T: DeserializeOwned>(name: &str, bytes: &[u8]) -> Result<Vec<T>, String> {
        if !bytes.is_empty() && !bytes.ends_with(b"\n") {
            return Err(format!("{name}: torn tail"));
        }
        bytes
            .split(|&b| b == b'\n')
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_slice(l).map_err(|e| format!("{name}: {e}")))
            .collect()
    }
    let intent: Vec<IntentRecord> = parse(INTENT_LOG, &read(INTENT_LOG)?)?;
    let mut begun = BTreeMap::new();
    let mut committed = Vec::new();
    for r in intent {
        match r {
            IntentRecord::Begin { txid, ops } => {
                begun.insert(txid, ops);
            }
            IntentRecord::Commit { txid } => {
                let ops = begun.remove(&txid).ok_or_else(|| format!("commit without begin for tx {txid}"))?;
                committed.push((txid, ops));
            }
        }
    }
    if let Some(t) = begun.keys().next() {
        return Err(format!("tx {t} begun but never committed"));
    }
    for kind in STORES {
        let name = store_log_name(kind);
        let have: Vec<StoreRecord> = parse(name, &read(name)?)?;
        if have != expected_store_records(&committed, kind) {
            return Err(format!("{name} disagrees with the intent log"));
        }
    }
    Ok(committed)
}
