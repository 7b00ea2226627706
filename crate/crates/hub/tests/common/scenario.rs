//! A fixed mutation script and a crash sweep over it.

use std::collections::BTreeMap;
use std::path::Path;

use qdh_core::access::Role;
use qdh_core::objects::ObjectUpload;
use qdh_core::state::ingest_mutation;
use qdh_core::{fixtures, DictionaryEntry, Mutation, Rights, StoreOp};
use qdh_hub::hub::contents_of;
use qdh_hub::journal::{check_consistency, CrashPoint};
use qdh_hub::{Hub, HubConfig};

use super::ADMIN;

const NOW: &str = "2025-01-01T00:00:00Z";

pub struct Step {
    pub mutation: Mutation,
    pub contents: BTreeMap<String, Vec<u8>>,
}

fn plain(mutation: Mutation) -> Step {
    Step {
        mutation,
        contents: BTreeMap::new(),
    }
}

/// Groups, the EuS bundle, Fixture B, then grants, dictionary and object
/// updates.
pub fn script() -> Vec<Step> {
    let mut out = vec![
        plain(Mutation::CreateGroup {
            actor: ADMIN.into(),
            group_id: "ga".into(),
            owner: "alice".into(),
        }),
        plain(Mutation::CreateGroup {
            actor: ADMIN.into(),
            group_id: "gb".into(),
            owner: "bob".into(),
        }),
        plain(Mutation::AddMember {
            actor: "alice".into(),
            group_id: "ga".into(),
            user: "carol".into(),
            role: Role::Student,
        }),
    ];
    let files = fixtures::eus_files();
    out.push(Step {
        mutation: ingest_mutation("alice", fixtures::eus_graph(), &files, NOW),
        contents: contents_of(&files),
    });
    for g in fixtures::fixture_b_graphs() {
        let files: Vec<(String, Vec<u8>)> = fixtures::fixture_b_files()
            .into_iter()
            .filter(|(s, _, _)| *s == g.sample_id)
            .map(|(_, p, c)| (p, c))
            .collect();
        out.push(Step {
            mutation: ingest_mutation("bob", g, &files, NOW),
            contents: contents_of(&files),
        });
    }
    out.push(plain(Mutation::Grant {
        actor: "alice".into(),
        subject: "bob".into(),
        object: fixtures::EUS_SAMPLE_ID.into(),
        rights: Rights::READ,
    }));
    out.push(plain(Mutation::UpdateDictionary {
        actor: "alice".into(),
        entry: DictionaryEntry {
            characterization: "Raman".into(),
            regex: r".*/raman/.*\.txt".into(),
            description: "Raman spectra".into(),
        },
    }));
    let note = b"second anneal looked cleaner\n".to_vec();
    out.push(Step {
        mutation: Mutation::PutObject {
            actor: "alice".into(),
            sample_id: fixtures::EUS_SAMPLE_ID.into(),
            upload: ObjectUpload::from_content("eus/raman/notes.txt", &note),
            now: NOW.into(),
        },
        contents: contents_of(&[(String::new(), note)]),
    });
    out.push(plain(Mutation::SetPublic {
        actor: "bob".into(),
        object: "fb-5".into(),
        public: true,
    }));
    out
}

fn config(dir: &Path, crash: Option<CrashPoint>) -> HubConfig {
    let mut c = HubConfig::new(dir, &[ADMIN]);
    c.crash = crash;
    c
}

/// State after opening an empty hub, then after each script step, plus the
/// total number of writer steps the whole script takes.
pub fn reference() -> (Vec<Vec<StoreOp>>, usize) {
    let dir = tempfile::tempdir().unwrap();
    let hub = Hub::open(&config(dir.path(), None)).unwrap();
    let mut states = vec![hub.snapshot().snapshot_ops()];
    for step in script() {
        hub.submit(step.mutation, &step.contents).unwrap();
        states.push(hub.snapshot().snapshot_ops());
    }
    (states, hub.writer_steps())
}

#[derive(Debug)]
pub struct CrashOutcome {
    /// Whether the injected fault fired at all.
    pub crashed: bool,
    /// Script steps reported successful before the crash.
    pub succeeded: usize,
    /// Script steps reflected in the recovered state.
    pub recovered: usize,
}

/// Runs the script with a crash at `point`, reopens, and checks that the
/// logs agree, the state is a prefix of the reference, every object's bytes
/// verify, and the rest of the script then completes.
pub fn crash_and_recover(point: CrashPoint, reference: &[Vec<StoreOp>]) -> Result<CrashOutcome, String> {
    let dir = tempfile::tempdir().unwrap();
    let script = script();
    let mut succeeded = 0;
    let mut crashed = false;
    match Hub::open(&config(dir.path(), Some(point))) {
        Err(_) => crashed = true,
        Ok(hub) => {
            for step in &script {
                match hub.submit(step.mutation.clone(), &step.contents) {
                    Ok(_) => succeeded += 1,
                    Err(e) if e.code() == "CRASHED" => {
                        crashed = true;
                        break;
                    }
                    Err(e) => return Err(format!("step {succeeded} failed before the crash: {e}")),
                }
            }
        }
    }

    let hub = Hub::open(&config(dir.path(), None)).map_err(|e| format!("reopen: {e}"))?;
    check_consistency(&hub.log_dir())?;
    let ops = hub.snapshot().snapshot_ops();
    let recovered = [succeeded, succeeded + 1]
        .into_iter()
        .find(|&n| reference.get(n) == Some(&ops))
        .ok_or_else(|| format!("recovered state matches no prefix near {succeeded}"))?;
    let snap = hub.snapshot();
    for object in snap.objects.latest() {
        let bytes = hub.read_object(object).map_err(|e| e.to_string())?;
        if qdh_core::objects::checksum(&bytes) != object.checksum {
            return Err(format!("{} does not verify", object.obj_store_path));
        }
    }
    for step in &script[recovered..] {
        hub.submit(step.mutation.clone(), &step.contents)
            .map_err(|e| format!("after recovery: {e}"))?;
    }
    if hub.snapshot().snapshot_ops() != *reference.last().unwrap() {
        return Err("finishing the script after recovery diverged".into());
    }
    Ok(CrashOutcome {
        crashed,
        succeeded,
        recovered,
    })
}

/// Crash points spread over the script: plain stops first, then torn
/// appends, keeping only points where the fault actually fires.
pub fn sweep(count: usize) -> Result<Vec<(CrashPoint, CrashOutcome)>, String> {
    let (reference, total) = reference();
    let mut candidates: Vec<CrashPoint> = Vec::new();
    for torn in [false, true] {
        for after_steps in 0..total {
            candidates.push(CrashPoint {
                after_steps,
                torn,
                abort: false,
            });
        }
    }
    let stride = (candidates.len() / count).max(1);
    let mut out = Vec::new();
    for offset in 0..stride {
        for point in candidates.iter().skip(offset).step_by(stride) {
            if out.len() == count {
                return Ok(out);
            }
            if out.iter().any(|(p, _): &(CrashPoint, CrashOutcome)| p == point) {
                continue;
            }
            let outcome = crash_and_recover(*point, &reference).map_err(|e| format!("{point:?}: {e}"))?;
            if outcome.crashed {
                out.push((*point, outcome));
            }
        }
    }
    if out.len() < count {
        return Err(format!("only {} of {count} crash points fired over {total} steps", out.len()));
    }
    Ok(out)
}
