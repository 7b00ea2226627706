//! Object store laws under random put streams.

mod support;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use qdh_core::graph_store::{GraphStore, NeighborDirection};
use qdh_core::objects::{checksum, read_verified, BlobStore, MemBlobStore, ObjectStore, ObjectUpload};
use qdh_core::{fixtures, DictionaryEntry};

const PATHS: &[&str] = &[
    "s1/xrd/a.xy",
    "s1/xrd/b.xy",
    "s1/vsm/loop.csv",
    "s2/xrd/a.xy",
    "s2/raman/r.txt",
    "s3/notes.md",
];

fn sample_of(path: &str) -> &str {
    path.split('/').next().unwrap()
}

fn arb_puts() -> impl Strategy<Value = Vec<(usize, Vec<u8>)>> {
    prop::collection::vec((0..PATHS.len(), prop::collection::vec(any::<u8>(), 0..40)), 0..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Versions count up from 1 per path, older versions stay readable, and
    /// every read verifies against its digest.
    #[test]
    fn versions_are_dense_and_immutable(puts in arb_puts()) {
        let mut store = ObjectStore::new();
        let mut blobs = MemBlobStore::new();
        let mut model: BTreeMap<&str, Vec<Vec<u8>>> = BTreeMap::new();
        for (i, content) in &puts {
            let path = PATHS[*i];
            let upload = ObjectUpload::from_content(path, content);
            let stored = store.put_object(&upload, sample_of(path), "u", "t").unwrap();
            blobs.put_blob(&stored.checksum, content).unwrap();
            let history = model.entry(path).or_default();
            history.push(content.clone());
            prop_assert_eq!(stored.version as usize, history.len());
        }
        for (path, history) in &model {
            prop_assert_eq!(store.version_history(path).len(), history.len());
            for (v, content) in history.iter().enumerate() {
                let meta = store.get_meta(path, Some(v as u32 + 1)).unwrap();
                prop_assert_eq!(&meta.checksum, &checksum(content));
                prop_assert_eq!(read_verified(&blobs, meta).unwrap().unwrap(), content.clone());
            }
            prop_assert_eq!(store.get_meta(path, None).unwrap().version as usize, history.len());
            prop_assert!(store.get_meta(path, Some(history.len() as u32 + 1)).is_err());
        }
        let total: u64 = puts.iter().map(|(_, c)| c.len() as u64).sum();
        prop_assert_eq!(store.used_bytes(), total);
    }

    /// A quota admits exactly the prefix of puts whose running total fits.
    #[test]
    fn quota_is_a_hard_ceiling(puts in arb_puts(), quota in 0u64..400) {
        let mut store = ObjectStore::with_quota(quota);
        let mut used = 0u64;
        for (i, content) in &puts {
            let upload = ObjectUpload::from_content(PATHS[*i], content);
            let fits = used + content.len() as u64 <= quota;
            let r = store.put_object(&upload, sample_of(PATHS[*i]), "u", "t");
            prop_assert_eq!(r.is_ok(), fits);
            if fits {
                used += content.len() as u64;
            } else {
                prop_assert_eq!(r.unwrap_err().code(), "QUOTA_EXCEEDED");
            }
        }
        prop_assert!(store.used_bytes() <= quota);
    }

    /// Lookup by characterization equals a regex filter over latest paths.
    #[test]
    fn characterization_lookup_matches_regex_filter(
        puts in arb_puts(),
        pattern in prop::sample::select(vec![".*/xrd/.*", ".*\\.xy", "s1/.*", ".*", "s[12]/(xrd|vsm)/.*", "notes"]),
        scope in prop::collection::btree_set(prop::sample::select(vec!["s1", "s2", "s3"]), 0..=3),
    ) {
        let mut store = ObjectStore::new();
        for (i, content) in &puts {
            store
                .put_object(&ObjectUpload::from_content(PATHS[*i], content), sample_of(PATHS[*i]), "u", "t")
                .unwrap();
        }
        store
            .update_dictionary(DictionaryEntry {
                characterization: "C".into(),
                regex: pattern.into(),
                description: String::new(),
            })
            .unwrap();
        let scope: BTreeSet<String> = scope.into_iter().map(String::from).collect();
        let got = store.find_by_characterization("C", &scope).unwrap();
        let stored: BTreeSet<&str> = puts.iter().map(|(i, _)| PATHS[*i]).collect();
        let want: Vec<String> = stored
            .into_iter()
            .filter(|p| scope.contains(sample_of(p)) && support::full_match(pattern, p))
            .map(String::from)
            .collect();
        prop_assert_eq!(got, want);
    }
}

#[test]
fn paths_stay_with_their_sample() {
    let mut store = ObjectStore::new();
    store.put_object(&ObjectUpload::from_content("x/a", b"1"), "s1", "u", "t").unwrap();
    let err = store.put_object(&ObjectUpload::from_content("x/a", b"2"), "s2", "u", "t").unwrap_err();
    assert_eq!(err.code(), "SAMPLE_MISMATCH");
    assert_eq!(store.version_history("x/a").len(), 1);
}

/// Following neighbors forward and back from any node reaches the same
/// edge set the graph holds.
#[test]
fn neighbors_cover_every_incident_edge() {
    let g = fixtures::eus_graph();
    let mut store = GraphStore::new();
    store.upsert_sample_graph(&g.sample_id.clone(), g.clone()).unwrap();
    for node in g.nodes() {
        let out = store.neighbors(&node.node_id, NeighborDirection::Forward, None).unwrap();
        let inc = store.neighbors(&node.node_id, NeighborDirection::Reverse, None).unwrap();
        let both = store.neighbors(&node.node_id, NeighborDirection::Both, None).unwrap();
        let want_out = g.edges().iter().filter(|e| e.src == node.node_id).count();
        let want_in = g.edges().iter().filter(|e| e.dst == node.node_id).count();
        assert_eq!((out.len(), inc.len()), (want_out, want_in), "{}", node.node_id);
        assert_eq!(both.len(), want_out + want_in);
        for (edge, far) in &out {
            assert_eq!(edge.dst, far.node_id);
            let back = store.neighbors(&far.node_id, NeighborDirection::Reverse, None).unwrap();
            assert!(back.iter().any(|(e, n)| e == edge && n.node_id == node.node_id));
        }
    }
    assert!(store.neighbors("nope", NeighborDirection::Both, None).is_err());
}
