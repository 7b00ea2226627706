#![allow(dead_code)]

use std::path::Path;

pub mod scenario;

use qdh_hub::client::Client;
use qdh_hub::service::{start, RunningServer, ServeOptions};
use qdh_hub::HubConfig;

pub const ADMIN: &str = "root";

pub const HEATING_QUERY: &str =
    r#"FROM sample {name = "Synthesized EuS"} MATCH (n {sample_id=$sample}) -[*]-> (m:process_run {name ~ ".*Heating.*"}) RETURN m.name"#;

pub const HEATING_NAMES: [&str; 6] = [
    "Heating Chunked Europium,Ground Purified Sulfur",
    "Heating EusNb2Se4 pellets (sealed vessel)",
    "Heating EusNb2Se4 vessel",
    "Heating Ground NbSe2 Mixture",
    "Heating Selenium",
    "Heating Sulfur",
];

pub struct TestHub {
    pub server: RunningServer,
    pub dir: tempfile::TempDir,
}

impl TestHub {
    pub fn start() -> TestHub {
        Self::with(|_| {})
    }

    pub fn with(tweak: impl FnOnce(&mut ServeOptions)) -> TestHub {
        let dir = tempfile::tempdir().unwrap();
        let mut opts = ServeOptions::new(HubConfig::new(dir.path().join("data"), &[ADMIN]));
        tweak(&mut opts);
        let server = start(opts).unwrap();
        TestHub { server, dir }
    }

    pub fn data_dir(&self) -> std::path::PathBuf {
        self.dir.path().join("data")
    }

    pub fn anon(&self) -> Client {
        Client::new(&self.server.url(), None)
    }

    pub fn as_user(&self, user: &str) -> Client {
        let anon = self.anon();
        let token = anon.login(user).unwrap();
        anon.with_token(token)
    }

    /// Groups `ga` (alice; carol a student) and `gb` (bob; dave).
    pub fn with_groups(self) -> TestHub {
        let root = self.as_user(ADMIN);
        root.create_group("ga", "alice").unwrap();
        root.create_group("gb", "bob").unwrap();
        self.as_user("alice").add_member("ga", "carol", "student", None).unwrap();
        self.as_user("bob").add_member("gb", "dave", "researcher", None).unwrap();
        self
    }
}

pub fn eus_json() -> String {
    qdh_hub::codec::json::to_gemd_json(&qdh_core::fixtures::eus_graph())
}

/// Ingests the EuS fixture as `client`, files included.
pub fn ingest_eus(client: &Client) -> serde_json::Value {
    client
        .ingest_bytes(eus_json().into_bytes(), "eus.json", None, None, &qdh_core::fixtures::eus_files())
        .unwrap()
}

pub fn column(v: &serde_json::Value, i: usize) -> Vec<String> {
    let mut out: Vec<String> = v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r[i].as_str().unwrap_or_default().to_string())
        .collect();
    out.sort();
    out
}

pub fn fixtures_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))
}
