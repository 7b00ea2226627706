//! Blocking HTTP client for the `/v1` API, used by the `qdh` CLI and tests.

use std::path::Path;
use std::time::Duration;

use reqwest::blocking::multipart::{Form, Part};
use reqwest::blocking::{Client as Http, RequestBuilder, Response};
use serde::Serialize;
use serde_json::{json, Value};

use crate::codec::dir::zip_directory;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach {url}: {message}")]
    Connect { url: String, message: String },
    #[error("{code}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
        details: Value,
        request_id: Option<String>,
    },
    #[error("{0}")]
    Local(String),
}

impl ClientError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Connect { .. } => 3,
            ClientError::Api { status: 401, .. } => 4,
            ClientError::Api { status: 403, .. } => 5,
            _ => 1,
        }
    }

    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    token: Option<String>,
    http: Http,
}

impl Client {
    pub fn new(base: &str, token: Option<String>) -> Self {
        Client {
            base: base.trim_end_matches('/').to_string(),
            token,
            http: Http::builder()
                .timeout(Duration::from_secs(600))
                .build()
                .expect("http client"),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn with_token(&self, token: impl Into<String>) -> Self {
        Client {
            token: Some(token.into()),
            ..self.clone()
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn authed(&self, rb: RequestBuilder) -> RequestBuilder {
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    fn send(&self, rb: RequestBuilder) -> Result<Response> {
        let resp = self.authed(rb).send().map_err(|e| ClientError::Connect {
            url: self.base.clone(),
            message: e.to_string(),
        })?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status().as_u16();
        let body: Value = resp.json().unwrap_or(Value::Null);
        let text = |k: &str| body.get(k).and_then(Value::as_str).map(str::to_string);
        Err(ClientError::Api {
            status,
            code: text("code").unwrap_or_else(|| format!("HTTP_{status}")),
            message: text("message").unwrap_or_default(),
            details: body.get("details").cloned().unwrap_or(Value::Null),
            request_id: text("request_id"),
        })
    }

    fn json(&self, rb: RequestBuilder) -> Result<Value> {
        self.send(rb)?
            .json()
            .map_err(|e| ClientError::Local(format!("unreadable response: {e}")))
    }

    fn post_json(&self, path: &str, body: &impl Serialize) -> Result<Value> {
        self.json(self.http.post(self.url(path)).json(body))
    }

    fn get_json(&self, path: &str) -> Result<Value> {
        self.json(self.http.get(self.url(path)))
    }

    /// Asks the mock identity provider for a token.
    pub fn login(&self, user: &str) -> Result<String> {
        let v = self.post_json("/mock-idp/issue", &json!({"user_id": user}))?;
        v["token"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ClientError::Local("identity provider returned no token".into()))
    }

    pub fn whoami(&self) -> Result<Value> {
        self.post_json("/v1/auth/verify", &json!({}))
    }

    pub fn health(&self) -> Result<()> {
        self.send(self.http.get(self.url("/healthz"))).map(|_| ())
    }

    /// Uploads a bundle file: `.graphml`, `.json`, `.zip`, or a directory,
    /// which is zipped first.
    pub fn ingest_path(&self, path: &Path, mode: Option<&str>, format: Option<&str>) -> Result<Value> {
        let (bytes, name) = if path.is_dir() {
            let zipped = zip_directory(path).map_err(|e| ClientError::Local(e.to_string()))?;
            let name = format!(
                "{}.zip",
                path.file_name().and_then(|n| n.to_str()).unwrap_or("bundle")
            );
            (zipped, name)
        } else {
            let bytes = std::fs::read(path).map_err(|e| ClientError::Local(format!("{}: {e}", path.display())))?;
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("bundle").to_string();
            (bytes, name)
        };
        self.ingest_bytes(bytes, &name, mode, format, &[])
    }

    /// Uploads bundle bytes plus extra object files keyed by hub path.
    pub fn ingest_bytes(&self, bytes: Vec<u8>, file_name: &str, mode: Option<&str>, format: Option<&str>, objects: &[(String, Vec<u8>)]) -> Result<Value> {
        let mut form = Form::new().part("bundle", Part::bytes(bytes).file_name(file_name.to_string()));
        if let Some(m) = mode {
            form = form.text("mode", m.to_string());
        }
        if let Some(f) = format {
            form = form.text("format", f.to_string());
        }
        for (path, content) in objects {
            form = form.part("object", Part::bytes(content.clone()).file_name(path.clone()));
        }
        self.json(self.http.post(self.url("/v1/ingest/bulk")).multipart(form))
    }

    pub fn list_samples(&self) -> Result<Vec<Value>> {
        self.all_pages("/v1/samples", "samples")
    }

    pub fn get_sample(&self, id: &str, version: Option<usize>) -> Result<Value> {
        let mut rb = self.http.get(self.url(&format!("/v1/samples/{}", encode_segment(id))));
        if let Some(v) = version {
            rb = rb.query(&[("version", v)]);
        }
        self.json(rb)
    }

    /// Runs a query and follows cursors until every row is fetched.
    pub fn query(&self, text: &str) -> Result<Value> {
        let mut cursor: Option<String> = None;
        let mut rows: Vec<Value> = Vec::new();
        loop {
            let page = self.post_json("/v1/query", &json!({"query": text, "cursor": cursor, "limit": 1000}))?;
            rows.extend(page["rows"].as_array().cloned().unwrap_or_default());
            match page["next_cursor"].as_str() {
                Some(c) => cursor = Some(c.to_string()),
                None => return Ok(json!({"columns": page["columns"], "rows": rows, "next_cursor": null})),
            }
        }
    }

    /// One page of query results, exactly as the server sent it.
    pub fn query_page(&self, text: &str, cursor: Option<&str>, limit: Option<usize>) -> Result<Value> {
        self.post_json("/v1/query", &json!({"query": text, "cursor": cursor, "limit": limit}))
    }

    pub fn navigate(&self, id: &str) -> Result<Vec<Value>> {
        let path = format!("/v1/navigate/{}", id.split('/').map(encode_segment).collect::<Vec<_>>().join("/"));
        self.all_pages(&path, "items")
    }

    fn all_pages(&self, path: &str, field: &str) -> Result<Vec<Value>> {
        let mut out = Vec::new();
        let mut cursor: Option<String> = None;
        loop {
            let mut rb = self.http.get(self.url(path)).query(&[("limit", "1000")]);
            if let Some(c) = &cursor {
                rb = rb.query(&[("cursor", c)]);
            }
            let page = self.json(rb)?;
            out.extend(page[field].as_array().cloned().unwrap_or_default());
            match page["next_cursor"].as_str() {
                Some(c) => cursor = Some(c.to_string()),
                None => return Ok(out),
            }
        }
    }

    /// Object bytes plus their recorded checksum.
    pub fn get_object(&self, path: &str, version: Option<u32>) -> Result<(Vec<u8>, String)> {
        let mut rb = self.http.get(self.url("/v1/objects")).query(&[("path", path)]);
        if let Some(v) = version {
            rb = rb.query(&[("version", v)]);
        }
        let resp = self.send(rb)?;
        let checksum = resp
            .headers()
            .get("x-qdh-checksum")
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string();
        let bytes = resp.bytes().map_err(|e| ClientError::Local(e.to_string()))?;
        Ok((bytes.to_vec(), checksum))
    }

    pub fn object_meta(&self, path: &str, version: Option<u32>) -> Result<Value> {
        let mut rb = self.http.get(self.url("/v1/objects")).query(&[("path", path), ("meta", "true")]);
        if let Some(v) = version {
            rb = rb.query(&[("version", v)]);
        }
        self.json(rb)
    }

    pub fn object_history(&self, path: &str) -> Result<Value> {
        self.json(self.http.get(self.url("/v1/objects")).query(&[("path", path), ("history", "true")]))
    }

    pub fn put_object(&self, sample: &str, path: &str, content: Vec<u8>) -> Result<Value> {
        let rb = self
            .http
            .post(self.url(&format!("/v1/samples/{}/objects", encode_segment(sample))))
            .query(&[("path", path)])
            .body(content);
        self.json(rb)
    }

    pub fn create_group(&self, group: &str, owner: &str) -> Result<Value> {
        self.post_json("/v1/groups", &json!({"group_id": group, "owner": owner}))
    }

    pub fn add_member(&self, group: &str, user: &str, role: &str, representative: Option<bool>) -> Result<Value> {
        self.post_json(
            &format!("/v1/groups/{}/members", encode_segment(group)),
            &json!({"user": user, "role": role, "representative": representative}),
        )
    }

    pub fn grant(&self, subject: &str, object: &str, rights: &[&str]) -> Result<Value> {
        self.post_json("/v1/grants", &json!({"subject": subject, "object": object, "rights": rights}))
    }

    pub fn set_public(&self, sample: &str, public: bool) -> Result<Value> {
        self.post_json(&format!("/v1/samples/{}/public", encode_segment(sample)), &json!({"public": public}))
    }

    pub fn tombstone(&self, object: &str) -> Result<Value> {
        self.post_json("/v1/admin/tombstone", &json!({"object": object}))
    }

    pub fn restore(&self, object: &str) -> Result<Value> {
        self.post_json("/v1/admin/restore", &json!({"object": object}))
    }

    pub fn insert_row(&self, table: &str, row: &Value, sample: Option<&str>) -> Result<Value> {
        self.post_json(&format!("/v1/tables/{}/rows", encode_segment(table)), &json!({"row": row, "sample": sample}))
    }

    pub fn onboard_schema(&self, extension: &Value) -> Result<Value> {
        self.post_json("/v1/onboarding/schema", extension)
    }

    pub fn onboard_dictionary(&self, entries: &Value) -> Result<Value> {
        self.post_json("/v1/onboarding/dictionary", entries)
    }

    pub fn procedure_library(&self) -> Result<Value> {
        self.get_json("/v1/procedures/library")
    }

    pub fn validate_procedure(&self, graphml: &str) -> Result<Value> {
        self.json(self.http.post(self.url("/v1/procedures/validate")).body(graphml.to_string()))
    }

    pub fn submit_procedure(&self, graphml: &str, metadata: &Value) -> Result<Value> {
        self.post_json("/v1/procedures/submit", &json!({"graphml": graphml, "metadata": metadata}))
    }

    pub fn access_log(&self) -> Result<Vec<Value>> {
        self.all_pages("/v1/log", "records")
    }
}

/// Percent-encodes one path segment.
pub fn encode_segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
