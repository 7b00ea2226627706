//! The three bulk-upload encodings of a sample graph.
//!
//! * [`json`]: one canonical GEMD JSON document.
//! * [`graphml`]: the graphML subset written by procedure editors.
//! * [`dir`]: one JSON document per node, edges as relative file references,
//!   either as a directory tree or a zip archive of one.

pub mod dir;
pub mod graphml;
pub mod json;

use qdh_core::GemdGraph;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("MALFORMED at {location}: {message}")]
    Malformed { location: String, message: String },
    #[error("UNKNOWN_KIND at {location}: {kind:?}")]
    UnknownKind { location: String, kind: String },
    #[error("DANGLING_EDGE: {edge} references a missing node")]
    DanglingEdge { edge: String },
    #[error("MISSING_KEY: {key} at {location}")]
    MissingKey { key: String, location: String },
    #[error("BROKEN_REFERENCE: {path}")]
    BrokenReference { path: String },
    #[error("DUPLICATE_NODE_ID: {0}")]
    DuplicateNodeId(String),
    #[error("CYCLIC_REFERENCE: {0}")]
    CyclicReference(String),
    #[error("IO_ERROR: {0}")]
    Io(String),
}

impl CodecError {
    pub fn code(&self) -> &'static str {
        match self {
            CodecError::Malformed { .. } => "MALFORMED",
            CodecError::UnknownKind { .. } => "UNKNOWN_KIND",
            CodecError::DanglingEdge { .. } => "DANGLING_EDGE",
            CodecError::MissingKey { .. } => "MISSING_KEY",
            CodecError::BrokenReference { .. } => "BROKEN_REFERENCE",
            CodecError::DuplicateNodeId(_) => "DUPLICATE_NODE_ID",
            CodecError::CyclicReference(_) => "CYCLIC_REFERENCE",
            CodecError::Io(_) => "IO_ERROR",
        }
    }

    pub(crate) fn malformed(location: impl Into<String>, message: impl std::fmt::Display) -> Self {
        CodecError::Malformed {
            location: location.into(),
            message: message.to_string(),
        }
    }
}

/// Upload format of a bulk document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    GemdJson,
    GraphMl,
    Zip,
}

impl Format {
    /// Guesses the format from the leading bytes.
    pub fn sniff(bytes: &[u8]) -> Option<Format> {
        if bytes.starts_with(b"PK\x03\x04") || bytes.starts_with(b"PK\x05\x06") {
            return Some(Format::Zip);
        }
        let text = std::str::from_utf8(bytes.get(..bytes.len().min(512))?).ok()?;
        let head = text.trim_start_matches('\u{feff}').trim_start();
        if head.starts_with('{') {
            Some(Format::GemdJson)
        } else if head.starts_with('<') {
            Some(Format::GraphMl)
        } else {
            None
        }
    }

    pub fn parse(name: &str) -> Option<Format> {
        match name {
            "json" | "gemd" | "gemd_json" => Some(Format::GemdJson),
            "graphml" => Some(Format::GraphMl),
            "zip" | "dir" | "directory" => Some(Format::Zip),
            _ => None,
        }
    }
}

/// A decoded bulk upload: the graph plus any files that came with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub graph: GemdGraph,
    pub files: Vec<(String, Vec<u8>)>,
}

/// Decodes a bulk document in any supported format.
pub fn decode(bytes: &[u8], format: Option<Format>) -> Result<Decoded, CodecError> {
    let format = format
        .or_else(|| Format::sniff(bytes))
        .ok_or_else(|| CodecError::malformed("document", "unrecognized upload format"))?;
    match format {
        Format::GemdJson => {
            let text = std::str::from_utf8(bytes).map_err(|e| CodecError::malformed("document", e))?;
            Ok(Decoded {
                graph: json::parse_gemd_json(text)?,
                files: Vec::new(),
            })
        }
        Format::GraphMl => {
            let text = std::str::from_utf8(bytes).map_err(|e| CodecError::malformed("document", e))?;
            Ok(Decoded {
                graph: graphml::parse_graphml(text)?,
                files: Vec::new(),
            })
        }
        Format::Zip => dir::parse_zip(bytes),
    }
}
