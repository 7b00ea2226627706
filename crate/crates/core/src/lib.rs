//! Core data model and engines for a materials-provenance data hub.
//!
//! Samples are stored as typed synthesis-history graphs (GEMD++), mirrored
//! into a constraint-checked tabular catalog and a versioned object catalog,
//! and queried through a small federated pattern language. Every engine here
//! is an in-memory, deterministic state machine; durability, codecs and the
//! network surface live in the `qdh-hub` crate.
//!
//! The crate is `no_std` (it needs `alloc`).

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod access;
pub mod fixtures;
pub mod gemd;
pub mod graph_store;
pub mod matcher;
pub mod objects;
pub mod query;
pub mod shred;
pub mod state;
pub mod tabular;

pub use access::{AccessControl, Action, Decision, DecisionBasis, Rights, Role};
pub use gemd::{AttributeValue, EdgeLabel, GemdEdge, GemdGraph, GemdNode, NodeKind, ValidationReport};
pub use graph_store::{Binding, GraphStore, PathPattern};
pub use objects::{DictionaryEntry, ObjectStore, StoredObject};
pub use state::{HubState, Mutation, StoreOp};
pub use tabular::{Cell, Row, TabularStore};
