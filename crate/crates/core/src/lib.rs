//! Error-aware teacher-student data pipeline for biomedical relation
//! classification.
//!
//! The crate selects hard training instances by per-sample loss, asks a
//! pluggable teacher model for structured error analyses and remediations,
//! enriches instances with knowledge-graph facts, and emits curriculum-ordered
//! training datasets together with loss and schedule bookkeeping.
//!
//! Phases map onto modules:
//!
//! - [`selection`]: per-instance multi-label BCE and the `D_error` / `D_correct` split.
//! - [`taxonomy`], [`teacher`], [`kg`], [`remediation`]: error analysis, remediation
//!   and data cleaning, producing `D_rem`.
//! - [`mimic`], [`lisa`]: stage-1 student artifacts and the layer-selection plan.
//! - [`curriculum`]: difficulty buckets, Baby Steps stages and stage losses.
//! - [`pipeline`]: on-disk orchestration of all phases with manifests.

pub mod corpus;
pub mod curriculum;
pub mod error;
pub mod jsonl;
pub mod kg;
pub mod lisa;
pub mod mimic;
pub mod pipeline;
pub mod remediation;
pub mod selection;
pub mod taxonomy;
pub mod teacher;

pub use corpus::{EntitySpan, LabelSpace, Prediction, RelationInstance, Split};
pub use error::{Error, Result};
pub use kg::{EmbeddingIndex, KgStore, KgTriple};
pub use taxonomy::{ErrorAnnotation, ErrorTag, ErrorType};
