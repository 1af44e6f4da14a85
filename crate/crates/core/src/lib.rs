//! Core of dbdoctor: model gateway, experience extraction, tool and
//! knowledge retrieval, observation tools, the tree-search diagnosis engine,
//! prompt tuning and multi-agent orchestration.
//!
//! Everything here is synchronous. Sessions are expected to run on their own
//! threads; shared stores use interior locking.

pub mod collab;
pub mod diagnosis;
pub mod gateway;
pub mod knowledge;
pub mod observability;
pub mod promptlab;
pub mod retrieval;
pub mod text;
pub mod tools;
pub mod transcript;

pub use diagnosis::{DiagnosisReport, RootCause, SearchParams};
pub use gateway::{Gateway, LanguageModel};
pub use knowledge::{ExperienceSegment, KnowledgeBase};
pub use observability::{AnomalyAlert, SourceConfig};
pub use tools::{ToolBox, ToolSpec};
pub use transcript::{ChatRecord, SessionLog};
