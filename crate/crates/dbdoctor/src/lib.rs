//! dbdoctor service: sessions, the HTTP API, the scenario bench and the
//! helpers behind the command line.

pub mod api;
pub mod bench;
pub mod config;
pub mod render;
pub mod runner;
pub mod session;

pub use bench::{load_scenarios, run_bench, BenchResult, Scenario};
pub use config::{AppConfig, Resources};
pub use render::{render_report, ReportFormat};
pub use runner::{AccessCounters, SessionMode};
pub use session::{Session, SessionManager, SessionStatus, SessionStore, StartRequest};
