//! Tree-search diagnosis: propose an action, run the tool, match experience,
//! backpropagate, reflect, and repeat until the search stalls or runs out of
//! budget.

pub mod advisors;
pub mod criteria;
pub mod engine;
pub mod prompts;
pub mod report;
pub mod tree;

pub use criteria::{parse_criteria, Condition, Criteria, Op, Truth};
pub use engine::{DiagnosisAbort, DiagnosisEngine, EngineConfig, EngineError, EngineMode, Investigation};
pub use prompts::{render_template, missing_slots, DEFAULT_TASK_DESCRIPTION, DEFAULT_TEMPLATE, TEMPLATE_SLOTS};
pub use report::{bullet_summary, render_markdown, DiagnosisReport, RootCause, SearchStats, Termination};
pub use tree::{abnormal_metrics_in, select, uct, DiagnosisTree, SearchParams, TreeError, TreeNode};
