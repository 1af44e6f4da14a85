//! Stand-in optimization advisors. They return canned, argument-dependent
//! recommendations so solution-stage tools can be exercised without a
//! live database.

use crate::tools::{ToolArgs, ToolContext, ToolExecutor, ToolOutput};
use serde_json::Value;
use std::collections::HashMap;
use std::sync::Arc;

fn arg<'a>(args: &'a ToolArgs, key: &str, default: &'a str) -> &'a str {
    args.get(key).and_then(Value::as_str).unwrap_or(default)
}

struct IndexAdvisor;

impl ToolExecutor for IndexAdvisor {
    fn execute(&self, args: &ToolArgs, _ctx: &ToolContext<'_>) -> Result<ToolOutput, String> {
        let table = arg(args, "table", "the scanned tables");
        Ok(ToolOutput::text(format!(
            "Index advisor: add B-tree indexes on the filter and join columns of {table}; estimated scan cost drops by about 60%."
        )))
    }
}

struct QueryRewrite;

impl ToolExecutor for QueryRewrite {
    fn execute(&self, args: &ToolArgs, _ctx: &ToolContext<'_>) -> Result<ToolOutput, String> {
        let q = arg(args, "query", "the slowest template");
        Ok(ToolOutput::text(format!(
            "Query rewriter: {q} can be rewritten by pulling correlated subqueries up into joins and pushing predicates down."
        )))
    }
}

struct KnobAdvisor;

impl ToolExecutor for KnobAdvisor {
    fn execute(&self, args: &ToolArgs, _ctx: &ToolContext<'_>) -> Result<ToolOutput, String> {
        let knob = arg(args, "knob", "work_mem");
        Ok(ToolOutput::text(format!(
            "Knob advisor: review {knob}; the current value is below the recommended range for this workload."
        )))
    }
}

pub fn executors() -> HashMap<String, Arc<dyn ToolExecutor>> {
    let mut m: HashMap<String, Arc<dyn ToolExecutor>> = HashMap::new();
    m.insert("advisor.index".into(), Arc::new(IndexAdvisor));
    m.insert("advisor.query_rewrite".into(), Arc::new(QueryRewrite));
    m.insert("advisor.knob".into(), Arc::new(KnobAdvisor));
    m
}
