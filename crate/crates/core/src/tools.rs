//! Tool specifications, the registry, and the executor box.
//!
//! The diagnosis engine never calls an observation or advisor function
//! directly. It names a tool, the box checks the name against the visible
//! registry and the arguments against the schema, then dispatches through the
//! spec's executor binding.

use crate::observability::{MetricSource, TimeWindow};
use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

pub type ToolArgs = BTreeMap<String, Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgType {
    String,
    Integer,
    Number,
    Boolean,
}

impl ArgType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            ArgType::String => v.is_string(),
            ArgType::Integer => v.is_i64() || v.is_u64(),
            ArgType::Number => v.is_number(),
            ArgType::Boolean => v.is_boolean(),
        }
    }

    pub fn json_name(self) -> &'static str {
        match self {
            ArgType::String => "string",
            ArgType::Integer => "integer",
            ArgType::Number => "number",
            ArgType::Boolean => "boolean",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArgSpec {
    #[serde(rename = "type")]
    pub ty: ArgType,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

/// Where a tool sits in the metric → activity → workload → solution ordering
/// used to lay out the tool list handed to the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    #[default]
    Metric,
    Activity,
    Workload,
    Solution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub args_schema: BTreeMap<String, ArgSpec>,
    pub executor_binding: String,
    #[serde(default)]
    pub stage: PipelineStage,
}

impl ToolSpec {
    /// Raw observation tools read metrics or statistics views. Everything
    /// else (advisors) is off limits to the metrics-only baseline.
    pub fn is_observation(&self) -> bool {
        self.executor_binding.starts_with("observability.")
    }

    /// Schema violations for `args`; empty means valid.
    pub fn validate_args(&self, args: &ToolArgs) -> Vec<String> {
        let mut out = Vec::new();
        for (name, spec) in &self.args_schema {
            match args.get(name) {
                None | Some(Value::Null) if spec.required => {
                    out.push(format!("missing required argument: {name}"))
                }
                Some(v) if !v.is_null() && !spec.ty.accepts(v) => out.push(format!(
                    "argument {name} must be of type {}",
                    spec.ty.json_name()
                )),
                _ => {}
            }
        }
        for name in args.keys() {
            if !self.args_schema.contains_key(name) {
                out.push(format!("unknown argument: {name}"));
            }
        }
        out
    }

    /// One-line rendering used in prompts.
    pub fn signature(&self) -> String {
        let args: Vec<String> = self
            .args_schema
            .iter()
            .map(|(n, a)| {
                let opt = if a.required { "" } else { "?" };
                format!("{n}{opt}: {}", a.ty.json_name())
            })
            .collect();
        format!("{}({}): {}", self.name, args.join(", "), self.description)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("duplicate tool name: {0}")]
    Duplicate(String),
    #[error("invalid tool spec {name}: {reason}")]
    Invalid { name: String, reason: String },
    #[error("tool {tool} is bound to unknown executor {binding}")]
    UnboundExecutor { tool: String, binding: String },
    #[error("cannot read tool registry {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Ordered set of tool specs with unique names.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolRegistry {
    specs: Vec<ToolSpec>,
}

impl ToolRegistry {
    pub fn new(specs: Vec<ToolSpec>) -> Result<Self, RegistryError> {
        let mut seen = std::collections::HashSet::new();
        for s in &specs {
            if s.name.trim().is_empty() || s.name.chars().any(char::is_whitespace) {
                return Err(RegistryError::Invalid {
                    name: s.name.clone(),
                    reason: "name must be a non-empty identifier".into(),
                });
            }
            if s.executor_binding.trim().is_empty() {
                return Err(RegistryError::Invalid {
                    name: s.name.clone(),
                    reason: "executor_binding is empty".into(),
                });
            }
            if !seen.insert(s.name.clone()) {
                return Err(RegistryError::Duplicate(s.name.clone()));
            }
        }
        Ok(Self { specs })
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let io = |reason: String| RegistryError::Io {
            path: path.display().to_string(),
            reason,
        };
        let raw = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let specs: Vec<ToolSpec> = serde_json::from_str(&raw).map_err(|e| io(e.to_string()))?;
        Self::new(specs)
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn specs(&self) -> &[ToolSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn filtered(&self, keep: impl Fn(&ToolSpec) -> bool) -> Self {
        Self {
            specs: self.specs.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }
}

/// Set of metric-name globs an agent is allowed to look at.
#[derive(Clone, Debug)]
pub struct MetricScope {
    patterns: Vec<String>,
    set: GlobSet,
}

impl MetricScope {
    pub fn new(patterns: &[String]) -> Result<Self, globset::Error> {
        let mut b = GlobSetBuilder::new();
        for p in patterns {
            b.add(Glob::new(p)?);
        }
        Ok(Self {
            patterns: patterns.to_vec(),
            set: b.build()?,
        })
    }

    pub fn allows(&self, metric: &str) -> bool {
        self.set.is_match(metric)
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }
}

pub struct ToolContext<'a> {
    pub window: TimeWindow,
    pub metric_scope: Option<&'a MetricScope>,
}

impl ToolContext<'_> {
    pub fn metric_allowed(&self, metric: &str) -> bool {
        self.metric_scope.is_none_or(|s| s.allows(metric))
    }
}

/// Peak of one metric as seen by a tool call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReading {
    pub metric: String,
    pub peak: f64,
    pub at: i64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ToolOutput {
    pub text: String,
    pub readings: Vec<MetricReading>,
    /// Metrics the tool found above threshold.
    pub abnormal: Vec<String>,
}

impl ToolOutput {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Default::default()
        }
    }
}

pub trait ToolExecutor: Send + Sync {
    fn execute(&self, args: &ToolArgs, ctx: &ToolContext<'_>) -> Result<ToolOutput, String>;
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ToolCallError {
    #[error("tool {0} is not available")]
    UnknownTool(String),
    #[error("invalid arguments for {tool}: {}", violations.join("; "))]
    InvalidArgs { tool: String, violations: Vec<String> },
    #[error("tool {tool} failed: {reason}")]
    Execution { tool: String, reason: String },
}

/// Registry plus executors. Clones share executors and the call counter, so
/// a restricted view still reports into the same tallies.
#[derive(Clone)]
pub struct ToolBox {
    registry: Arc<ToolRegistry>,
    executors: Arc<HashMap<String, Arc<dyn ToolExecutor>>>,
    calls: Arc<Mutex<BTreeMap<String, u64>>>,
}

impl std::fmt::Debug for ToolBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolBox")
            .field("tools", &self.registry.specs().iter().map(|s| &s.name).collect::<Vec<_>>())
            .finish()
    }
}

impl ToolBox {
    pub fn new(
        registry: ToolRegistry,
        executors: HashMap<String, Arc<dyn ToolExecutor>>,
    ) -> Result<Self, RegistryError> {
        for s in registry.specs() {
            if !executors.contains_key(&s.executor_binding) {
                return Err(RegistryError::UnboundExecutor {
                    tool: s.name.clone(),
                    binding: s.executor_binding.clone(),
                });
            }
        }
        Ok(Self {
            registry: Arc::new(registry),
            executors: Arc::new(executors),
            calls: Arc::new(Mutex::new(BTreeMap::new())),
        })
    }

    /// Box wired to the built-in observation tools over `source` and the mock
    /// advisors.
    pub fn standard(registry: ToolRegistry, source: Arc<MetricSource>) -> Result<Self, RegistryError> {
        let mut ex = crate::observability::tools::executors(source);
        ex.extend(crate::diagnosis::advisors::executors());
        Self::new(registry, ex)
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn restrict(&self, keep: impl Fn(&ToolSpec) -> bool) -> Self {
        Self {
            registry: Arc::new(self.registry.filtered(keep)),
            executors: self.executors.clone(),
            calls: self.calls.clone(),
        }
    }

    pub fn call(
        &self,
        name: &str,
        args: &ToolArgs,
        ctx: &ToolContext<'_>,
    ) -> Result<ToolOutput, ToolCallError> {
        let spec = self
            .registry
            .get(name)
            .ok_or_else(|| ToolCallError::UnknownTool(name.to_string()))?;
        let violations = spec.validate_args(args);
        if !violations.is_empty() {
            return Err(ToolCallError::InvalidArgs {
                tool: name.to_string(),
                violations,
            });
        }
        *self
            .calls
            .lock()
            .expect("tool counter poisoned")
            .entry(name.to_string())
            .or_default() += 1;
        let exec = &self.executors[&spec.executor_binding];
        exec.execute(args, ctx).map_err(|reason| ToolCallError::Execution {
            tool: name.to_string(),
            reason,
        })
    }

    /// Successful dispatches per tool name.
    pub fn call_counts(&self) -> BTreeMap<String, u64> {
        self.calls.lock().expect("tool counter poisoned").clone()
    }
}
