//! Tree-of-thought search state and UCT scoring.
//!
//! Node scores follow `w/n + C * sqrt(ln N / n)` where `w` accumulates
//! per-simulation rewards (1 when the simulation confirmed a new root cause),
//! `n` counts simulations through the node and `N` counts all simulations.
//! A node whose action could not be dispatched is pinned at `w = -1`.

use crate::gateway::ToolInvocation;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

fn default_c() -> f64 {
    std::f64::consts::SQRT_2
}
fn default_no_progress() -> u32 {
    5
}
fn default_max_nodes() -> u32 {
    30
}
fn default_max_children() -> u32 {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Exploration constant.
    #[serde(rename = "C", alias = "c", default = "default_c")]
    pub c: f64,
    /// Consecutive simulations without a new cause before stopping.
    #[serde(default = "default_no_progress")]
    pub no_progress_limit: u32,
    /// Expansion budget (nodes created below the root).
    #[serde(default = "default_max_nodes")]
    pub max_nodes: u32,
    /// A node with this many children is no longer expandable.
    #[serde(default = "default_max_children")]
    pub max_children: u32,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            c: default_c(),
            no_progress_limit: default_no_progress(),
            max_nodes: default_max_nodes(),
            max_children: default_max_children(),
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(format!("C must be a finite value >= 0, got {}", self.c));
        }
        if self.no_progress_limit == 0 || self.max_nodes == 0 || self.max_children == 0 {
            return Err("no_progress_limit, max_nodes and max_children must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub node_id: u64,
    pub parent: Option<u64>,
    pub action: Option<ToolInvocation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    pub observation: Option<String>,
    pub w: f64,
    pub n: u64,
    pub uct_override: Option<f64>,
    pub children: Vec<u64>,
    /// The action could not be dispatched; `w` stays at -1.
    #[serde(default)]
    pub failed: bool,
}

impl TreeNode {
    fn new(node_id: u64, parent: Option<u64>) -> Self {
        Self {
            node_id,
            parent,
            action: None,
            thought: None,
            observation: None,
            w: 0.0,
            n: 0,
            uct_override: None,
            children: Vec::new(),
            failed: false,
        }
    }
}

/// UCT of `v` given `big_n` total simulations. An override wins; an
/// unvisited node scores +inf so it is tried once.
pub fn uct(v: &TreeNode, big_n: u64, c: f64) -> f64 {
    if let Some(o) = v.uct_override {
        return o;
    }
    if v.n == 0 {
        return f64::INFINITY;
    }
    let n = v.n as f64;
    let ln_n = (big_n.max(1) as f64).ln();
    v.w / n + c * (ln_n / n).sqrt()
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TreeError {
    #[error("no expandable nodes")]
    NoExpandableNodes,
    #[error("unknown node {0}")]
    UnknownNode(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisTree {
    pub nodes: BTreeMap<u64, TreeNode>,
    /// Completed simulations.
    #[serde(rename = "N")]
    pub big_n: u64,
    pub root: u64,
    /// The diagnosis request the root stands for.
    pub request: String,
}

impl DiagnosisTree {
    pub fn new(request: impl Into<String>) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(0, TreeNode::new(0, None));
        Self {
            nodes,
            big_n: 0,
            root: 0,
            request: request.into(),
        }
    }

    pub fn node(&self, id: u64) -> Result<&TreeNode, TreeError> {
        self.nodes.get(&id).ok_or(TreeError::UnknownNode(id))
    }

    pub fn node_mut(&mut self, id: u64) -> Result<&mut TreeNode, TreeError> {
        self.nodes.get_mut(&id).ok_or(TreeError::UnknownNode(id))
    }

    /// Nodes created below the root.
    pub fn expansions(&self) -> u64 {
        self.nodes.len() as u64 - 1
    }

    pub fn last_id(&self) -> u64 {
        *self.nodes.keys().next_back().expect("root exists")
    }

    pub fn add_child(&mut self, parent: u64) -> Result<u64, TreeError> {
        let id = self.last_id() + 1;
        self.node_mut(parent)?.children.push(id);
        self.nodes.insert(id, TreeNode::new(id, Some(parent)));
        Ok(id)
    }

    pub fn mark_failed(&mut self, id: u64, reason: impl Into<String>) -> Result<(), TreeError> {
        let n = self.node_mut(id)?;
        n.failed = true;
        n.w = -1.0;
        n.observation = Some(reason.into());
        Ok(())
    }

    /// Node ids from the root down to `id`.
    pub fn path_to(&self, id: u64) -> Result<Vec<u64>, TreeError> {
        let mut path = vec![id];
        let mut cur = self.node(id)?;
        while let Some(p) = cur.parent {
            path.push(p);
            cur = self.node(p)?;
        }
        path.reverse();
        Ok(path)
    }

    pub fn uct_of(&self, id: u64, c: f64) -> Result<f64, TreeError> {
        Ok(uct(self.node(id)?, self.big_n, c))
    }

    /// True when some node's action names `metric` in its arguments.
    pub fn targets(&self, metric: &str) -> bool {
        self.nodes.values().filter_map(|n| n.action.as_ref()).any(|a| {
            a.arguments
                .values()
                .any(|v| v.as_str().is_some_and(|s| s == metric))
        })
    }

    /// Adds `reward` to every non-failed node on the path and bumps visit
    /// counts everywhere on it, then counts the simulation.
    pub fn backpropagate(&mut self, leaf: u64, reward: f64) -> Result<(), TreeError> {
        let reward = reward.clamp(0.0, 1.0);
        for id in self.path_to(leaf)? {
            let n = self.node_mut(id)?;
            n.n += 1;
            if !n.failed {
                n.w += reward;
            }
        }
        self.big_n += 1;
        Ok(())
    }

    /// A "not useful" verdict pins the node's score to its parent's current
    /// UCT; a later "useful" verdict lifts the pin. The root is never pinned.
    pub fn apply_reflection(&mut self, id: u64, useful: bool, c: f64) -> Result<(), TreeError> {
        let Some(parent) = self.node(id)?.parent else {
            return Ok(());
        };
        let pinned = if useful { None } else { Some(self.uct_of(parent, c)?) };
        self.node_mut(id)?.uct_override = pinned;
        Ok(())
    }

    /// Structural check used by property tests.
    pub fn check_consistency(&self) -> Result<(), String> {
        let root = self.node(self.root).map_err(|e| e.to_string())?;
        if root.parent.is_some() || root.action.is_some() {
            return Err("root has a parent or an action".into());
        }
        for (id, n) in &self.nodes {
            if n.node_id != *id {
                return Err(format!("node {id} stored under wrong key"));
            }
            if n.failed && n.w != -1.0 {
                return Err(format!("failed node {id} has w={}", n.w));
            }
            if let Some(p) = n.parent {
                let parent = self.node(p).map_err(|e| e.to_string())?;
                if !parent.children.contains(id) || p >= *id {
                    return Err(format!("node {id} and parent {p} disagree"));
                }
            }
            for c in &n.children {
                if self.node(*c).map_err(|e| e.to_string())?.parent != Some(*id) {
                    return Err(format!("child {c} of {id} points elsewhere"));
                }
            }
        }
        // Parents always have smaller ids, so every chain reaches the root.
        Ok(())
    }
}

fn abnormal_mention() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([a-z][a-z0-9]*(?:_[a-z0-9]+)+)\s+(?:is\s+)?abnormal\b").expect("valid regex"))
}

/// Snake-case metric names an observation reports as abnormal.
pub fn abnormal_metrics_in(observation: &str) -> BTreeSet<String> {
    abnormal_mention()
        .captures_iter(observation)
        .map(|c| c[1].to_string())
        .collect()
}

/// Next node to expand under. If the last observation surfaced an abnormal
/// metric no node has acted on yet, expansion happens under the newest node
/// (the one that produced that observation). Otherwise the expandable node
/// with the highest UCT wins, lowest id on ties.
pub fn select(tree: &DiagnosisTree, params: &SearchParams, last_observation: &str) -> Result<u64, TreeError> {
    let expandable = |n: &TreeNode| (n.children.len() as u32) < params.max_children;
    let newest = tree.node(tree.last_id())?;
    if expandable(newest) && abnormal_metrics_in(last_observation).iter().any(|m| !tree.targets(m)) {
        return Ok(newest.node_id);
    }
    let mut best: Option<(u64, f64)> = None;
    for n in tree.nodes.values().filter(|n| expandable(n)) {
        let s = uct(n, tree.big_n, params.c);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((n.node_id, s));
        }
    }
    best.map(|(id, _)| id).ok_or(TreeError::NoExpandableNodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::ToolArgs;

    fn act(metric: &str) -> ToolInvocation {
        let mut a = ToolArgs::new();
        a.insert("metric_name".into(), serde_json::json!(metric));
        ToolInvocation::new("is_abnormal_metric", a).unwrap()
    }

    #[test]
    fn formula_examples() {
        let mut v = TreeNode::new(1, Some(0));
        v.w = 1.0;
        v.n = 1;
        assert_eq!(uct(&v, 1, 0.0), 1.0);
        v.w = -1.0;
        assert_eq!(uct(&v, 1, 0.0), -1.0);
        v.w = 0.0;
        v.n = 2;
        assert!((uct(&v, 8, 1.0) - 1.019_666_990_168_809).abs() < 1e-12);
        v.n = 0;
        assert_eq!(uct(&v, 8, 1.0), f64::INFINITY);
        v.uct_override = Some(0.25);
        assert_eq!(uct(&v, 8, 1.0), 0.25);
    }

    #[test]
    fn fresh_tree_selects_root() {
        let t = DiagnosisTree::new("r");
        assert_eq!(select(&t, &SearchParams::default(), "").unwrap(), 0);
    }

    #[test]
    fn untargeted_abnormal_metric_mandates_expansion() {
        let mut t = DiagnosisTree::new("r");
        let a = t.add_child(0).unwrap();
        t.node_mut(a).unwrap().action = Some(act("cpu_usage"));
        t.backpropagate(a, 0.0).unwrap();
        let b = t.add_child(0).unwrap();
        t.backpropagate(b, 1.0).unwrap();
        // b has the better score, but a's sibling surfaced memory_usage.
        let p = SearchParams { c: 0.0, ..Default::default() };
        assert_eq!(select(&t, &p, "memory_usage abnormal: peak 0.93").unwrap(), b);
        assert_eq!(select(&t, &p, "cpu_usage is abnormal").unwrap(), b);
        assert_eq!(abnormal_metrics_in("The metric is abnormal"), BTreeSet::new());
        assert!(abnormal_metrics_in("memory_usage is not abnormal").is_empty());
    }

    #[test]
    fn backprop_accumulates_and_pins_failures() {
        let mut t = DiagnosisTree::new("r");
        let a = t.add_child(0).unwrap();
        t.backpropagate(a, 1.0).unwrap();
        t.backpropagate(a, 0.0).unwrap();
        assert_eq!((t.node(a).unwrap().w, t.node(a).unwrap().n), (1.0, 2));
        assert_eq!(t.big_n, 2);
        let f = t.add_child(a).unwrap();
        t.mark_failed(f, "unknown tool").unwrap();
        t.backpropagate(f, 1.0).unwrap();
        let fnode = t.node(f).unwrap();
        assert_eq!((fnode.w, fnode.n), (-1.0, 1));
        assert_eq!(t.node(a).unwrap().w, 2.0);
        t.check_consistency().unwrap();
    }

    #[test]
    fn reflection_pins_to_parent_then_clears() {
        let mut t = DiagnosisTree::new("r");
        let a = t.add_child(0).unwrap();
        t.backpropagate(a, 0.0).unwrap();
        let b = t.add_child(a).unwrap();
        t.backpropagate(b, 0.0).unwrap();
        let parent = t.uct_of(a, 1.0).unwrap();
        t.apply_reflection(b, false, 1.0).unwrap();
        assert_eq!(t.node(b).unwrap().uct_override, Some(parent));
        t.apply_reflection(b, true, 1.0).unwrap();
        assert_eq!(t.node(b).unwrap().uct_override, None);
        t.apply_reflection(0, false, 1.0).unwrap();
        assert_eq!(t.node(0).unwrap().uct_override, None);
    }

    #[test]
    fn full_nodes_are_not_expandable() {
        let mut t = DiagnosisTree::new("r");
        let p = SearchParams { max_children: 1, ..Default::default() };
        let a = t.add_child(0).unwrap();
        t.backpropagate(a, 0.0).unwrap();
        assert_eq!(select(&t, &p, "").unwrap(), a);
        let b = t.add_child(a).unwrap();
        t.backpropagate(b, 0.0).unwrap();
        assert_eq!(select(&t, &p, "").unwrap(), b);
        t.add_child(b).unwrap();
        // The newest node has no children yet and is unvisited.
        assert_eq!(select(&t, &p, "").unwrap(), 3);
    }

    #[test]
    fn no_expandable_nodes_is_an_error() {
        let mut t = DiagnosisTree::new("r");
        t.add_child(0).unwrap();
        let p = SearchParams { max_children: 1, ..Default::default() };
        let mut t2 = t.clone();
        t2.nodes.get_mut(&1).unwrap().children.push(99);
        t2.nodes.insert(99, TreeNode::new(99, Some(1)));
        t2.nodes.get_mut(&99).unwrap().children.push(100);
        t2.nodes.insert(100, TreeNode::new(100, Some(99)));
        t2.nodes.get_mut(&100).unwrap().children.push(0);
        // Deliberately malformed; only the selection rule is under test.
        assert_eq!(select(&t2, &p, ""), Err(TreeError::NoExpandableNodes));
    }
}
